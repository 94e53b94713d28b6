"""Build live engine objects from a validated RunConfig.

The config stays declarative; this module is the one place that decides
which concrete backend, provider, or kernel each setting means.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Callable, List, Optional

from tacit.accumulate import AccumulationSettings
from tacit.config import ModelSection, RunConfig
from tacit.embeddings import (
    Embedder,
    HashingEmbeddingBackend,
    HttpEmbeddingBackend,
    ScriptedEmbeddingBackend,
)
from tacit.errors import ConfigError, MissingRequiredError
from tacit.evaluation import Grader, get_grader
from tacit.gateway import (
    GenerationParams,
    ModelGateway,
    HttpChatBackend,
    ScriptedChatBackend,
    ScriptedReply,
    ToolCall,
)
from tacit.inference import AdaptationSettings
from tacit.runtime import RuntimeConfig
from tacit.tools.interpreter import StubKernelClient, SubprocessKernelClient
from tacit.tools.registry import ImageRegistry, ToolSession
from tacit.tools.search import HttpSearchProvider, StubSearchProvider
from tacit.tools.visit import HttpVisitProvider, StubVisitProvider


def _env_key(name: str) -> Optional[str]:
    if not name:
        return None
    value = os.environ.get(name)
    if not value:
        raise MissingRequiredError(f"environment variable {name}")
    return value


def load_script_replies(path: Path) -> List[ScriptedReply]:
    """Script file: a JSON list of reply objects.

    Each object: {"text": str, "tool_calls": [{"name", "arguments"}, ...],
    "expect_tag": str?, "expect_contains": str?}.
    """
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load script {path}: {exc}") from exc
    if not isinstance(data, list):
        raise ConfigError(f"script {path} must be a JSON list")
    replies: List[ScriptedReply] = []
    for i, obj in enumerate(data):
        if not isinstance(obj, dict):
            raise ConfigError(f"script {path}[{i}] must be an object")
        calls = tuple(
            ToolCall(name=c["name"], arguments=dict(c.get("arguments", {})))
            for c in obj.get("tool_calls", ())
        )
        replies.append(
            ScriptedReply(
                text=obj.get("text", ""),
                tool_calls=calls,
                expect_tag=obj.get("expect_tag"),
                expect_contains=obj.get("expect_contains"),
            )
        )
    return replies


def build_chat_backend(section: ModelSection, role: str):
    if section.provider == "scripted":
        if not section.script:
            # Legal: a role that is never called (e.g. kb during --no-knowledge).
            return ScriptedChatBackend([])
        return ScriptedChatBackend(load_script_replies(Path(section.script)))
    if section.provider == "openai-compat":
        if not section.model:
            raise MissingRequiredError(f"models.{role}.model")
        if not section.base_url:
            raise MissingRequiredError(f"models.{role}.base_url")
        return HttpChatBackend(
            model=section.model,
            base_url=section.base_url,
            api_key=_env_key(section.api_key_env),
        )
    raise ConfigError(f"unknown model provider {section.provider!r}")


def build_gateway(config: RunConfig) -> ModelGateway:
    return ModelGateway(
        exec_backend=build_chat_backend(config.models.exec, "exec"),
        kb_backend=build_chat_backend(config.models.kb, "kb"),
    )


def build_embedder(config: RunConfig) -> Embedder:
    section = config.embedding
    if section.provider == "hashing":
        return Embedder(HashingEmbeddingBackend(dim=section.dim))
    if section.provider == "scripted":
        if not section.script:
            raise MissingRequiredError("embedding.script")
        try:
            table = json.loads(Path(section.script).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load embedding script: {exc}") from exc
        return Embedder(ScriptedEmbeddingBackend(table))
    if section.provider == "http":
        if not section.base_url:
            raise MissingRequiredError("embedding.base_url")
        return Embedder(
            HttpEmbeddingBackend(
                model_id=section.model,
                base_url=section.base_url,
                api_key=_env_key(section.api_key_env),
            )
        )
    raise ConfigError(f"unknown embedding provider {section.provider!r}")


def build_session_factory(config: RunConfig) -> Callable[[], ToolSession]:
    """Each call builds a fresh session: own registry, own kernel."""
    tools = config.tools
    enabled = list(tools.enabled)

    def factory() -> ToolSession:
        search = image_search = None
        if tools.search_provider == "http":
            search = HttpSearchProvider(
                tools.search_base_url, tools.search_api_key_env or None
            )
            image_search = search
        else:
            stub = StubSearchProvider()
            search, image_search = stub, stub
        visit = HttpVisitProvider() if tools.visit_provider == "http" else StubVisitProvider()
        if tools.kernel.kind == "subprocess":
            if not tools.kernel.argv:
                raise MissingRequiredError("tools.kernel.argv")
            kernel = SubprocessKernelClient(tools.kernel.argv)
        else:
            kernel = StubKernelClient()
        return ToolSession(
            registry=ImageRegistry(max_images=config.params.max_images),
            search=search if "web_search" in enabled else None,
            image_search=image_search if "image_search" in enabled else None,
            visit=visit if "visit" in enabled else None,
            kernel=kernel if "code_interpreter" in enabled else None,
            enabled=enabled,
        )

    return factory


def runtime_config_from(config: RunConfig) -> RuntimeConfig:
    p = config.params
    return RuntimeConfig(
        params=GenerationParams(
            temperature=p.temperature, top_p=p.top_p, max_tokens=p.max_tokens_per_turn
        ),
        max_turns=p.max_turns,
        concurrency=config.run.concurrency,
    )


def adaptation_settings_from(config: RunConfig) -> AdaptationSettings:
    p = config.params
    return AdaptationSettings(
        top_k=p.retrieval_top_k,
        tau_min=p.min_similarity,
        decomposition_params=GenerationParams(
            temperature=p.decomposition_temperature,
            top_p=1.0,
            max_tokens=p.decomposition_max_tokens,
        ),
        rewrite_params=GenerationParams(
            temperature=p.rewrite_temperature, top_p=1.0, max_tokens=p.rewrite_max_tokens
        ),
        skill_adapt_params=GenerationParams(
            temperature=p.skill_adapt_temperature,
            top_p=1.0,
            max_tokens=p.skill_adapt_max_tokens,
        ),
    )


def accumulation_settings_from(config: RunConfig) -> AccumulationSettings:
    p = config.params
    return AccumulationSettings(
        rollouts=p.rollouts,
        summary_params=GenerationParams(
            temperature=p.summary_temperature, top_p=1.0, max_tokens=p.summary_max_tokens
        ),
        critique_params=GenerationParams(
            temperature=p.critique_temperature, top_p=1.0, max_tokens=p.critique_max_tokens
        ),
        max_ops=p.max_ops_per_sample,
        theta_sim=p.merge_threshold,
        max_entries=p.max_experience_items,
        max_skill_words=p.max_skill_words,
        adaptation=adaptation_settings_from(config),
    )


def build_grader(config: RunConfig, gateway: Optional[ModelGateway]) -> Grader:
    return get_grader(config.run.grader, gateway)
