"""Declarative run configuration.

One YAML file drives a run. Every knob has a default, so an empty file
is a valid config; unknown keys are rejected rather than ignored (a
typo must not silently fall back to a default). Secrets never live in
the file -- providers name the environment variable that holds the key.
"""

from __future__ import annotations

import dataclasses
import hashlib
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import yaml

from tacit.errors import (
    ConfigError,
    ConfigTypeError,
    MissingRequiredError,
    UnknownKeyError,
)

MODEL_PROVIDERS = ("openai-compat", "scripted")
EMBEDDING_PROVIDERS = ("http", "hashing", "scripted")
SEARCH_PROVIDERS = ("stub", "http")
KERNEL_KINDS = ("stub", "subprocess")
GRADERS = ("exact_normalized", "containment", "model_judge")
TOOL_NAMES = ("web_search", "image_search", "visit", "code_interpreter")


@dataclass
class RunSection:
    output_dir: str = "runs"
    namespace: str = "default"
    concurrency: int = 1
    grader: str = "exact_normalized"


@dataclass
class DatasetSection:
    path: str = ""
    train_count: int = 0
    test_count: int = 0
    split_seed: int = 42


@dataclass
class ModelSection:
    provider: str = "scripted"
    model: str = ""
    base_url: str = ""
    api_key_env: str = ""
    script: str = ""  # path to a JSON list of scripted replies


@dataclass
class ModelsSection:
    exec: ModelSection = field(default_factory=ModelSection)
    kb: ModelSection = field(default_factory=ModelSection)


@dataclass
class EmbeddingSection:
    provider: str = "hashing"
    model: str = "text-embedding-3-small"
    dim: int = 32
    base_url: str = ""
    api_key_env: str = ""
    script: str = ""  # path to a JSON mapping text -> vector


@dataclass
class KernelSection:
    kind: str = "stub"
    argv: List[str] = field(default_factory=list)


@dataclass
class ToolsSection:
    enabled: List[str] = field(default_factory=lambda: list(TOOL_NAMES))
    search_provider: str = "stub"
    search_base_url: str = ""
    search_api_key_env: str = ""
    visit_provider: str = "stub"
    kernel: KernelSection = field(default_factory=KernelSection)


@dataclass
class ParamsSection:
    # agent loop
    temperature: float = 0.6
    top_p: float = 1.0
    max_tokens_per_turn: int = 8192
    max_turns: int = 20
    max_images: int = 100
    rollouts: int = 4
    # trajectory summarization
    summary_temperature: float = 0.6
    summary_max_tokens: int = 12288
    image_summary_max_tokens: int = 2048
    # critique and experience library
    critique_temperature: float = 0.6
    critique_max_tokens: int = 12288
    max_experience_words: int = 64
    max_ops_per_sample: int = 4
    merge_threshold: float = 0.70
    max_experience_items: int = 120
    max_skill_words: int = 1000
    # retrieval and adaptation
    decomposition_temperature: float = 0.3
    decomposition_max_tokens: int = 2048
    retrieval_top_k: int = 3
    min_similarity: float = 0.0
    rewrite_temperature: float = 0.3
    rewrite_max_tokens: int = 8192
    skill_adapt_temperature: float = 0.3
    skill_adapt_max_tokens: int = 8192


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    models: ModelsSection = field(default_factory=ModelsSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    tools: ToolsSection = field(default_factory=ToolsSection)
    params: ParamsSection = field(default_factory=ParamsSection)


# ---------------------------------------------------------------------------
# Parsing and validation
# ---------------------------------------------------------------------------

def _assign(section: object, data: dict, prefix: str) -> None:
    """Copy a mapping onto a dataclass, recursing into nested sections."""
    known = {f.name: f for f in fields(section)}  # type: ignore[arg-type]
    for key, value in data.items():
        if key not in known:
            raise UnknownKeyError(f"{prefix}{key}")
        current = getattr(section, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigTypeError(f"{prefix}{key}", "expected a mapping")
            _assign(current, value, f"{prefix}{key}.")
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigTypeError(f"{prefix}{key}", "expected a boolean")
            setattr(section, key, value)
        elif isinstance(current, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigTypeError(f"{prefix}{key}", "expected an integer")
            setattr(section, key, value)
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigTypeError(f"{prefix}{key}", "expected a number")
            setattr(section, key, float(value))
        elif isinstance(current, str):
            if not isinstance(value, str):
                raise ConfigTypeError(f"{prefix}{key}", "expected a string")
            setattr(section, key, value)
        elif isinstance(current, list):
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise ConfigTypeError(f"{prefix}{key}", "expected a list of strings")
            setattr(section, key, list(value))
        else:  # pragma: no cover - no other field kinds exist
            raise ConfigTypeError(f"{prefix}{key}", "unsupported field type")


def _check_range(config: RunConfig) -> None:
    p = config.params

    def positive(key: str, value: int) -> None:
        if value < 1:
            raise ConfigTypeError(key, "must be >= 1")

    def temp(key: str, value: float) -> None:
        if not 0.0 <= value <= 2.0:
            raise ConfigTypeError(key, "must be in [0, 2]")

    def cosine_bound(key: str, value: float) -> None:
        if not -1.0 <= value <= 1.0:
            raise ConfigTypeError(key, "must be in [-1, 1]")

    temp("params.temperature", p.temperature)
    temp("params.summary_temperature", p.summary_temperature)
    temp("params.critique_temperature", p.critique_temperature)
    temp("params.decomposition_temperature", p.decomposition_temperature)
    temp("params.rewrite_temperature", p.rewrite_temperature)
    temp("params.skill_adapt_temperature", p.skill_adapt_temperature)
    if not 0.0 < p.top_p <= 1.0:
        raise ConfigTypeError("params.top_p", "must be in (0, 1]")
    for key, value in (
        ("params.max_tokens_per_turn", p.max_tokens_per_turn),
        ("params.max_turns", p.max_turns),
        ("params.max_images", p.max_images),
        ("params.rollouts", p.rollouts),
        ("params.summary_max_tokens", p.summary_max_tokens),
        ("params.image_summary_max_tokens", p.image_summary_max_tokens),
        ("params.critique_max_tokens", p.critique_max_tokens),
        ("params.max_experience_words", p.max_experience_words),
        ("params.max_ops_per_sample", p.max_ops_per_sample),
        ("params.max_experience_items", p.max_experience_items),
        ("params.max_skill_words", p.max_skill_words),
        ("params.decomposition_max_tokens", p.decomposition_max_tokens),
        ("params.retrieval_top_k", p.retrieval_top_k),
        ("params.rewrite_max_tokens", p.rewrite_max_tokens),
        ("params.skill_adapt_max_tokens", p.skill_adapt_max_tokens),
        ("run.concurrency", config.run.concurrency),
        ("embedding.dim", config.embedding.dim),
    ):
        positive(key, value)
    cosine_bound("params.merge_threshold", p.merge_threshold)
    cosine_bound("params.min_similarity", p.min_similarity)
    if config.dataset.train_count < 0 or config.dataset.test_count < 0:
        raise ConfigTypeError("dataset.train_count", "split counts must be >= 0")

    def member(key: str, value: str, allowed: Tuple[str, ...]) -> None:
        if value not in allowed:
            raise ConfigTypeError(key, f"must be one of {', '.join(allowed)}")

    member("run.grader", config.run.grader, GRADERS)
    member("models.exec.provider", config.models.exec.provider, MODEL_PROVIDERS)
    member("models.kb.provider", config.models.kb.provider, MODEL_PROVIDERS)
    member("embedding.provider", config.embedding.provider, EMBEDDING_PROVIDERS)
    member("tools.search_provider", config.tools.search_provider, SEARCH_PROVIDERS)
    member("tools.visit_provider", config.tools.visit_provider, SEARCH_PROVIDERS)
    member("tools.kernel.kind", config.tools.kernel.kind, KERNEL_KINDS)
    for name in config.tools.enabled:
        if name not in TOOL_NAMES:
            raise ConfigTypeError("tools.enabled", f"unknown tool {name!r}")


def parse_config(data: Optional[dict]) -> RunConfig:
    config = RunConfig()
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigTypeError("<root>", "config must be a mapping")
    _assign(config, data, "")
    _check_range(config)
    return config


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad YAML in {path}: {exc}") from exc
    return parse_config(data)


# ---------------------------------------------------------------------------
# Effective-config echo and run ids
# ---------------------------------------------------------------------------

def to_plain_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)


def effective_yaml(config: RunConfig) -> str:
    return yaml.safe_dump(to_plain_dict(config), sort_keys=True, default_flow_style=False)


def make_run_id(config: RunConfig, now: Optional[time.struct_time] = None) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S", now if now is not None else time.localtime())
    digest = hashlib.sha256(effective_yaml(config).encode("utf-8")).hexdigest()[:8]
    return f"{stamp}-{digest}"


def require(value: str, key: str) -> str:
    if not value:
        raise MissingRequiredError(key)
    return value
