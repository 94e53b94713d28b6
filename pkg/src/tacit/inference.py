"""Task-time knowledge adaptation: decompose, retrieve, rewrite, inject.

Everything here fails open.  A decomposition that does not parse becomes
a single subtask (the raw task text); a rewrite that does not parse
passes the retrieved texts through unchanged; with an empty knowledge
base not a single model call is made and the agent sees exactly the
plain task instruction.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from tacit.embeddings import Embedder
from tacit.errors import NoJsonFoundError
from tacit.gateway import (
    KB_ROLE,
    GenerationParams,
    ImageAttachment,
    Message,
    ModelGateway,
)
from tacit.jsonx import extract_last_json_array, extract_last_json_object
from tacit.prompts import render_template
from tacit.retrieval import BankIndex, ScoredMatch
from tacit.runtime import TaskInstance
from tacit.store.bank import ExperienceBank
from tacit.store.skills import SkillDocument, render_skill

logger = logging.getLogger(__name__)

# Assembled injection blocks each end with this line; when blocks are
# chained, only the last keeps it.
INSTRUCTION_MARKER = "Your instruction is following:"

MAX_SUBTASKS = 3


@dataclass(frozen=True)
class Subtask:
    type: str
    query: str


@dataclass(frozen=True)
class AugmentedPrompt:
    user_text: str
    system_text: Optional[str] = None


@dataclass(frozen=True)
class UsageHistory:
    """What knowledge a task actually received, fed back to the critique."""

    task_id: str
    retrieved_ids: Tuple[str, ...]
    adapted_skill_text: str


@dataclass
class AdaptationSettings:
    top_k: int = 3
    tau_min: float = 0.0
    decomposition_params: GenerationParams = GenerationParams(temperature=0.3, top_p=1.0, max_tokens=2048)
    rewrite_params: GenerationParams = GenerationParams(temperature=0.3, top_p=1.0, max_tokens=8192)
    skill_adapt_params: GenerationParams = GenerationParams(temperature=0.3, top_p=1.0, max_tokens=8192)


def task_attachments(task: TaskInstance) -> Tuple[ImageAttachment, ...]:
    out: List[ImageAttachment] = []
    for i, data in enumerate(task.images, start=1):
        name = "original_image" if i == 1 else f"original_image_{i}"
        out.append(ImageAttachment(name=name, data=data))
    return tuple(out)


def experience_bullets(pairs: Sequence[Tuple[str, str]]) -> str:
    return "\n".join(f"[{entry_id}] {text}" for entry_id, text in pairs)


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def decompose_task(
    task: TaskInstance,
    gateway: ModelGateway,
    settings: AdaptationSettings,
) -> List[Subtask]:
    """2-3 retrieval subtasks; falls back to the task text as one subtask."""
    prompt = render_template("task_decomposition", {"task_description": task.query})
    message = Message(role="user", content=prompt, images=task_attachments(task))
    completion = gateway.complete(
        KB_ROLE, [message], settings.decomposition_params, tag="task_decomposition"
    )
    fallback = [Subtask(type="general", query=task.query)]
    try:
        items = extract_last_json_array(completion.text)
    except NoJsonFoundError:
        logger.warning("task %s: decomposition had no JSON array; using task text", task.task_id)
        return fallback
    subtasks: List[Subtask] = []
    for item in items:
        if not isinstance(item, dict):
            continue
        query = item.get("query")
        if not isinstance(query, str) or not query.strip():
            continue
        kind = item.get("type")
        subtasks.append(Subtask(type=str(kind) if kind else "general", query=query.strip()))
        if len(subtasks) == MAX_SUBTASKS:
            break
    return subtasks or fallback


def retrieve_for_task(
    subtasks: Sequence[Subtask],
    index: BankIndex,
    embedder: Embedder,
    settings: AdaptationSettings,
) -> List[ScoredMatch]:
    """Union of per-subtask matches, best score first, ties on id."""
    if len(index) == 0:
        return []
    queries = [embedder.embed(s.query) for s in subtasks]
    return index.union_retrieve(queries, k=settings.top_k, tau_min=settings.tau_min)


def rewrite_experiences(
    task: TaskInstance,
    matches: Sequence[ScoredMatch],
    bank: ExperienceBank,
    gateway: ModelGateway,
    settings: AdaptationSettings,
) -> List[Tuple[str, str]]:
    """(id, text) pairs to inject; rewritten for the task where possible."""
    if not matches:
        return []
    originals = [(m.entry_id, bank.get(m.entry_id).text) for m in matches]
    prompt = render_template(
        "experience_rewrite",
        {"task_description": task.query, "experiences_text": experience_bullets(originals)},
    )
    message = Message(role="user", content=prompt, images=task_attachments(task))
    completion = gateway.complete(KB_ROLE, [message], settings.rewrite_params, tag="experience_rewrite")
    try:
        mapping = extract_last_json_object(completion.text)
    except NoJsonFoundError:
        logger.warning("task %s: rewrite had no JSON object; keeping originals", task.task_id)
        return originals
    known = {entry_id for entry_id, _ in originals}
    for unknown in set(mapping) - known:
        logger.warning("task %s: rewrite invented id %s; ignoring it", task.task_id, unknown)
    rewritten: List[Tuple[str, str]] = []
    for entry_id, original_text in originals:
        value = mapping.get(entry_id)
        if isinstance(value, str) and value.strip():
            rewritten.append((entry_id, value.strip()))
        # an id the rewrite left out was judged irrelevant: drop it
    return rewritten


def adapt_skill(
    task: TaskInstance,
    skill: Optional[SkillDocument],
    injected: Sequence[Tuple[str, str]],
    gateway: ModelGateway,
    settings: AdaptationSettings,
) -> str:
    """Task-tailored skill text (no frontmatter); empty when no skill exists."""
    if skill is None:
        return ""
    experiences_text = experience_bullets(injected) if injected else "(none)"
    prompt = render_template(
        "adapt_skill",
        {
            "base_skill": render_skill(skill),
            "experiences": experiences_text,
            "task": task.query,
        },
    )
    message = Message(role="user", content=prompt, images=task_attachments(task))
    completion = gateway.complete(KB_ROLE, [message], settings.skill_adapt_params, tag="adapt_skill")
    adapted = completion.text.strip()
    if not adapted or adapted.startswith("---"):
        # the model ignored the no-frontmatter instruction (or said nothing);
        # fall back to the unadapted skill body
        logger.warning("task %s: unusable skill adaptation; using raw skill body", task.task_id)
        return skill.body_text()
    return adapted


def build_augmented_prompt(
    instruction: str,
    adapted_skill: str,
    injected: Sequence[Tuple[str, str]],
) -> AugmentedPrompt:
    """Assemble the user message: skill block, experience block, instruction."""
    blocks: List[str] = []
    if adapted_skill:
        blocks.append(render_template("skill_injection_header", {"skill_content": adapted_skill}))
    if injected:
        blocks.append(
            render_template("experience_injection_header", {"bullets": experience_bullets(injected)})
        )
    if not blocks:
        return AugmentedPrompt(user_text=instruction)
    head = ""
    for block in blocks[:-1]:
        assert block.endswith(INSTRUCTION_MARKER)
        head += block[: -len(INSTRUCTION_MARKER)]
    return AugmentedPrompt(user_text=head + blocks[-1] + "\n" + instruction)


def record_usage(
    task: TaskInstance,
    matches: Sequence[ScoredMatch],
    adapted_skill: str,
) -> UsageHistory:
    return UsageHistory(
        task_id=task.task_id,
        retrieved_ids=tuple(m.entry_id for m in matches),
        adapted_skill_text=adapted_skill,
    )


def adapted_skill_sha256(adapted_skill: str) -> str:
    return hashlib.sha256(adapted_skill.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# The whole phase, in one call
# ---------------------------------------------------------------------------

@dataclass
class TaskKnowledge:
    prompt: AugmentedPrompt
    usage: UsageHistory
    matches: List[ScoredMatch]
    injected: List[Tuple[str, str]]


def prepare_task_knowledge(
    task: TaskInstance,
    bank: ExperienceBank,
    skill: Optional[SkillDocument],
    index: BankIndex,
    embedder: Embedder,
    gateway: ModelGateway,
    settings: Optional[AdaptationSettings] = None,
) -> TaskKnowledge:
    """Run the full adaptation phase for one task.

    With an empty knowledge base this makes zero model calls and returns
    the plain instruction, byte-identical to a build without knowledge.
    """
    settings = settings or AdaptationSettings()
    empty = UsageHistory(task_id=task.task_id, retrieved_ids=(), adapted_skill_text="")
    if len(bank) == 0 and skill is None:
        return TaskKnowledge(
            prompt=AugmentedPrompt(user_text=task.query), usage=empty, matches=[], injected=[]
        )

    matches: List[ScoredMatch] = []
    injected: List[Tuple[str, str]] = []
    if len(bank) > 0:
        subtasks = decompose_task(task, gateway, settings)
        matches = retrieve_for_task(subtasks, index, embedder, settings)
        injected = rewrite_experiences(task, matches, bank, gateway, settings)
    adapted = adapt_skill(task, skill, injected, gateway, settings)
    prompt = build_augmented_prompt(task.query, adapted, injected)
    return TaskKnowledge(
        prompt=prompt,
        usage=record_usage(task, matches, adapted),
        matches=matches,
        injected=injected,
    )
