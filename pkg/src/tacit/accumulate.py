"""Turning multi-rollout trajectories into durable knowledge.

For every training task:

1. the current knowledge base is adapted and injected (same path the
   test split uses), so accumulation sees realistic usage;
2. N rollouts run against the toolset;
3. each rollout is summarized; successful rollouts also yield a
   candidate skill document;
4. one critique over all summaries proposes experience add/modify ops;
5. ops are consolidated into the bank (similarity merging), fragments
   fold into the global skill, and cap/length maintenance runs.

A failure inside one task is logged and skipped; the run continues with
the knowledge gathered so far.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from tacit.consolidate import (
    ConsolidationReport,
    PruneReport,
    SkillMergeReport,
    SkillRefineReport,
    consolidate_experience_op,
    extract_skill_fragment,
    merge_skill,
    prune_bank,
    refine_skill,
)
from tacit.embeddings import Embedder
from tacit.errors import (
    MalformedFragmentError,
    MalformedVersionError,
    MissingFrontmatterError,
    NoJsonFoundError,
)
from tacit.evaluation import Grader, grade_exact_normalized
from tacit.gateway import (
    KB_ROLE,
    GenerationParams,
    ImageAttachment,
    Message,
    ModelGateway,
)
from tacit.inference import (
    AdaptationSettings,
    TaskKnowledge,
    experience_bullets,
    prepare_task_knowledge,
)
from tacit.jsonx import extract_last_json_array
from tacit.prompts import render_template
from tacit.retrieval import BankIndex
from tacit.runtime import RuntimeConfig, TaskInstance, Trajectory, run_rollouts
from tacit.store.bank import ExperienceBank, KnowledgeOp, validate_experience
from tacit.store.skills import SkillDocument, render_skill
from tacit.tools.registry import ToolSession

logger = logging.getLogger(__name__)

_CITATION_RE = re.compile(r"\[(E\d+)\]")


# ---------------------------------------------------------------------------
# Trajectory serialization
# ---------------------------------------------------------------------------

def serialize_trajectory(
    task: TaskInstance, trajectory: Trajectory, adapted_skill: str = ""
) -> str:
    """Flatten a rollout into the text the knowledge model reads.

    Attached images travel separately; the text carries their names so
    the model can connect the two.
    """
    lines: List[str] = [f"Task: {task.query}", f"Reference answer: {task.ground_truth}"]
    if adapted_skill:
        lines += ["", "Skill guidance shown to the agent:", adapted_skill]
    for turn in trajectory.turns:
        lines += ["", f"--- Turn {turn.index} ---"]
        if turn.assistant_text:
            lines += ["Assistant:", turn.assistant_text]
        if turn.tool_call is not None:
            arguments = json.dumps(
                turn.tool_call.arguments, sort_keys=True, ensure_ascii=False
            )
            lines.append(f"Tool call: {turn.tool_call.name}({arguments})")
        if turn.observation is not None:
            lines += ["Observation:", turn.observation]
        if turn.images_produced:
            lines.append("Images produced: " + ", ".join(turn.images_produced))
    lines += ["", f"Final answer: {trajectory.final_answer or '(none)'}"]
    lines.append(f"Termination: {trajectory.terminated_reason}")
    return "\n".join(lines)


def cited_experience_ids(trajectory: Trajectory) -> Tuple[str, ...]:
    """Experience ids the agent referenced, e.g. "[E12]", in cited order."""
    seen: List[str] = []
    for turn in trajectory.turns:
        for cited in _CITATION_RE.findall(turn.assistant_text):
            if cited not in seen:
                seen.append(cited)
    return tuple(seen)


def trajectory_attachments(trajectory: Trajectory) -> Tuple[ImageAttachment, ...]:
    return tuple(
        ImageAttachment(name=name, data=data)
        for name, data in trajectory.images_by_name.items()
    )


# ---------------------------------------------------------------------------
# Summaries, fragments, critique
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySummary:
    task_id: str
    rollout_index: int
    summary_text: str
    cited_experience_ids: Tuple[str, ...] = ()


@dataclass
class AccumulationSettings:
    rollouts: int = 4
    summary_params: GenerationParams = GenerationParams(
        temperature=0.6, top_p=1.0, max_tokens=12288
    )
    critique_params: GenerationParams = GenerationParams(
        temperature=0.6, top_p=1.0, max_tokens=12288
    )
    max_ops: int = 4
    theta_sim: float = 0.70
    max_entries: int = 120
    max_skill_words: int = 1000
    adaptation: AdaptationSettings = field(default_factory=AdaptationSettings)


def summarize_rollout(
    task: TaskInstance,
    trajectory: Trajectory,
    gateway: ModelGateway,
    settings: AccumulationSettings,
    adapted_skill: str = "",
) -> TrajectorySummary:
    prompt = render_template(
        "rollout_summary",
        {"trajectory": serialize_trajectory(task, trajectory, adapted_skill)},
    )
    completion = gateway.complete(
        KB_ROLE,
        [Message(role="user", content=prompt, images=trajectory_attachments(trajectory))],
        settings.summary_params,
        tag="rollout_summary",
    )
    return TrajectorySummary(
        task_id=task.task_id,
        rollout_index=trajectory.rollout,
        summary_text=completion.text.strip(),
        cited_experience_ids=cited_experience_ids(trajectory),
    )


def generate_skill_fragment(
    task: TaskInstance,
    trajectory: Trajectory,
    gateway: ModelGateway,
    settings: AccumulationSettings,
    adapted_skill: str = "",
) -> Optional[SkillDocument]:
    """Distill one successful rollout into a candidate skill document.

    An unusable completion is dropped with a warning -- fragments are
    opportunistic, not load-bearing.
    """
    prompt = render_template(
        "generate_raw_skill",
        {
            "trajectory": serialize_trajectory(task, trajectory, adapted_skill),
            "ground_truth": task.ground_truth,
        },
    )
    completion = gateway.complete(
        KB_ROLE,
        [Message(role="user", content=prompt, images=trajectory_attachments(trajectory))],
        settings.summary_params,
        tag="generate_raw_skill",
    )
    try:
        return extract_skill_fragment(completion.text)
    except (MalformedFragmentError, MissingFrontmatterError, MalformedVersionError) as exc:
        logger.warning(
            "task %s rollout %d: fragment rejected (%s)",
            task.task_id,
            trajectory.rollout,
            exc,
        )
        return None


def _format_summaries(summaries: Sequence[TrajectorySummary]) -> str:
    blocks = [
        f"### Rollout {s.rollout_index}\n\n{s.summary_text}" for s in summaries
    ]
    return "\n\n".join(blocks)


def critique_rollouts(
    task: TaskInstance,
    summaries: Sequence[TrajectorySummary],
    experiences_used: Sequence[Tuple[str, str]],
    gateway: ModelGateway,
    settings: AccumulationSettings,
    word_limit: int = 64,
) -> List[KnowledgeOp]:
    """One contrastive pass over all rollout summaries -> add/modify ops.

    Raises NoJsonFoundError when the completion carries no ops array;
    the orchestrator treats that as "no update this task".
    """
    prompt = render_template(
        "cross_rollout_critique",
        {
            "max_ops": settings.max_ops,
            "question": task.query,
            "summaries": _format_summaries(summaries),
            "experiences": experience_bullets(experiences_used) or "(none)",
            "groundtruth": task.ground_truth,
        },
    )
    completion = gateway.complete(
        KB_ROLE,
        [Message(role="user", content=prompt)],
        settings.critique_params,
        tag="cross_rollout_critique",
    )
    ops: List[KnowledgeOp] = []
    for item in extract_last_json_array(completion.text):
        if not isinstance(item, dict):
            continue
        option = item.get("option")
        text = item.get("experience")
        if not isinstance(text, str):
            logger.warning("critique op without experience text dropped: %r", item)
            continue
        result = validate_experience(text, word_limit)
        if not result.ok:
            logger.warning(
                "critique op dropped (%s, %d words): %.60r",
                result.status,
                result.word_count,
                text,
            )
            continue
        if option == "add":
            ops.append(KnowledgeOp(kind="add", text=text))
        elif option == "modify":
            target = item.get("modified_from")
            if not isinstance(target, str) or not target:
                logger.warning("modify op without modified_from dropped")
                continue
            ops.append(KnowledgeOp(kind="modify", text=text, modified_from=target))
        else:
            logger.warning("critique op with option %r dropped", option)
    return ops[: settings.max_ops]


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

@dataclass
class TaskOutcome:
    """Everything Phase I produced for one training task."""

    task: TaskInstance
    knowledge: Optional[TaskKnowledge] = None
    trajectories: List[Trajectory] = field(default_factory=list)
    successes: List[bool] = field(default_factory=list)
    summaries: List[TrajectorySummary] = field(default_factory=list)
    fragments: List[SkillDocument] = field(default_factory=list)
    ops: List[KnowledgeOp] = field(default_factory=list)
    consolidations: List[ConsolidationReport] = field(default_factory=list)
    skill_merge: Optional[SkillMergeReport] = None
    prune: Optional[PruneReport] = None
    refine: Optional[SkillRefineReport] = None
    error: Optional[str] = None


@dataclass
class AccumulationResult:
    bank: ExperienceBank
    skill: Optional[SkillDocument]
    index: BankIndex
    outcomes: List[TaskOutcome] = field(default_factory=list)


class ArtifactSink:
    """No-op artifact hooks; RunWriter-backed runs override these."""

    def on_trajectory(self, trajectory: Trajectory) -> None:  # pragma: no cover
        pass

    def on_summary(self, summary: TrajectorySummary) -> None:  # pragma: no cover
        pass

    def on_fragment(
        self, task_id: str, rollout: int, fragment: SkillDocument
    ) -> None:  # pragma: no cover
        pass

    def on_usage(self, knowledge: TaskKnowledge) -> None:  # pragma: no cover
        pass

    def on_kb_change(self, record: dict) -> None:  # pragma: no cover
        pass

    def on_kb_state(
        self,
        bank: ExperienceBank,
        skill: Optional[SkillDocument],
        index: BankIndex,
    ) -> None:  # pragma: no cover
        pass


def accumulate_task(
    task: TaskInstance,
    bank: ExperienceBank,
    skill: Optional[SkillDocument],
    index: BankIndex,
    embedder: Embedder,
    gateway: ModelGateway,
    session_factory: Callable[[], ToolSession],
    settings: AccumulationSettings,
    runtime_config: RuntimeConfig,
    grader: Grader,
    sink: ArtifactSink,
) -> Tuple[Optional[SkillDocument], TaskOutcome]:
    """Run one training task end to end and fold its lessons into the KB."""
    outcome = TaskOutcome(task=task)

    knowledge = prepare_task_knowledge(
        task, bank, skill, index, embedder, gateway, settings.adaptation
    )
    outcome.knowledge = knowledge
    sink.on_usage(knowledge)

    outcome.trajectories = run_rollouts(
        task,
        knowledge.prompt.user_text,
        gateway,
        session_factory,
        config=runtime_config,
        n=settings.rollouts,
        system_text=knowledge.prompt.system_text,
    )
    adapted = knowledge.usage.adapted_skill_text
    for trajectory in outcome.trajectories:
        sink.on_trajectory(trajectory)
        outcome.successes.append(grader(trajectory.final_answer, task.ground_truth))

    for trajectory, success in zip(outcome.trajectories, outcome.successes):
        summary = summarize_rollout(task, trajectory, gateway, settings, adapted)
        outcome.summaries.append(summary)
        sink.on_summary(summary)
        if success:
            fragment = generate_skill_fragment(task, trajectory, gateway, settings, adapted)
            if fragment is not None:
                outcome.fragments.append(fragment)
                sink.on_fragment(task.task_id, trajectory.rollout, fragment)

    try:
        outcome.ops = critique_rollouts(
            task, outcome.summaries, knowledge.injected, gateway, settings, bank.word_limit
        )
    except NoJsonFoundError:
        logger.warning("task %s: critique carried no ops array", task.task_id)
        outcome.ops = []

    for op in outcome.ops:
        try:
            report = consolidate_experience_op(
                bank,
                index,
                embedder,
                gateway,
                op,
                theta_sim=settings.theta_sim,
                source_task_id=task.task_id,
            )
        except Exception as exc:  # one bad op must not void the rest
            logger.warning("task %s: op %s failed (%s)", task.task_id, op.kind, exc)
            continue
        outcome.consolidations.append(report)
        sink.on_kb_change({"task_id": task.task_id, **report.to_json_obj()})

    outcome.skill_merge = merge_skill(skill, outcome.fragments, gateway)
    skill = outcome.skill_merge.skill

    outcome.prune = prune_bank(
        bank, index, embedder, gateway, max_entries=settings.max_entries
    )
    if outcome.prune.triggered:
        sink.on_kb_change({"task_id": task.task_id, **outcome.prune.to_json_obj()})
    outcome.refine = refine_skill(skill, gateway, max_words=settings.max_skill_words)
    skill = outcome.refine.skill
    return skill, outcome


def run_accumulation(
    tasks: Sequence[TaskInstance],
    gateway: ModelGateway,
    embedder: Embedder,
    session_factory: Callable[[], ToolSession],
    settings: Optional[AccumulationSettings] = None,
    runtime_config: Optional[RuntimeConfig] = None,
    grader: Grader = grade_exact_normalized,
    bank: Optional[ExperienceBank] = None,
    skill: Optional[SkillDocument] = None,
    index: Optional[BankIndex] = None,
    sink: Optional[ArtifactSink] = None,
) -> AccumulationResult:
    """Phase I over a training split. Tasks are processed sequentially;
    all knowledge-base mutation happens on this thread."""
    settings = settings or AccumulationSettings()
    runtime_config = runtime_config or RuntimeConfig()
    bank = bank if bank is not None else ExperienceBank()
    index = index if index is not None else BankIndex()
    sink = sink or ArtifactSink()

    result = AccumulationResult(bank=bank, skill=skill, index=index)
    for task in tasks:
        try:
            result.skill, outcome = accumulate_task(
                task,
                bank,
                result.skill,
                index,
                embedder,
                gateway,
                session_factory,
                settings,
                runtime_config,
                grader,
                sink,
            )
        except Exception as exc:
            logger.exception("task %s failed; continuing", task.task_id)
            outcome = TaskOutcome(task=task, error=f"{type(exc).__name__}: {exc}")
        result.outcomes.append(outcome)
        sink.on_kb_state(bank, result.skill, index)
    return result
