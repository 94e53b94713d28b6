"""Dataset splitting, answer grading, and run-level metrics.

The shuffle PRNG is pinned in this file rather than taken from a
library: split membership must be identical on every machine and
Python version, and library generators don't guarantee their internals.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from tacit.errors import (
    BackendUnavailableError,
    ConfigError,
    EmptyMatrixError,
    InsufficientItemsError,
    SchemaError,
    StoreIoError,
)
from tacit.gateway import KB_ROLE, GenerationParams, Message, ModelGateway
from tacit.prompts import render_template
from tacit.runtime import TaskInstance, Trajectory

logger = logging.getLogger(__name__)

GRADER_KINDS = ("exact_normalized", "containment", "model_judge")

# Grader signature: (final_answer_or_None, ground_truth) -> success
Grader = Callable[[Optional[str], str], bool]


# ---------------------------------------------------------------------------
# Deterministic split
# ---------------------------------------------------------------------------

class Lcg64:
    """64-bit linear congruential generator.

        state' = (state * 6364136223846793005 + 1442695040888963407) mod 2**64

    Each draw returns the full new state. Constants are Knuth's MMIX
    parameters; the generator exists only to make shuffles portable.
    """

    MULTIPLIER = 6364136223846793005
    INCREMENT = 1442695040888963407
    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next_u64(self) -> int:
        self.state = (self.state * self.MULTIPLIER + self.INCREMENT) & self.MASK
        return self.state


def shuffled(items: Sequence, seed: int) -> list:
    """Fisher-Yates driven by Lcg64; pure function of (items, seed)."""
    out = list(items)
    rng = Lcg64(seed)
    for i in range(len(out) - 1, 0, -1):
        j = rng.next_u64() % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


@dataclass(frozen=True)
class DatasetSplit:
    train: Tuple[TaskInstance, ...]
    test: Tuple[TaskInstance, ...]
    seed: int


def split_dataset(
    items: Sequence[TaskInstance], train_n: int, test_n: int, seed: int = 42
) -> DatasetSplit:
    if train_n < 0 or test_n < 0:
        raise InsufficientItemsError("split sizes must be non-negative")
    if train_n + test_n > len(items):
        raise InsufficientItemsError(
            f"need {train_n}+{test_n} items, have {len(items)}"
        )
    mixed = shuffled(items, seed)
    return DatasetSplit(
        train=tuple(mixed[:train_n]),
        test=tuple(mixed[train_n : train_n + test_n]),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Task ingestion (JSON lines)
# ---------------------------------------------------------------------------

def load_tasks(path: Union[str, Path]) -> List[TaskInstance]:
    """Read tasks from a JSONL file.

    Each line: {"task_id", "query", "image_paths": [...], "ground_truth",
    "category"}; image paths resolve relative to the JSONL file.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StoreIoError(f"cannot read {path}: {exc}") from exc
    tasks: List[TaskInstance] = []
    seen: set = set()
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: bad JSON ({exc})") from exc
        if not isinstance(obj, dict) or "task_id" not in obj or "query" not in obj:
            raise SchemaError(f"{path}:{lineno}: task needs task_id and query")
        task_id = str(obj["task_id"])
        if task_id in seen:
            raise SchemaError(f"{path}:{lineno}: duplicate task_id {task_id!r}")
        seen.add(task_id)
        images: List[bytes] = []
        for rel in obj.get("image_paths", []):
            img_path = (path.parent / rel).resolve()
            try:
                images.append(img_path.read_bytes())
            except OSError as exc:
                raise StoreIoError(f"cannot read image {img_path}: {exc}") from exc
        tasks.append(
            TaskInstance(
                task_id=task_id,
                query=str(obj["query"]),
                images=tuple(images),
                ground_truth=str(obj.get("ground_truth", "")),
                category=str(obj.get("category", "")),
            )
        )
    return tasks


# ---------------------------------------------------------------------------
# Grading
# ---------------------------------------------------------------------------

_WS_RE = re.compile(r"\s+")


def normalize_answer(text: Optional[str]) -> str:
    if text is None:
        return ""
    return _WS_RE.sub(" ", text.strip()).casefold()


def grade_exact_normalized(answer: Optional[str], ground_truth: str) -> bool:
    return normalize_answer(answer) == normalize_answer(ground_truth)


def grade_containment(answer: Optional[str], ground_truth: str) -> bool:
    truth = normalize_answer(ground_truth)
    return bool(truth) and truth in normalize_answer(answer)


_JUDGE_PARAMS = GenerationParams(temperature=0.0, top_p=1.0, max_tokens=256)


class ModelJudge:
    """Yes/no equivalence grading by the knowledge model.

    A backend failure grades the rollout false and is flagged on
    .failures rather than raised -- one flaky call must not sink a run.
    """

    def __init__(self, gateway: ModelGateway, params: GenerationParams = _JUDGE_PARAMS):
        self.gateway = gateway
        self.params = params
        self.failures: List[str] = []

    def __call__(self, answer: Optional[str], ground_truth: str) -> bool:
        prompt = render_template(
            "grading_judge", {"ground_truth": ground_truth, "answer": answer or ""}
        )
        try:
            completion = self.gateway.complete(
                KB_ROLE, [Message(role="user", content=prompt)], self.params, tag="grading_judge"
            )
        except BackendUnavailableError as exc:
            logger.warning("judge unavailable; grading false: %s", exc)
            self.failures.append(str(exc))
            return False
        return completion.text.strip().casefold().startswith("yes")


def get_grader(kind: str, gateway: Optional[ModelGateway] = None) -> Grader:
    if kind == "exact_normalized":
        return grade_exact_normalized
    if kind == "containment":
        return grade_containment
    if kind == "model_judge":
        if gateway is None:
            raise ConfigError("model_judge grader needs a configured kb model")
        return ModelJudge(gateway)
    raise ConfigError(f"unknown grader {kind!r}; expected one of {GRADER_KINDS}")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _rows(matrix: Iterable[Sequence[bool]]) -> List[List[bool]]:
    rows = [list(row) for row in matrix]
    if not rows:
        raise EmptyMatrixError("no tasks in outcome matrix")
    for row in rows:
        if not row:
            raise EmptyMatrixError("task with zero rollouts in outcome matrix")
    return rows


def average_at_n(matrix: Iterable[Sequence[bool]]) -> float:
    """Mean over tasks of the per-task success fraction."""
    rows = _rows(matrix)
    return sum(sum(1 for x in row if x) / len(row) for row in rows) / len(rows)


def pass_at_n(matrix: Iterable[Sequence[bool]]) -> float:
    """Fraction of tasks with at least one successful rollout."""
    rows = _rows(matrix)
    return sum(1 for row in rows if any(row)) / len(rows)


def tool_usage_distribution(trajectories: Iterable[Trajectory]) -> Dict[str, float]:
    counts: Dict[str, int] = {}
    for trajectory in trajectories:
        for call in trajectory.tool_calls:
            counts[call.name] = counts.get(call.name, 0) + 1
    total = sum(counts.values())
    if total == 0:
        return {}
    return {name: counts[name] / total for name in sorted(counts)}


@dataclass
class ErrorBreakdown:
    counts: Dict[str, int] = field(default_factory=dict)
    total_calls: int = 0

    @property
    def total_errors(self) -> int:
        return sum(self.counts.values())

    @property
    def rate(self) -> float:
        if self.total_calls == 0:
            return 0.0
        return self.total_errors / self.total_calls


def classify_errors(trajectories: Iterable[Trajectory]) -> ErrorBreakdown:
    breakdown = ErrorBreakdown()
    for trajectory in trajectories:
        for turn in trajectory.turns:
            if turn.tool_call is None:
                continue
            breakdown.total_calls += 1
            if turn.error_class is not None:
                breakdown.counts[turn.error_class] = (
                    breakdown.counts.get(turn.error_class, 0) + 1
                )
    return breakdown


def average_tool_calls(trajectories: Sequence[Trajectory]) -> float:
    """Mean tool invocations per rollout (0 for an empty run)."""
    trajectories = list(trajectories)
    if not trajectories:
        return 0.0
    return sum(len(t.tool_calls) for t in trajectories) / len(trajectories)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    average_at_n: float
    pass_at_n: float
    n: int
    per_task: List[dict]
    tool_distribution: Dict[str, float]
    error_counts: Dict[str, int]
    error_rate: float
    avg_tool_calls: float
    grader: str

    def to_json_obj(self) -> dict:
        return {
            "grader": self.grader,
            "n": self.n,
            "average_at_n": self.average_at_n,
            "pass_at_n": self.pass_at_n,
            "avg_tool_calls": self.avg_tool_calls,
            "tool_distribution": self.tool_distribution,
            "error_counts": dict(sorted(self.error_counts.items())),
            "error_rate": self.error_rate,
            "per_task": self.per_task,
        }

    def render_text(self) -> str:
        lines = [
            f"tasks: {len(self.per_task)}   rollouts/task: {self.n}   grader: {self.grader}",
            f"average@{self.n}: {self.average_at_n:.4f}",
            f"pass@{self.n}:    {self.pass_at_n:.4f}",
            f"avg tool calls/rollout: {self.avg_tool_calls:.2f}",
        ]
        if self.tool_distribution:
            lines.append("tool usage:")
            for name, fraction in self.tool_distribution.items():
                lines.append(f"  {name:<18} {fraction * 100:6.2f}%")
        if self.error_counts:
            lines.append(f"tool errors ({self.error_rate * 100:.2f}% of calls):")
            for name, count in sorted(self.error_counts.items()):
                lines.append(f"  {name:<18} {count}")
        else:
            lines.append("tool errors: none")
        return "\n".join(lines) + "\n"


def build_report(
    tasks: Sequence[TaskInstance],
    trajectories_by_task: Dict[str, Sequence[Trajectory]],
    grader: Grader,
    grader_name: str = "exact_normalized",
) -> MetricsReport:
    """Grade every rollout and fold the usual metrics."""
    matrix: List[List[bool]] = []
    per_task: List[dict] = []
    everything: List[Trajectory] = []
    for task in tasks:
        rollouts = list(trajectories_by_task.get(task.task_id, ()))
        everything.extend(rollouts)
        row = [grader(t.final_answer, task.ground_truth) for t in rollouts]
        if not row:
            row = [False]  # a task that produced nothing counts as a full miss
        matrix.append(row)
        per_task.append(
            {
                "task_id": task.task_id,
                "successes": [bool(x) for x in row],
                "answers": [t.final_answer for t in rollouts],
            }
        )
    breakdown = classify_errors(everything)
    n = max((len(row) for row in matrix), default=0)
    return MetricsReport(
        average_at_n=average_at_n(matrix),
        pass_at_n=pass_at_n(matrix),
        n=n,
        per_task=per_task,
        tool_distribution=tool_usage_distribution(everything),
        error_counts=breakdown.counts,
        error_rate=breakdown.rate,
        avg_tool_calls=average_tool_calls(everything),
        grader=grader_name,
    )
