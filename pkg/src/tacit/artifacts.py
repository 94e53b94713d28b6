"""Run-directory layout and on-disk records of a run.

A run directory looks like:

    runs/<run-id>/
        config.yaml               effective configuration echo
        task-<id>/
            usage.json            which knowledge was injected for the task
            adapted_skill.md      task-adapted skill text (when non-empty)
            rollout-<n>/
                trajectory.json
                summary.txt
                fragment.md
        kb/
            experiences.json
            SKILL.md
            embeddings.json
        consolidation.log         JSON lines, one per knowledge-base change

All JSON is written with indent=2, ensure_ascii=False, and a trailing
newline so identical runs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Optional, Tuple, Union

from tacit.errors import StoreIoError
from tacit.inference import UsageHistory
from tacit.retrieval import BankIndex, load_vectors, save_vectors
from tacit.runtime import Trajectory
from tacit.store.bank import ExperienceBank, load_experiences, save_experiences
from tacit.store.skills import SkillDocument, load_skill, save_skill

EXPERIENCES_FILE = "experiences.json"
SKILL_FILE = "SKILL.md"
EMBEDDINGS_FILE = "embeddings.json"
CONSOLIDATION_LOG = "consolidation.log"

_UNSAFE_RE = re.compile(r"[^A-Za-z0-9._-]+")


def safe_slug(value: str) -> str:
    """Filesystem-safe directory fragment for arbitrary task ids."""
    slug = _UNSAFE_RE.sub("_", value).strip("._") or "x"
    return slug[:80]


def observation_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def trajectory_to_json_obj(trajectory: Trajectory) -> dict:
    """Stable JSON projection of a rollout (observations digested, not stored)."""
    turns = []
    for turn in trajectory.turns:
        record: dict = {"t": turn.index, "assistant_text": turn.assistant_text}
        if turn.tool_call is not None:
            record["tool_call"] = {
                "name": turn.tool_call.name,
                "arguments": turn.tool_call.arguments,
            }
        if turn.observation is not None:
            record["observation_digest"] = observation_digest(turn.observation)
        if turn.error_class is not None:
            record["error_class"] = turn.error_class
        record["images_produced"] = list(turn.images_produced)
        turns.append(record)
    obj: dict = {
        "task_id": trajectory.task_id,
        "rollout": trajectory.rollout,
        "turns": turns,
        "terminated_reason": trajectory.terminated_reason,
        "token_usage": {
            "prompt_tokens": trajectory.token_usage.prompt_tokens,
            "completion_tokens": trajectory.token_usage.completion_tokens,
        },
    }
    if trajectory.final_answer is not None:
        obj["final_answer"] = trajectory.final_answer
    return obj


def trajectory_from_json_obj(obj: dict) -> Trajectory:
    """Inverse of trajectory_to_json_obj, minus digested observations."""
    from tacit.gateway import TokenUsage, ToolCall
    from tacit.runtime import TurnRecord

    turns = []
    for record in obj.get("turns", []):
        call = None
        if "tool_call" in record:
            call = ToolCall(
                name=record["tool_call"]["name"],
                arguments=dict(record["tool_call"].get("arguments", {})),
            )
        turns.append(
            TurnRecord(
                index=record["t"],
                assistant_text=record.get("assistant_text", ""),
                tool_call=call,
                images_produced=tuple(record.get("images_produced", ())),
                error_class=record.get("error_class"),
            )
        )
    usage = obj.get("token_usage", {})
    return Trajectory(
        task_id=obj["task_id"],
        rollout=obj["rollout"],
        turns=turns,
        final_answer=obj.get("final_answer"),
        terminated_reason=obj.get("terminated_reason", "max_turns"),
        token_usage=TokenUsage(
            usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)
        ),
    )


def load_trajectory(path: Union[str, Path]) -> Trajectory:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StoreIoError(f"cannot read {path}: {exc}") from exc
    return trajectory_from_json_obj(json.loads(raw))


def dump_json(path: Union[str, Path], obj: object) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise StoreIoError(f"cannot write {path}: {exc}") from exc


class RunWriter:
    """Owns one run directory and the naming scheme inside it."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # -- layout --------------------------------------------------------------

    def task_dir(self, task_id: str) -> Path:
        return self.root / f"task-{safe_slug(task_id)}"

    def rollout_dir(self, task_id: str, rollout: int) -> Path:
        return self.task_dir(task_id) / f"rollout-{rollout}"

    @property
    def kb_dir(self) -> Path:
        return self.root / "kb"

    # -- per-rollout products -------------------------------------------------

    def write_trajectory(self, trajectory: Trajectory) -> Path:
        path = self.rollout_dir(trajectory.task_id, trajectory.rollout) / "trajectory.json"
        dump_json(path, trajectory_to_json_obj(trajectory))
        return path

    def write_summary(self, task_id: str, rollout: int, text: str) -> Path:
        path = self.rollout_dir(task_id, rollout) / "summary.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        body = text if text.endswith("\n") else text + "\n"
        path.write_text(body, encoding="utf-8")
        return path

    def write_fragment(self, task_id: str, rollout: int, fragment: SkillDocument) -> Path:
        path = self.rollout_dir(task_id, rollout) / "fragment.md"
        save_skill(fragment, path)
        return path

    # -- per-task products ------------------------------------------------------

    def write_adapted_skill(self, task_id: str, text: str) -> Path:
        path = self.task_dir(task_id) / "adapted_skill.md"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
        return path

    def write_usage(self, usage: UsageHistory) -> Path:
        task_path = self.task_dir(usage.task_id)
        obj = {
            "task_id": usage.task_id,
            "retrieved_ids": list(usage.retrieved_ids),
            "adapted_skill_sha256": hashlib.sha256(
                usage.adapted_skill_text.encode("utf-8")
            ).hexdigest(),
            "adapted_skill_path": None,
        }
        if usage.adapted_skill_text:
            adapted = self.write_adapted_skill(usage.task_id, usage.adapted_skill_text)
            obj["adapted_skill_path"] = str(adapted.relative_to(self.root))
        path = task_path / "usage.json"
        dump_json(path, obj)
        return path

    # -- knowledge base ---------------------------------------------------------

    def append_consolidation(self, record: dict) -> None:
        path = self.root / CONSOLIDATION_LOG
        try:
            with path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        except OSError as exc:
            raise StoreIoError(f"cannot append {path}: {exc}") from exc

    def write_kb(
        self,
        bank: ExperienceBank,
        skill: Optional[SkillDocument],
        index: Optional[BankIndex] = None,
    ) -> Path:
        kb = self.kb_dir
        kb.mkdir(parents=True, exist_ok=True)
        save_experiences(bank, kb / EXPERIENCES_FILE)
        if skill is not None:
            save_skill(skill, kb / SKILL_FILE)
        if index is not None:
            save_vectors(index, kb / EMBEDDINGS_FILE)
        return kb


class WriterSink:
    """Streams accumulation products into a run directory as they appear."""

    def __init__(self, writer: RunWriter):
        self.writer = writer

    def on_trajectory(self, trajectory: Trajectory) -> None:
        self.writer.write_trajectory(trajectory)

    def on_summary(self, summary) -> None:
        self.writer.write_summary(summary.task_id, summary.rollout_index, summary.summary_text)

    def on_fragment(self, task_id: str, rollout: int, fragment: SkillDocument) -> None:
        self.writer.write_fragment(task_id, rollout, fragment)

    def on_usage(self, knowledge) -> None:
        self.writer.write_usage(knowledge.usage)

    def on_kb_change(self, record: dict) -> None:
        self.writer.append_consolidation(record)

    def on_kb_state(self, bank, skill, index) -> None:
        self.writer.write_kb(bank, skill, index)


def load_kb(
    kb_dir: Union[str, Path], word_limit: int = 64
) -> Tuple[ExperienceBank, Optional[SkillDocument], Optional[BankIndex]]:
    """Read back a kb/ directory; missing pieces come back empty/None."""
    kb = Path(kb_dir)
    exp_path = kb / EXPERIENCES_FILE
    bank = (
        load_experiences(exp_path, word_limit)
        if exp_path.exists()
        else ExperienceBank(word_limit=word_limit)
    )
    skill_path = kb / SKILL_FILE
    skill = load_skill(skill_path) if skill_path.exists() else None
    vec_path = kb / EMBEDDINGS_FILE
    index = load_vectors(vec_path) if vec_path.exists() else None
    return bank, skill, index
