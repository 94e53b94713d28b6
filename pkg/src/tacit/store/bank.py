"""The experience bank: small condition->action tips with integer ids.

An entry's id is "E" followed by a decimal suffix handed out by a
monotonic counter.  Suffixes are never reused while a bank object is
alive, so ids stay stable across merges and deletions.  Four operations
mutate a bank:

    add     -- insert a new entry (text only)
    modify  -- replace the text of an existing entry, keeping its id
    merge   -- remove two or more entries, insert one combined entry
    delete  -- remove one entry

Every mutation returns a ChangeLog record carrying enough detail
(including removed texts) to audit what happened after the fact.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from tacit.errors import (
    InvalidOpError,
    SchemaError,
    StoreIoError,
    TextTooLongError,
    UnknownIdError,
)

logger = logging.getLogger(__name__)

# Hard ceiling on experience length, in whitespace-separated words.
DEFAULT_WORD_LIMIT = 64

_ID_PATTERN = re.compile(r"^E(\d+)$")


def count_words(text: str) -> int:
    """Number of whitespace-separated tokens in *text*.

    str.split() splits on any run of Unicode whitespace, so hyphenated
    compounds ("cross-check") count as a single word.
    """
    return len(text.split())


def numeric_suffix(entry_id: str) -> int:
    """The integer n in an id of the form "E<n>". Raises on anything else."""
    m = _ID_PATTERN.match(entry_id)
    if m is None:
        raise ValueError(f"not an experience id: {entry_id!r}")
    return int(m.group(1))


@dataclass(frozen=True)
class ValidationResult:
    """Outcome of checking a candidate experience text."""

    status: str  # "ok" | "empty" | "too_long"
    word_count: int

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def validate_experience(text: str, limit: int = DEFAULT_WORD_LIMIT) -> ValidationResult:
    """Check that *text* is non-empty and within the word budget."""
    n = count_words(text)
    if n == 0:
        return ValidationResult("empty", 0)
    if n > limit:
        return ValidationResult("too_long", n)
    return ValidationResult("ok", n)


@dataclass(frozen=True)
class ExperienceEntry:
    id: str
    text: str
    created_at: int  # monotonic sequence number, not wall clock
    condition: Optional[str] = None
    action: Optional[str] = None
    source_task_id: Optional[str] = None

    def to_json_obj(self) -> Dict[str, object]:
        return {
            "id": self.id,
            "text": self.text,
            "condition": self.condition,
            "action": self.action,
            "created_at": self.created_at,
            "source_task_id": self.source_task_id,
        }


@dataclass(frozen=True)
class KnowledgeOp:
    """One requested mutation. Shape depends on kind; see validate()."""

    kind: str  # "add" | "modify" | "merge" | "delete"
    text: Optional[str] = None
    modified_from: Optional[str] = None
    merged_from: Tuple[str, ...] = ()
    deleted_id: Optional[str] = None

    def validate(self) -> None:
        """Raise InvalidOpError unless fields match the kind's shape."""
        if self.kind == "add":
            if not self.text:
                raise InvalidOpError("add op requires text")
            if self.modified_from or self.merged_from or self.deleted_id:
                raise InvalidOpError("add op carries only text")
        elif self.kind == "modify":
            if not self.text or not self.modified_from:
                raise InvalidOpError("modify op requires text and modified_from")
            if self.merged_from or self.deleted_id:
                raise InvalidOpError("modify op carries text and modified_from only")
        elif self.kind == "merge":
            if not self.text or len(self.merged_from) < 2:
                raise InvalidOpError("merge op requires text and at least two merged_from ids")
            if self.modified_from or self.deleted_id:
                raise InvalidOpError("merge op carries text and merged_from only")
            if len(set(self.merged_from)) != len(self.merged_from):
                raise InvalidOpError("merge op lists a source id twice")
        elif self.kind == "delete":
            if not self.deleted_id:
                raise InvalidOpError("delete op requires deleted_id")
            if self.text or self.modified_from or self.merged_from:
                raise InvalidOpError("delete op carries only deleted_id")
        else:
            raise InvalidOpError(f"unknown op kind: {self.kind!r}")


@dataclass(frozen=True)
class ChangeLog:
    """Audit record for one applied operation."""

    kind: str
    added_id: Optional[str] = None
    text: Optional[str] = None
    removed: Tuple[Tuple[str, str], ...] = ()  # (id, former text) pairs

    def to_json_obj(self) -> Dict[str, object]:
        return {
            "kind": self.kind,
            "added_id": self.added_id,
            "text": self.text,
            "removed": [list(pair) for pair in self.removed],
        }


class ExperienceBank:
    """Ordered map of experience id -> entry plus the id counter."""

    def __init__(self, word_limit: int = DEFAULT_WORD_LIMIT):
        self._entries: Dict[str, ExperienceEntry] = {}
        self._next_id = 0
        self._next_seq = 0
        self.word_limit = word_limit

    # -- views ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._entries

    def __iter__(self):
        return iter(self.entries())

    def get(self, entry_id: str) -> ExperienceEntry:
        try:
            return self._entries[entry_id]
        except KeyError:
            raise UnknownIdError(entry_id) from None

    def ids(self) -> List[str]:
        return [e.id for e in self.entries()]

    def entries(self) -> List[ExperienceEntry]:
        """All entries ordered by numeric id suffix."""
        return sorted(self._entries.values(), key=lambda e: numeric_suffix(e.id))

    @property
    def next_id(self) -> int:
        return self._next_id

    def snapshot(self) -> "ExperienceBank":
        """An independent copy; safe to hand to readers while this one mutates."""
        twin = ExperienceBank(word_limit=self.word_limit)
        twin._entries = dict(self._entries)  # entries are frozen, sharing is fine
        twin._next_id = self._next_id
        twin._next_seq = self._next_seq
        return twin

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExperienceBank):
            return NotImplemented
        return self.entries() == other.entries()

    def __repr__(self) -> str:
        return f"ExperienceBank({len(self)} entries, next_id=E{self._next_id})"

    # -- mutation ---------------------------------------------------------

    def _checked_text(self, text: str) -> str:
        result = validate_experience(text, self.word_limit)
        if result.status == "empty":
            raise InvalidOpError("experience text is empty")
        if result.status == "too_long":
            raise TextTooLongError(result.word_count, self.word_limit)
        return text

    def _insert(
        self,
        text: str,
        condition: Optional[str],
        action: Optional[str],
        source_task_id: Optional[str],
    ) -> ExperienceEntry:
        entry = ExperienceEntry(
            id=f"E{self._next_id}",
            text=text,
            created_at=self._next_seq,
            condition=condition,
            action=action,
            source_task_id=source_task_id,
        )
        self._next_id += 1
        self._next_seq += 1
        self._entries[entry.id] = entry
        return entry

    def apply(self, op: KnowledgeOp, source_task_id: Optional[str] = None) -> ChangeLog:
        """Apply one op. Raises before mutating anything on a bad request."""
        op.validate()

        if op.kind == "add":
            text = self._checked_text(op.text or "")
            entry = self._insert(text, None, None, source_task_id)
            return ChangeLog(kind="add", added_id=entry.id, text=text)

        if op.kind == "modify":
            text = self._checked_text(op.text or "")
            target = self.get(op.modified_from or "")
            updated = replace(target, text=text)
            self._entries[updated.id] = updated
            return ChangeLog(
                kind="modify",
                added_id=updated.id,
                text=text,
                removed=((target.id, target.text),),
            )

        if op.kind == "merge":
            text = self._checked_text(op.text or "")
            sources = [self.get(sid) for sid in op.merged_from]  # all-or-nothing
            for src in sources:
                del self._entries[src.id]
            entry = self._insert(text, None, None, source_task_id)
            return ChangeLog(
                kind="merge",
                added_id=entry.id,
                text=text,
                removed=tuple((s.id, s.text) for s in sources),
            )

        # delete
        target = self.get(op.deleted_id or "")
        del self._entries[target.id]
        return ChangeLog(kind="delete", removed=((target.id, target.text),))


# ---------------------------------------------------------------------------
# Persistence: a JSON array of entry objects, ordered by numeric id.
# The id counter is not stored; load() resumes at max(suffix) + 1.
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = ("id", "text", "created_at")


def save_experiences(bank: ExperienceBank, path: Union[str, Path]) -> None:
    path = Path(path)
    payload = [e.to_json_obj() for e in bank.entries()]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StoreIoError(f"cannot write {path}: {exc}") from exc


def load_experiences(path: Union[str, Path], word_limit: int = DEFAULT_WORD_LIMIT) -> ExperienceBank:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StoreIoError(f"cannot read {path}: {exc}") from exc

    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, list):
        raise SchemaError(f"{path}: expected a JSON array of entries")

    bank = ExperienceBank(word_limit=word_limit)
    seen = set()
    max_suffix = -1
    max_seq = -1
    for obj in payload:
        if not isinstance(obj, dict):
            raise SchemaError(f"{path}: entry is not an object")
        for key in _REQUIRED_FIELDS:
            if key not in obj:
                raise SchemaError(f"{path}: entry missing field {key!r}")
        entry_id = obj["id"]
        try:
            suffix = numeric_suffix(entry_id)
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"{path}: bad entry id {entry_id!r}") from exc
        if entry_id in seen:
            raise SchemaError(f"{path}: duplicate entry id {entry_id}")
        seen.add(entry_id)
        entry = ExperienceEntry(
            id=entry_id,
            text=str(obj["text"]),
            created_at=int(obj["created_at"]),
            condition=obj.get("condition"),
            action=obj.get("action"),
            source_task_id=obj.get("source_task_id"),
        )
        bank._entries[entry.id] = entry
        max_suffix = max(max_suffix, suffix)
        max_seq = max(max_seq, entry.created_at)

    bank._next_id = max_suffix + 1
    bank._next_seq = max_seq + 1
    return bank
