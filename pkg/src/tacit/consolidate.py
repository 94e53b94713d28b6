"""Keeping the knowledge base small and non-redundant.

Three mechanisms, all driven by the kb model but bounded by hard rules:

* add-time merging -- a new experience scoring strictly above the
  similarity threshold against existing entries is merged with them in
  one model call; the originals are removed.  If the merged text fails
  validation twice, the new experience is kept as a plain add instead.
* pruning -- when the bank exceeds its cap, the model proposes
  merge/delete ops; if the bank is still over cap afterwards, the
  oldest entries are evicted until it fits.  The cap always wins.
* skill merging/refinement -- fragments fold into the single global
  skill document (major version bump per fold); an overgrown document
  gets one refinement pass and is kept either way.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

from tacit.embeddings import Embedder
from tacit.errors import (
    InvalidOpError,
    MalformedFragmentError,
    MalformedVersionError,
    MissingFrontmatterError,
    NoJsonFoundError,
    TextTooLongError,
    UnknownIdError,
)
from tacit.gateway import KB_ROLE, GenerationParams, Message, ModelGateway
from tacit.jsonx import extract_last_json_array
from tacit.prompts import render_template
from tacit.retrieval import BankIndex
from tacit.store.bank import ChangeLog, ExperienceBank, KnowledgeOp, validate_experience
from tacit.store.skills import SkillDocument, parse_skill, render_skill

logger = logging.getLogger(__name__)

DEFAULT_SIM_THRESHOLD = 0.70
DEFAULT_MAX_ENTRIES = 120
DEFAULT_MAX_SKILL_WORDS = 1000

_KB_PARAMS = GenerationParams(temperature=0.6, top_p=1.0, max_tokens=12288)


@dataclass
class ConsolidationReport:
    """What one knowledge op did to the bank."""

    kind: str
    added_id: Optional[str] = None
    merged: bool = False
    merge_fallback: bool = False
    similar: Tuple[Tuple[str, float], ...] = ()
    changelogs: List[ChangeLog] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "kind": self.kind,
            "added_id": self.added_id,
            "merged": self.merged,
            "merge_fallback": self.merge_fallback,
            "similar": [[entry_id, score] for entry_id, score in self.similar],
            "changes": [log.to_json_obj() for log in self.changelogs],
        }


def _merge_block(texts: Sequence[str]) -> str:
    return "\n".join(f"- {t}" for t in texts)


def consolidate_experience_op(
    bank: ExperienceBank,
    index: BankIndex,
    embedder: Embedder,
    gateway: ModelGateway,
    op: KnowledgeOp,
    theta_sim: float = DEFAULT_SIM_THRESHOLD,
    params: GenerationParams = _KB_PARAMS,
    source_task_id: Optional[str] = None,
) -> ConsolidationReport:
    """Apply one add/modify op, merging an add into near-duplicates.

    The similarity gate is strict: a score of exactly theta_sim does not
    merge.  An add that trips the gate causes exactly one merge call.
    """
    op.validate()
    if op.kind == "modify":
        log = bank.apply(op, source_task_id)
        assert log.added_id is not None
        index.put(log.added_id, embedder.embed(op.text or ""))
        return ConsolidationReport(kind="modify", added_id=log.added_id, changelogs=[log])
    if op.kind != "add":
        raise InvalidOpError(f"consolidation handles add/modify ops, not {op.kind!r}")

    vector = embedder.embed(op.text or "")
    similar = [(m.entry_id, m.score) for m in index.scores(vector) if m.score > theta_sim]

    add_log = bank.apply(op, source_task_id)
    assert add_log.added_id is not None
    index.put(add_log.added_id, vector)
    report = ConsolidationReport(
        kind="add", added_id=add_log.added_id, similar=tuple(similar), changelogs=[add_log]
    )
    if not similar:
        return report

    texts = [bank.get(entry_id).text for entry_id, _ in similar] + [op.text or ""]
    prompt = render_template("merge_experiences", {"experiences_text": _merge_block(texts)})
    merged_text = ""
    for _ in range(2):  # one retry on a too-long/empty merge
        completion = gateway.complete(
            KB_ROLE, [Message(role="user", content=prompt)], params, tag="merge_experiences"
        )
        candidate = completion.text.strip()
        if validate_experience(candidate, bank.word_limit).ok:
            merged_text = candidate
            break
        logger.warning("merge produced invalid text (%d words)", len(candidate.split()))
    if not merged_text:
        report.merge_fallback = True  # keep the plain add; originals stay
        return report

    merge_op = KnowledgeOp(
        kind="merge",
        text=merged_text,
        merged_from=tuple([entry_id for entry_id, _ in similar] + [add_log.added_id]),
    )
    merge_log = bank.apply(merge_op, source_task_id)
    for entry_id, _ in merge_log.removed:
        index.discard(entry_id)
    assert merge_log.added_id is not None
    index.put(merge_log.added_id, embedder.embed(merged_text))
    report.merged = True
    report.added_id = merge_log.added_id
    report.changelogs.append(merge_log)
    return report


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------

@dataclass
class PruneReport:
    triggered: bool = False
    model_ops_applied: int = 0
    forced_evictions: Tuple[str, ...] = ()
    changelogs: List[ChangeLog] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "kind": "prune",
            "triggered": self.triggered,
            "model_ops_applied": self.model_ops_applied,
            "forced_evictions": list(self.forced_evictions),
            "changes": [log.to_json_obj() for log in self.changelogs],
        }


def _parse_manage_ops(text: str) -> List[KnowledgeOp]:
    ops: List[KnowledgeOp] = []
    for item in extract_last_json_array(text):
        if not isinstance(item, dict):
            continue
        option = item.get("option")
        if option == "merge":
            merged_from = item.get("merged_from")
            experience = item.get("experience")
            if isinstance(merged_from, list) and isinstance(experience, str):
                ops.append(
                    KnowledgeOp(
                        kind="merge",
                        text=experience,
                        merged_from=tuple(str(i) for i in merged_from),
                    )
                )
        elif option == "delete":
            deleted = item.get("deleted_id")
            if isinstance(deleted, str):
                ops.append(KnowledgeOp(kind="delete", deleted_id=deleted))
        else:
            logger.warning("prune: ignoring op with option %r", option)
    return ops


def prune_bank(
    bank: ExperienceBank,
    index: BankIndex,
    embedder: Embedder,
    gateway: ModelGateway,
    max_entries: int = DEFAULT_MAX_ENTRIES,
    params: GenerationParams = _KB_PARAMS,
) -> PruneReport:
    """Shrink the bank to max_entries. No-op while at or under the cap."""
    report = PruneReport()
    if len(bank) <= max_entries:
        return report
    report.triggered = True

    listing = "\n".join(f"[{e.id}] {e.text}" for e in bank.entries())
    prompt = render_template(
        "experience_manage", {"exp_count": len(bank), "experiences": listing}
    )
    completion = gateway.complete(
        KB_ROLE, [Message(role="user", content=prompt)], params, tag="experience_manage"
    )
    try:
        ops = _parse_manage_ops(completion.text)
    except NoJsonFoundError:
        logger.warning("prune: no ops array in completion; falling back to age eviction")
        ops = []

    for op in ops:
        try:
            op.validate()
            log = bank.apply(op)
        except (InvalidOpError, UnknownIdError, TextTooLongError) as exc:
            logger.warning("prune: skipping op (%s)", exc)
            continue
        for entry_id, _ in log.removed:
            index.discard(entry_id)
        if log.added_id is not None:
            index.put(log.added_id, embedder.embed(log.text or ""))
        report.model_ops_applied += 1
        report.changelogs.append(log)

    # the cap is a hard invariant; age out the oldest entries if needed
    evicted: List[str] = []
    while len(bank) > max_entries:
        oldest = min(bank.entries(), key=lambda e: e.created_at)
        log = bank.apply(KnowledgeOp(kind="delete", deleted_id=oldest.id))
        index.discard(oldest.id)
        evicted.append(oldest.id)
        report.changelogs.append(log)
    report.forced_evictions = tuple(evicted)
    if evicted:
        logger.info("prune: forced eviction of %d oldest entries", len(evicted))
    return report


# ---------------------------------------------------------------------------
# Skill document lifecycle
# ---------------------------------------------------------------------------

def extract_skill_fragment(completion_text: str) -> SkillDocument:
    """Parse a generated fragment; it must begin with frontmatter."""
    text = completion_text.strip()
    if not text.startswith("---"):
        raise MalformedFragmentError("fragment does not start with ---")
    return parse_skill(text)


@dataclass
class SkillMergeReport:
    skill: Optional[SkillDocument]
    bootstrapped: bool = False
    merge_calls: int = 0
    parse_failures: int = 0
    kept_previous: bool = False


def merge_skill(
    skill: Optional[SkillDocument],
    fragments: Sequence[SkillDocument],
    gateway: ModelGateway,
    params: GenerationParams = _KB_PARAMS,
) -> SkillMergeReport:
    """Fold new fragments into the single global skill.

    First fragment ever becomes the global skill verbatim (no model
    call).  Each fold bumps the major version.  If the merged output
    cannot be parsed after one retry, the previous skill is kept.
    """
    report = SkillMergeReport(skill=skill)
    remaining = list(fragments)
    if not remaining:
        return report
    if report.skill is None:
        report.skill = remaining.pop(0)
        report.bootstrapped = True
        if not remaining:
            return report

    existing = report.skill
    assert existing is not None
    prompt = render_template(
        "merge_skill",
        {
            "existing_skill": render_skill(existing),
            "new_skills": "\n\n".join(render_skill(f) for f in remaining),
        },
    )
    merged: Optional[SkillDocument] = None
    for _ in range(2):  # one retry on unparseable output
        completion = gateway.complete(
            KB_ROLE, [Message(role="user", content=prompt)], params, tag="merge_skill"
        )
        report.merge_calls += 1
        try:
            merged = extract_skill_fragment(completion.text)
            break
        except (MalformedFragmentError, MissingFrontmatterError, MalformedVersionError) as exc:
            report.parse_failures += 1
            logger.warning("skill merge output unusable (%s)", exc)
    if merged is None:
        report.kept_previous = True
        return report

    bumped = existing.metadata.bump_major()
    report.skill = replace(merged, metadata=replace(merged.metadata, version=bumped.version))
    return report


@dataclass
class SkillRefineReport:
    skill: Optional[SkillDocument]
    triggered: bool = False
    refined: bool = False


def refine_skill(
    skill: Optional[SkillDocument],
    gateway: ModelGateway,
    max_words: int = DEFAULT_MAX_SKILL_WORDS,
    params: GenerationParams = _KB_PARAMS,
) -> SkillRefineReport:
    """One refinement pass when the document outgrows its word budget.

    The outcome is kept even if still over budget; an unusable
    completion keeps the original.  The version is not changed by
    refinement -- it is an editorial pass, not new knowledge.
    """
    report = SkillRefineReport(skill=skill)
    if skill is None or skill.word_count <= max_words:
        return report
    report.triggered = True
    prompt = render_template(
        "skill_manage",
        {"word_count": skill.word_count, "skill_content": render_skill(skill)},
    )
    completion = gateway.complete(
        KB_ROLE, [Message(role="user", content=prompt)], params, tag="skill_manage"
    )
    try:
        refined = extract_skill_fragment(completion.text)
    except (MalformedFragmentError, MissingFrontmatterError, MalformedVersionError) as exc:
        logger.warning("skill refinement output unusable (%s); keeping original", exc)
        return report
    report.skill = replace(
        refined, metadata=replace(refined.metadata, version=skill.metadata.version)
    )
    report.refined = True
    return report
