"""Durable knowledge: the experience bank and the skill document."""

from tacit.store.bank import (
    DEFAULT_WORD_LIMIT,
    ChangeLog,
    ExperienceBank,
    ExperienceEntry,
    KnowledgeOp,
    ValidationResult,
    count_words,
    load_experiences,
    numeric_suffix,
    save_experiences,
    validate_experience,
)
from tacit.store.skills import (
    SkillDocument,
    SkillMetadata,
    SkillSection,
    load_skill,
    parse_skill,
    render_skill,
    save_skill,
)

__all__ = [
    "DEFAULT_WORD_LIMIT",
    "ChangeLog",
    "ExperienceBank",
    "ExperienceEntry",
    "KnowledgeOp",
    "ValidationResult",
    "count_words",
    "load_experiences",
    "numeric_suffix",
    "save_experiences",
    "validate_experience",
    "SkillDocument",
    "SkillMetadata",
    "SkillSection",
    "load_skill",
    "parse_skill",
    "render_skill",
    "save_skill",
]
