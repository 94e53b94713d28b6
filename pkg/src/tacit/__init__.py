"""tacit: knowledge accumulation and injection for tool-using agents.

Agents improve across tasks without any weight updates by maintaining
two forms of memory built from their own rollouts: a bank of short,
situation-conditioned experiences, and a single long-form skill
document. Both are retrieved, adapted, and injected into prompts at
inference time.
"""

__version__ = "0.1.0"

from tacit.store.bank import ExperienceBank, ExperienceEntry, KnowledgeOp
from tacit.store.skills import SkillDocument, parse_skill, render_skill

__all__ = [
    "ExperienceBank",
    "ExperienceEntry",
    "KnowledgeOp",
    "SkillDocument",
    "parse_skill",
    "render_skill",
    "__version__",
]
