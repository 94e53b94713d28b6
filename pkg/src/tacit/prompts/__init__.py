"""Prompt template registry.

Templates are shipped as plain-text data files under ``data/`` so they
can be diffed and reviewed without touching code.  Each declares the
slot names it expects; render() substitutes exactly those ``{slot}``
markers and nothing else, so literal braces in a template (JSON format
examples and the like) pass through untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Dict, Mapping, Tuple

from tacit.errors import UnboundSlotError, UnknownTemplateError

# template id -> the slot names its text must contain
_SLOTS: Dict[str, Tuple[str, ...]] = {
    "direct_cot": (),
    "multi_tool_agent_search": (),
    "generate_raw_skill": ("trajectory", "ground_truth"),
    "merge_skill": ("existing_skill", "new_skills"),
    "skill_manage": ("word_count", "skill_content"),
    "adapt_skill": ("base_skill", "experiences", "task"),
    "skill_injection_header": ("skill_content",),
    "rollout_summary": ("trajectory",),
    "cross_rollout_critique": ("max_ops", "question", "summaries", "experiences", "groundtruth"),
    "merge_experiences": ("experiences_text",),
    "experience_manage": ("exp_count", "experiences"),
    "experience_injection_header": ("bullets",),
    "task_decomposition": ("task_description",),
    "experience_rewrite": ("task_description", "experiences_text"),
    "grading_judge": ("ground_truth", "answer"),
}


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    text: str
    slots: Tuple[str, ...]

    def render(self, **bindings: object) -> str:
        """Substitute declared slots byte-for-byte; no other rewriting."""
        for slot in self.slots:
            if slot not in bindings:
                raise UnboundSlotError(self.template_id, slot)
        extra = set(bindings) - set(self.slots)
        if extra:
            raise ValueError(
                f"template {self.template_id!r} does not take: {', '.join(sorted(extra))}"
            )
        if not self.slots:
            return self.text
        pattern = re.compile("|".join(re.escape(f"{{{s}}}") for s in self.slots))
        return pattern.sub(lambda m: str(bindings[m.group(0)[1:-1]]), self.text)


@lru_cache(maxsize=None)
def get_template(template_id: str) -> PromptTemplate:
    if template_id not in _SLOTS:
        raise UnknownTemplateError(template_id)
    path = resources.files("tacit.prompts").joinpath("data").joinpath(f"{template_id}.txt")
    text = path.read_text(encoding="utf-8")
    if text.endswith("\n"):  # the file's final newline is not part of the template
        text = text[:-1]
    slots = _SLOTS[template_id]
    for slot in slots:
        if f"{{{slot}}}" not in text:
            raise ValueError(f"template {template_id!r} is missing its {{{slot}}} marker")
    return PromptTemplate(template_id=template_id, text=text, slots=slots)


def render_template(template_id: str, bindings: Mapping[str, object]) -> str:
    return get_template(template_id).render(**bindings)


def template_ids() -> Tuple[str, ...]:
    return tuple(sorted(_SLOTS))
