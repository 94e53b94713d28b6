"""Template registry: slot substitution rules and template inventory."""

import pytest

from tacit.errors import UnboundSlotError, UnknownTemplateError
from tacit.prompts import get_template, render_template, template_ids


def test_every_declared_template_loads():
    for template_id in template_ids():
        template = get_template(template_id)
        assert template.text  # non-empty
        for slot in template.slots:
            assert f"{{{slot}}}" in template.text


def test_unknown_template_rejected():
    with pytest.raises(UnknownTemplateError):
        get_template("no_such_template")


def test_render_substitutes_each_slot():
    text = render_template("rollout_summary", {"trajectory": "TRAJ-MARKER"})
    assert "TRAJ-MARKER" in text
    assert "{trajectory}" not in text


def test_render_missing_slot_rejected():
    with pytest.raises(UnboundSlotError):
        render_template("rollout_summary", {})


def test_render_extra_binding_rejected():
    with pytest.raises(ValueError):
        render_template("rollout_summary", {"trajectory": "x", "bogus": "y"})


def test_literal_braces_survive_render():
    # the critique prompt shows JSON shapes in braces; only declared slots move
    text = render_template(
        "cross_rollout_critique",
        {
            "max_ops": 4,
            "question": "q",
            "summaries": "s",
            "experiences": "e",
            "groundtruth": "g",
        },
    )
    assert '{"option":' in text or '"option"' in text


def test_slot_value_containing_brace_is_not_reexpanded():
    rendered = render_template("rollout_summary", {"trajectory": "{max_ops} stays literal"})
    assert "{max_ops} stays literal" in rendered


def test_non_string_bindings_are_stringified():
    text = render_template(
        "experience_manage", {"exp_count": 130, "experiences": "[E0] tip"}
    )
    assert "130" in text


def test_injection_headers_end_with_instruction_marker():
    for template_id in ("skill_injection_header", "experience_injection_header"):
        assert get_template(template_id).text.endswith("Your instruction is following:")


def test_system_prompts_have_no_slots():
    assert get_template("direct_cot").slots == ()
    assert get_template("multi_tool_agent_search").slots == ()
