"""Task-time adaptation: decomposition, retrieval, rewrite, injection."""

import json

import pytest

from tacit.inference import (
    AdaptationSettings,
    INSTRUCTION_MARKER,
    adapt_skill,
    adapted_skill_sha256,
    build_augmented_prompt,
    decompose_task,
    experience_bullets,
    prepare_task_knowledge,
    record_usage,
    retrieve_for_task,
    rewrite_experiences,
    Subtask,
)
from tacit.retrieval import BankIndex, ScoredMatch
from tacit.store.skills import parse_skill

from conftest import (
    MERGED_SKILL,
    make_bank,
    make_embedder,
    make_gateway,
    make_task,
    reply,
)

SETTINGS = AdaptationSettings()


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------

def test_decompose_parses_subtasks():
    payload = json.dumps(
        [
            {"type": "recognition", "query": "what object is shown"},
            {"type": "counting", "query": "how many objects"},
        ]
    )
    gateway = make_gateway(kb_replies=[reply(payload, tag="task_decomposition")])
    subtasks = decompose_task(make_task(), gateway, SETTINGS)
    assert [s.query for s in subtasks] == ["what object is shown", "how many objects"]
    assert subtasks[0].type == "recognition"


def test_decompose_clamps_to_three():
    payload = json.dumps([{"type": "t", "query": f"q{i}"} for i in range(6)])
    gateway = make_gateway(kb_replies=[reply(payload)])
    subtasks = decompose_task(make_task(), gateway, SETTINGS)
    assert [s.query for s in subtasks] == ["q0", "q1", "q2"]


def test_decompose_skips_malformed_items():
    payload = '["loose string", {"query": ""}, {"query": "  real one  "}, {"no_query": 1}]'
    gateway = make_gateway(kb_replies=[reply(payload)])
    subtasks = decompose_task(make_task(), gateway, SETTINGS)
    assert [s.query for s in subtasks] == ["real one"]
    assert subtasks[0].type == "general"


def test_decompose_without_json_falls_back_to_task_text():
    gateway = make_gateway(kb_replies=[reply("I could not decide.")])
    task = make_task(query="original question")
    subtasks = decompose_task(task, gateway, SETTINGS)
    assert subtasks == [Subtask(type="general", query="original question")]


# ---------------------------------------------------------------------------
# Retrieval step
# ---------------------------------------------------------------------------

def test_retrieve_skips_empty_index_without_embedding():
    class ExplodingEmbedder:
        def embed(self, text):
            raise AssertionError("must not be called")

    out = retrieve_for_task([Subtask("general", "q")], BankIndex(), ExplodingEmbedder(), SETTINGS)
    assert out == []


def test_retrieve_unions_subtask_queries():
    index = BankIndex.from_vectors({"E0": (1.0, 0.0), "E1": (0.0, 1.0)})
    embedder = make_embedder({"first": [1.0, 0.0], "second": [0.0, 1.0]})
    out = retrieve_for_task(
        [Subtask("a", "first"), Subtask("b", "second")], index, embedder, SETTINGS
    )
    assert {m.entry_id for m in out} == {"E0", "E1"}


# ---------------------------------------------------------------------------
# Rewrite
# ---------------------------------------------------------------------------

def rewrite(bank, matches, kb_reply_text):
    gateway = make_gateway(kb_replies=[reply(kb_reply_text, tag="experience_rewrite")])
    return rewrite_experiences(make_task(), matches, bank, gateway, SETTINGS)


def test_rewrite_replaces_texts_keeping_ids(bank3):
    matches = [ScoredMatch("E0", 0.9), ScoredMatch("E2", 0.5)]
    mapping = json.dumps({"E0": "rewritten zero", "E2": "rewritten two"})
    out = rewrite(bank3, matches, mapping)
    assert out == [("E0", "rewritten zero"), ("E2", "rewritten two")]


def test_rewrite_drops_ids_the_model_left_out(bank3):
    matches = [ScoredMatch("E0", 0.9), ScoredMatch("E2", 0.5)]
    out = rewrite(bank3, matches, json.dumps({"E0": "kept"}))
    assert out == [("E0", "kept")]


def test_rewrite_ignores_invented_ids(bank3):
    matches = [ScoredMatch("E0", 0.9)]
    out = rewrite(bank3, matches, json.dumps({"E0": "kept", "E99": "made up"}))
    assert out == [("E0", "kept")]


def test_rewrite_without_json_passes_originals_through(bank3):
    matches = [ScoredMatch("E1", 0.9)]
    out = rewrite(bank3, matches, "no structure at all")
    assert out == [("E1", bank3.get("E1").text)]


def test_rewrite_skips_blank_values(bank3):
    matches = [ScoredMatch("E0", 0.9), ScoredMatch("E1", 0.8)]
    out = rewrite(bank3, matches, json.dumps({"E0": "  ", "E1": "fine"}))
    assert out == [("E1", "fine")]


def test_rewrite_no_matches_no_model_call(bank3):
    gateway = make_gateway()  # any call would exhaust the empty script
    assert rewrite_experiences(make_task(), [], bank3, gateway, SETTINGS) == []


# ---------------------------------------------------------------------------
# Skill adaptation
# ---------------------------------------------------------------------------

def test_adapt_skill_none_skill_no_call():
    gateway = make_gateway()
    assert adapt_skill(make_task(), None, [], gateway, SETTINGS) == ""


def test_adapt_skill_uses_completion_verbatim():
    skill = parse_skill(MERGED_SKILL)
    gateway = make_gateway(kb_replies=[reply("## Tailored\n\nJust count.\n", tag="adapt_skill")])
    out = adapt_skill(make_task(), skill, [], gateway, SETTINGS)
    assert out == "## Tailored\n\nJust count."


def test_adapt_skill_frontmatter_output_falls_back_to_body():
    skill = parse_skill(MERGED_SKILL)
    gateway = make_gateway(kb_replies=[reply("---\nname: X\n---\n\nbody")])
    out = adapt_skill(make_task(), skill, [], gateway, SETTINGS)
    assert out == skill.body_text()


def test_adapt_skill_empty_output_falls_back_to_body():
    skill = parse_skill(MERGED_SKILL)
    gateway = make_gateway(kb_replies=[reply("   \n  ")])
    assert adapt_skill(make_task(), skill, [], gateway, SETTINGS) == skill.body_text()


# ---------------------------------------------------------------------------
# Injection assembly
# ---------------------------------------------------------------------------

def test_empty_knowledge_injects_nothing():
    prompt = build_augmented_prompt("the question", "", [])
    assert prompt.user_text == "the question"
    assert prompt.system_text is None


def test_experience_bullets_format():
    assert experience_bullets([("E7", "tip")]) == "[E7] tip"
    assert experience_bullets([]) == ""


def test_single_stream_blocks_end_with_one_marker():
    for prompt in (
        build_augmented_prompt("q", "skill text", []),
        build_augmented_prompt("q", "", [("E0", "tip")]),
    ):
        assert prompt.user_text.count(INSTRUCTION_MARKER) == 1
        assert prompt.user_text.endswith(f"{INSTRUCTION_MARKER}\nq")


def test_both_streams_deduplicate_the_marker():
    prompt = build_augmented_prompt("q", "skill text", [("E0", "tip")])
    assert prompt.user_text.count(INSTRUCTION_MARKER) == 1
    skill_at = prompt.user_text.index("<skill>")
    tips_at = prompt.user_text.index("Here are practical tips")
    assert skill_at < tips_at


def test_injection_is_byte_stable():
    args = ("q", "skill text", [("E0", "tip"), ("E3", "other")])
    assert build_augmented_prompt(*args).user_text == build_augmented_prompt(*args).user_text


# ---------------------------------------------------------------------------
# The whole phase
# ---------------------------------------------------------------------------

def test_prepare_with_empty_kb_makes_zero_model_calls():
    task = make_task(query="plain question")
    gateway = make_gateway()  # both scripts empty: any call raises
    knowledge = prepare_task_knowledge(
        task, make_bank([]), None, BankIndex(), make_embedder(dim=4), gateway
    )
    assert knowledge.prompt.user_text == "plain question"
    assert knowledge.usage.retrieved_ids == ()
    assert knowledge.usage.adapted_skill_text == ""


def test_prepare_full_flow_with_knowledge(bank3):
    task = make_task(query="count the markers")
    index = BankIndex.from_vectors({"E0": (1.0, 0.0), "E1": (0.0, 1.0), "E2": (0.7, 0.7)})
    embedder = make_embedder({"sub question": [1.0, 0.0]})
    skill = parse_skill(MERGED_SKILL)
    kb_replies = [
        reply(json.dumps([{"type": "t", "query": "sub question"}]), tag="task_decomposition"),
        reply(json.dumps({"E0": "tip zero", "E2": "tip two"}), tag="experience_rewrite"),
        reply("## Adapted\n\nGo count.", tag="adapt_skill"),
    ]
    gateway = make_gateway(kb_replies=kb_replies)
    knowledge = prepare_task_knowledge(task, bank3, skill, index, embedder, gateway)

    assert knowledge.usage.retrieved_ids == ("E0", "E2")
    assert knowledge.injected == [("E0", "tip zero"), ("E2", "tip two")]
    assert "## Adapted" in knowledge.prompt.user_text
    assert "[E0] tip zero" in knowledge.prompt.user_text
    assert knowledge.prompt.user_text.endswith("count the markers")


def test_skill_only_flow_skips_decomposition():
    # bank empty but a skill exists: only the adaptation call happens
    task = make_task(query="q")
    gateway = make_gateway(kb_replies=[reply("## Adapted\n\ntext", tag="adapt_skill")])
    knowledge = prepare_task_knowledge(
        task, make_bank([]), parse_skill(MERGED_SKILL), BankIndex(), make_embedder(dim=4), gateway
    )
    assert knowledge.usage.retrieved_ids == ()
    assert "## Adapted" in knowledge.prompt.user_text


def test_record_usage_and_hash():
    usage = record_usage(make_task(task_id="t9"), [ScoredMatch("E1", 0.5)], "adapted")
    assert usage.task_id == "t9"
    assert usage.retrieved_ids == ("E1",)
    import hashlib

    assert adapted_skill_sha256("adapted") == hashlib.sha256(b"adapted").hexdigest()
