"""Splits, grading, and metrics."""

import json

import pytest
from hypothesis import given, strategies as st

from tacit.errors import (
    BackendUnavailableError,
    ConfigError,
    EmptyMatrixError,
    InsufficientItemsError,
    SchemaError,
    StoreIoError,
)
from tacit.evaluation import (
    Lcg64,
    ModelJudge,
    average_at_n,
    average_tool_calls,
    build_report,
    classify_errors,
    get_grader,
    grade_containment,
    grade_exact_normalized,
    load_tasks,
    normalize_answer,
    pass_at_n,
    shuffled,
    split_dataset,
    tool_usage_distribution,
)
from tacit.gateway import FunctionChatBackend, ModelGateway, ScriptedChatBackend, ToolCall
from tacit.runtime import Trajectory, TurnRecord

from conftest import make_gateway, make_task, reply


# ---------------------------------------------------------------------------
# Pinned shuffle
# ---------------------------------------------------------------------------

# First three states from seed 42, recomputed here from the recurrence
# with plain bignum arithmetic so the module can't grade its own homework.
def _lcg_states(seed, n):
    mask = (1 << 64) - 1
    state, out = seed & mask, []
    for _ in range(n):
        state = (state * 6364136223846793005 + 1442695040888963407) & mask
        out.append(state)
    return out


def test_lcg_matches_the_recurrence():
    rng = Lcg64(42)
    assert [rng.next_u64() for _ in range(3)] == _lcg_states(42, 3)
    assert _lcg_states(42, 3) == [
        10481999410520546993,
        4159066171780167020,
        7615522811268512075,
    ]


def test_lcg_masks_large_seeds():
    assert Lcg64(2**64 + 5).next_u64() == Lcg64(5).next_u64()


def test_shuffle_is_pinned_across_platforms():
    assert shuffled(list(range(8)), seed=7) == [6, 0, 1, 5, 3, 7, 4, 2]
    assert shuffled(["a", "b", "c", "d", "e"], seed=42) == ["b", "e", "c", "a", "d"]


def test_shuffle_does_not_mutate_input():
    items = [3, 1, 2]
    shuffled(items, seed=1)
    assert items == [3, 1, 2]


@given(st.lists(st.integers(), max_size=40), st.integers(min_value=0, max_value=2**64))
def test_shuffle_is_a_permutation(items, seed):
    assert sorted(shuffled(items, seed)) == sorted(items)
    assert shuffled(items, seed) == shuffled(items, seed)


def test_split_sizes_and_disjointness():
    items = [make_task(task_id=f"t{i}") for i in range(10)]
    split = split_dataset(items, train_n=6, test_n=3, seed=9)
    assert len(split.train) == 6 and len(split.test) == 3
    train_ids = {t.task_id for t in split.train}
    test_ids = {t.task_id for t in split.test}
    assert not train_ids & test_ids
    again = split_dataset(items, train_n=6, test_n=3, seed=9)
    assert split == again


def test_split_rejects_bad_sizes():
    items = [make_task(task_id=f"t{i}") for i in range(4)]
    with pytest.raises(InsufficientItemsError):
        split_dataset(items, train_n=3, test_n=2)
    with pytest.raises(InsufficientItemsError):
        split_dataset(items, train_n=-1, test_n=1)


# ---------------------------------------------------------------------------
# Task ingestion
# ---------------------------------------------------------------------------

def write_jsonl(path, lines):
    path.write_text("\n".join(json.dumps(l) if isinstance(l, dict) else l for l in lines) + "\n")


def test_load_tasks_reads_fields_and_images(tmp_path):
    (tmp_path / "img.png").write_bytes(b"fakepng")
    write_jsonl(
        tmp_path / "tasks.jsonl",
        [
            {"task_id": 7, "query": "Q1", "image_paths": ["img.png"], "ground_truth": "A", "category": "counting"},
            "",
            {"task_id": "t2", "query": "Q2"},
        ],
    )
    tasks = load_tasks(tmp_path / "tasks.jsonl")
    assert [t.task_id for t in tasks] == ["7", "t2"]
    assert tasks[0].images == (b"fakepng",)
    assert tasks[0].category == "counting"
    assert tasks[1].ground_truth == "" and tasks[1].images == ()


@pytest.mark.parametrize(
    "lines",
    [
        ["{not json"],
        [{"task_id": "a"}],  # missing query
        [{"query": "no id"}],
        [{"task_id": "a", "query": "q"}, {"task_id": "a", "query": "again"}],
    ],
)
def test_load_tasks_schema_errors(tmp_path, lines):
    write_jsonl(tmp_path / "bad.jsonl", lines)
    with pytest.raises(SchemaError):
        load_tasks(tmp_path / "bad.jsonl")


def test_load_tasks_missing_image(tmp_path):
    write_jsonl(tmp_path / "t.jsonl", [{"task_id": "a", "query": "q", "image_paths": ["gone.png"]}])
    with pytest.raises(StoreIoError):
        load_tasks(tmp_path / "t.jsonl")


# ---------------------------------------------------------------------------
# Graders
# ---------------------------------------------------------------------------

def test_normalize_answer():
    assert normalize_answer(None) == ""
    assert normalize_answer("  A   Cat\n") == "a cat"
    assert normalize_answer("Straße") == "strasse"  # casefold, not lower


def test_exact_and_containment():
    assert grade_exact_normalized(" A CAT ", "a  cat")
    assert not grade_exact_normalized("a cat!", "a cat")
    assert not grade_exact_normalized(None, "a cat")
    assert grade_containment("I think it is A Cat.", "a cat")
    assert not grade_containment("a cat", "")  # empty truth never matches
    assert not grade_containment(None, "a cat")


def test_model_judge_yes_no():
    gateway = make_gateway(
        kb_replies=[reply("Yes, these match.", tag="grading_judge"), reply("No.")]
    )
    judge = ModelJudge(gateway)
    assert judge("4", "four") is True
    assert judge("5", "four") is False
    assert judge.failures == []


def test_model_judge_survives_backend_outage():
    def always_down(messages, params, tag):
        raise BackendUnavailableError("503")

    gateway = ModelGateway(
        exec_backend=ScriptedChatBackend([]),
        kb_backend=FunctionChatBackend(always_down),
        max_attempts=2,
        sleeper=lambda _s: None,
    )
    judge = ModelJudge(gateway)
    assert judge("4", "four") is False
    assert len(judge.failures) == 1


def test_get_grader_registry():
    assert get_grader("exact_normalized") is grade_exact_normalized
    assert get_grader("containment") is grade_containment
    assert isinstance(get_grader("model_judge", make_gateway()), ModelJudge)
    with pytest.raises(ConfigError):
        get_grader("model_judge")
    with pytest.raises(ConfigError):
        get_grader("fuzzy")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def test_average_and_pass_hand_values():
    matrix = [[True, False, False, False], [False, False, False, False], [True, True, True, True]]
    assert average_at_n(matrix) == pytest.approx((0.25 + 0.0 + 1.0) / 3)
    assert pass_at_n(matrix) == pytest.approx(2 / 3)


def test_metrics_reject_empty_shapes():
    with pytest.raises(EmptyMatrixError):
        average_at_n([])
    with pytest.raises(EmptyMatrixError):
        pass_at_n([[True], []])


def trajectory_with_calls(names, task_id="t1", rollout=1, answer="x", errors=()):
    errors = dict(errors)
    turns = [
        TurnRecord(
            index=i + 1,
            assistant_text="",
            tool_call=ToolCall(name=name, arguments={}),
            observation="o",
            error_class=errors.get(i),
        )
        for i, name in enumerate(names)
    ]
    return Trajectory(
        task_id=task_id, rollout=rollout, turns=turns,
        final_answer=answer, terminated_reason="answered",
    )


def test_tool_usage_distribution_fractions():
    trajectories = [
        trajectory_with_calls(["web_search", "web_search", "visit"]),
        trajectory_with_calls(["code_interpreter"]),
    ]
    dist = tool_usage_distribution(trajectories)
    assert dist == {"code_interpreter": 0.25, "visit": 0.25, "web_search": 0.5}
    assert tool_usage_distribution([trajectory_with_calls([])]) == {}


def test_classify_errors_counts_and_rate():
    trajectories = [
        trajectory_with_calls(["web_search", "visit"], errors={1: "runtime"}),
        trajectory_with_calls(["code_interpreter"], errors={0: "syntax"}),
    ]
    breakdown = classify_errors(trajectories)
    assert breakdown.counts == {"runtime": 1, "syntax": 1}
    assert breakdown.total_calls == 3
    assert breakdown.rate == pytest.approx(2 / 3)
    assert classify_errors([]).rate == 0.0


def test_average_tool_calls():
    trajectories = [trajectory_with_calls(["a", "b"]), trajectory_with_calls([])]
    assert average_tool_calls(trajectories) == 1.0
    assert average_tool_calls([]) == 0.0


def test_build_report_covers_missing_tasks():
    tasks = [
        make_task(task_id="t1", ground_truth="4"),
        make_task(task_id="t2", ground_truth="9"),
    ]
    by_task = {
        "t1": [
            trajectory_with_calls(["web_search"], task_id="t1", answer="4"),
            trajectory_with_calls([], task_id="t1", rollout=2, answer="5"),
        ]
        # t2 produced nothing at all
    }
    report = build_report(tasks, by_task, grade_exact_normalized)
    assert report.n == 2
    assert report.per_task[0]["successes"] == [True, False]
    assert report.per_task[1]["successes"] == [False]
    assert report.per_task[1]["answers"] == []
    assert report.average_at_n == pytest.approx(0.25)
    assert report.pass_at_n == pytest.approx(0.5)
    text = report.render_text()
    assert "average@2: 0.2500" in text and "pass@2:    0.5000" in text
    obj = report.to_json_obj()
    assert obj["grader"] == "exact_normalized"
    assert obj["tool_distribution"] == {"web_search": 1.0}


@given(
    st.lists(
        st.lists(st.booleans(), min_size=1, max_size=6), min_size=1, max_size=20
    )
)
def test_average_never_exceeds_pass(matrix):
    assert average_at_n(matrix) <= pass_at_n(matrix) + 1e-12
