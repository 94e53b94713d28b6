"""Similarity search over the bank index, checked against a numpy oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tacit.errors import DimensionMismatchError
from tacit.retrieval import BankIndex, ScoredMatch, load_vectors, save_vectors
from tacit.store.bank import numeric_suffix

from conftest import make_bank, make_embedder


def oracle_top_k(vectors, query, k, tau_min):
    """Exhaustive reference: numpy cosines, full sort, strict threshold."""
    q = np.asarray(query, dtype=float)
    scored = []
    for entry_id, vec in vectors.items():
        v = np.asarray(vec, dtype=float)
        score = float(q @ v / (np.linalg.norm(q) * np.linalg.norm(v)))
        scored.append((entry_id, score))
    scored.sort(key=lambda t: (-t[1], numeric_suffix(t[0])))
    return [(i, s) for i, s in scored if s > tau_min][:k]


def test_scores_rank_descending_with_id_tiebreak():
    index = BankIndex.from_vectors(
        {
            "E0": (1.0, 0.0),
            "E1": (0.0, 1.0),
            "E2": (1.0, 0.0),  # exact tie with E0
        }
    )
    ranked = index.scores((1.0, 0.0))
    assert [m.entry_id for m in ranked] == ["E0", "E2", "E1"]


def test_tiebreak_is_numeric_not_lexicographic():
    index = BankIndex.from_vectors({"E2": (1.0, 0.0), "E10": (1.0, 0.0)})
    ranked = index.scores((1.0, 0.0))
    assert [m.entry_id for m in ranked] == ["E2", "E10"]


def test_top_k_threshold_is_strict():
    index = BankIndex.from_vectors(
        {
            "E0": (1.0, 0.0),   # score 1.0
            "E1": (0.0, 1.0),   # score 0.0, excluded by tau_min=0.0
            "E2": (-1.0, 0.0),  # score -1.0
        }
    )
    kept = index.top_k((1.0, 0.0), k=3, tau_min=0.0)
    assert [m.entry_id for m in kept] == ["E0"]
    # at tau_min just below zero the orthogonal entry comes back
    kept = index.top_k((1.0, 0.0), k=3, tau_min=-1e-9)
    assert [m.entry_id for m in kept] == ["E0", "E1"]


def test_top_k_handles_empty_index_and_nonpositive_k():
    index = BankIndex()
    assert index.top_k((1.0, 0.0), k=3) == []
    index.put("E0", (1.0, 0.0))
    assert index.top_k((1.0, 0.0), k=0) == []


def test_union_retrieve_keeps_best_score_per_id():
    index = BankIndex.from_vectors(
        {
            "E0": (1.0, 0.0),
            "E1": (0.6, 0.8),
            "E2": (0.0, 1.0),
        }
    )
    out = index.union_retrieve([(1.0, 0.0), (0.0, 1.0)], k=2, tau_min=0.0)
    by_id = {m.entry_id: m.score for m in out}
    # E1 scores 0.6 against the first query and 0.8 against the second
    assert by_id["E1"] == pytest.approx(0.8)
    assert out[0].entry_id == "E0" or out[0].score >= out[-1].score


def test_put_rejects_dimension_drift():
    index = BankIndex.from_vectors({"E0": (1.0, 0.0)})
    with pytest.raises(DimensionMismatchError):
        index.put("E1", (1.0, 0.0, 0.0))


def test_discard_is_idempotent():
    index = BankIndex.from_vectors({"E0": (1.0, 0.0)})
    index.discard("E0")
    index.discard("E0")
    assert len(index) == 0


def test_build_covers_every_bank_entry():
    bank = make_bank(["tip one", "tip two", "tip three"])
    index = BankIndex.build(bank, make_embedder(dim=6))
    assert index.ids() == bank.ids()
    assert index.dim == 6


def test_save_load_vectors_round_trip(tmp_path):
    index = BankIndex.from_vectors({"E0": (1.0, 0.0), "E3": (0.0, 1.0)})
    path = tmp_path / "embeddings.json"
    save_vectors(index, path)
    loaded = load_vectors(path)
    assert loaded.dim == 2
    assert dict(loaded.items()) == dict(index.items())


# ---------------------------------------------------------------------------
# Property: implementation == oracle on random instances
#
# Coordinates are small integers so the cosine arithmetic is exact on
# both sides: integer dot products and squared norms are representable,
# sqrt and division round identically, and ties are true ties.
# ---------------------------------------------------------------------------

unit_coord = st.integers(-9, 9).map(float)


def vectors_of(dim, n):
    nonzero = st.lists(unit_coord, min_size=dim, max_size=dim).filter(lambda v: any(v))
    return st.lists(nonzero, min_size=n, max_size=n)


@given(data=st.data(), dim=st.integers(2, 6), n=st.integers(1, 30))
@settings(max_examples=60, deadline=None)
def test_top_k_matches_oracle(data, dim, n):
    vecs = data.draw(vectors_of(dim, n))
    query = data.draw(st.lists(unit_coord, min_size=dim, max_size=dim).filter(lambda v: any(v)))
    k = data.draw(st.integers(1, n + 2))
    tau = data.draw(st.sampled_from([-1.0, -0.5, 0.0, 0.3, 0.9]))

    table = {f"E{i}": tuple(v) for i, v in enumerate(vecs)}
    index = BankIndex.from_vectors(table)
    got = [(m.entry_id, m.score) for m in index.top_k(tuple(query), k=k, tau_min=tau)]
    want = oracle_top_k(table, query, k, tau)
    assert [i for i, _ in got] == [i for i, _ in want]
    for (_, a), (_, b) in zip(got, want):
        assert a == pytest.approx(b, abs=1e-9)
