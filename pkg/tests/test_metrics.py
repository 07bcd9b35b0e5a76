"""Retrieval metrics against a brute-force rank/precision oracle."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from textreid.metrics import MetricsError, RetrievalResult, csv_header, csv_row, evaluate


def brute_force_oracle(sim, query_ids, gallery_ids, ks):
    """Independent implementation: explicit (score, index) sort per query,
    then enumerate every relevant rank and average the precisions."""
    q, g = sim.shape
    rank_hits = {k: 0 for k in ks}
    aps = []
    for i in range(q):
        order = sorted(range(g), key=lambda j: (-sim[i, j], j))
        rel = [gallery_ids[j] == query_ids[i] for j in order]
        for k in ks:
            if any(rel[:k]):
                rank_hits[k] += 1
        precisions = []
        seen = 0
        for rank, is_rel in enumerate(rel, start=1):
            if is_rel:
                seen += 1
                precisions.append(seen / rank)
        aps.append(sum(precisions) / len(precisions))
    return {k: rank_hits[k] / q for k in ks}, sum(aps) / q


def test_perfect_permutation_ranking():
    q = 6
    sim = np.eye(q) * 10.0 + np.random.default_rng(0).random((q, q))
    ids = np.arange(q)
    result = evaluate(sim, ids, ids)
    assert result.rank_at[1] == 1.0
    assert result.mean_ap == 1.0


def test_true_match_second_of_two():
    sim = np.array([[0.2, 0.9]])
    result = evaluate(sim, query_ids=np.array([7]), gallery_ids=np.array([7, 3]))
    assert result.rank_at[1] == 0.0
    assert result.mean_ap == pytest.approx(0.5, abs=0)


def test_fifty_random_matrices_match_oracle():
    rng = np.random.default_rng(42)
    for _ in range(50):
        sim = rng.normal(size=(8, 20))
        gallery_ids = rng.integers(0, 5, size=20)
        query_ids = rng.choice(np.unique(gallery_ids), size=8)
        result = evaluate(sim, query_ids, gallery_ids)
        want_rank, want_map = brute_force_oracle(sim, query_ids, gallery_ids, (1, 5, 10))
        for k in (1, 5, 10):
            assert result.rank_at[k] == pytest.approx(want_rank[k], abs=1e-12)
        assert result.mean_ap == pytest.approx(want_map, abs=1e-12)


def test_rank_monotonic_in_k():
    rng = np.random.default_rng(1)
    sim = rng.normal(size=(10, 15))
    gallery_ids = rng.integers(0, 4, size=15)
    query_ids = rng.choice(np.unique(gallery_ids), size=10)
    result = evaluate(sim, query_ids, gallery_ids)
    assert result.rank_at[1] <= result.rank_at[5] <= result.rank_at[10]


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=30, deadline=None)
def test_invariant_under_increasing_transform(seed):
    rng = np.random.default_rng(seed)
    sim = rng.normal(size=(5, 9))
    gallery_ids = rng.integers(0, 3, size=9)
    query_ids = rng.choice(np.unique(gallery_ids), size=5)
    base = evaluate(sim, query_ids, gallery_ids)
    squashed = evaluate(np.tanh(sim) * 3.0 + 1.0, query_ids, gallery_ids)
    assert base.rank_at == squashed.rank_at
    assert base.mean_ap == pytest.approx(squashed.mean_ap, abs=1e-12)


def test_lowest_scored_irrelevant_item_changes_nothing():
    rng = np.random.default_rng(2)
    sim = rng.normal(size=(4, 6))
    gallery_ids = np.array([0, 1, 2, 0, 1, 2])
    query_ids = np.array([0, 1, 2, 0])
    base = evaluate(sim, query_ids, gallery_ids)
    extended = np.concatenate([sim, np.full((4, 1), sim.min() - 5.0)], axis=1)
    grown = evaluate(extended, query_ids, np.concatenate([gallery_ids, [99]]))
    assert base.rank_at == grown.rank_at
    assert base.mean_ap == pytest.approx(grown.mean_ap, abs=1e-12)


def test_ties_break_by_gallery_index():
    sim = np.array([[1.0, 1.0]])
    # Same score: index 0 wins, so a match at index 0 is rank 1...
    r = evaluate(sim, np.array([5]), np.array([5, 6]))
    assert r.rank_at[1] == 1.0
    # ...and a match at index 1 is rank 2.
    r = evaluate(sim, np.array([6]), np.array([5, 6]))
    assert r.rank_at[1] == 0.0


def test_query_identity_missing_from_gallery_rejected():
    with pytest.raises(MetricsError, match="absent"):
        evaluate(np.ones((1, 2)), np.array([9]), np.array([1, 2]))


def test_nan_scores_rejected():
    sim = np.array([[np.nan, 1.0]])
    with pytest.raises(MetricsError, match="NaN"):
        evaluate(sim, np.array([1]), np.array([1, 2]))


def test_json_and_csv_emission():
    result = RetrievalResult(rank_at={1: 0.5, 5: 0.75, 10: 1.0}, mean_ap=0.6,
                             num_queries=8)
    blob = result.to_dict()
    assert blob == {"rank1": 0.5, "rank5": 0.75, "rank10": 1.0, "map": 0.6,
                    "num_queries": 8}
    assert csv_header() == "r1,r5,r10,map"
    assert csv_row(result) == "0.500000,0.750000,1.000000,0.600000"
