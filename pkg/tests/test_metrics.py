import math
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cirplan.errors import DataError
from cirplan.metrics import (
    average_precision_at_k,
    f1_components,
    fallback_order,
    map_at_k,
    ndcg_at_k,
    rank_final_set,
    recall_at_k,
    relevance_score,
)
from cirplan.model import AtomicRetrieval, CandidateSet
from oracles import naive_ap, naive_ndcg, naive_recall


def test_closed_forms():
    assert average_precision_at_k([1, 9, 2], {1, 2}, 3) == Fraction(5, 6)
    assert ndcg_at_k([9, 1], {1}, 2) == pytest.approx(1 / math.log2(3), abs=0)
    assert recall_at_k([1, 9, 2], {1, 2, 3}, 2) == Fraction(1, 3)


def test_ap_normalized_by_cutoff_when_gt_is_large():
    assert average_precision_at_k([1, 2], set(range(1, 10)), 2) == 1


def test_map_batch():
    assert map_at_k([([1], {1}), ([9], {1})], 1) == Fraction(1, 2)
    with pytest.raises(DataError):
        map_at_k([], 1)


def test_metric_errors():
    with pytest.raises(DataError):
        recall_at_k([1], set(), 1)
    with pytest.raises(DataError):
        recall_at_k([1], {1}, 0)
    with pytest.raises(DataError):
        ndcg_at_k([1, 1], {1}, 2)


def test_against_naive_reimplementation():
    rng = random.Random(0)
    for _ in range(300):
        n = rng.randint(0, 60)
        ranking = rng.sample(range(100), n)
        gt = set(rng.sample(range(100), rng.randint(1, 8)))
        k = rng.choice([1, 5, 10, 25, 50])
        assert abs(float(recall_at_k(ranking, gt, k)) - naive_recall(ranking, gt, k)) < 1e-12
        assert abs(float(average_precision_at_k(ranking, gt, k)) - naive_ap(ranking, gt, k)) < 1e-12
        assert abs(ndcg_at_k(ranking, gt, k) - naive_ndcg(ranking, gt, k)) < 1e-12


@given(st.floats(-700, 700), st.floats(-700, 700))
def test_sigmoid_complement(a, b):
    assert abs(relevance_score(a, b) + relevance_score(b, a) - 1) < 1e-12


def test_sigmoid_edges():
    assert relevance_score(3.2, 3.2) == 0.5
    assert relevance_score(-745.0, 0.0) >= 0
    assert relevance_score(800.0, 0.0) == 1.0
    with pytest.raises(DataError):
        relevance_score(float("inf"), 0)


def test_sigmoid_matches_high_precision():
    mpmath = pytest.importorskip("mpmath")
    for gap in (-709.0, -40.0, -1e-9, 0.3, 36.0):
        exact = 1 / (1 + mpmath.exp(-mpmath.mpf(gap)))
        assert abs(relevance_score(gap, 0.0) - float(exact)) <= 1e-15 * max(float(exact), 1e-300) + 1e-300


def test_rank_final_set_orders_scored_then_fallback():
    r = AtomicRetrieval(0, "t", "q", "+", 4, (5, 6, 7, 8))
    final = CandidateSet({5, 6, 7, 8})
    order = rank_final_set(final, {7: 0.9, 6: 0.9, 8: 0.1}, fallback_order(final, [r]))
    assert order == [6, 7, 8, 5]


def test_rank_requires_some_rank():
    with pytest.raises(DataError):
        rank_final_set(CandidateSet({1}), {}, {})


def test_f1_components():
    out = f1_components(CandidateSet({1, 2, 3}), CandidateSet({1, 2}))
    assert out == {"precision": Fraction(2, 3), "recall": 1, "f1": Fraction(4, 5)}
    assert f1_components(CandidateSet(), CandidateSet({1}))["f1"] == 0
