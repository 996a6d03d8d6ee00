import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msoattn.metrics import (
    MetricsReport, UndefinedMetric, aggregate, episode_metrics, gt_rank, mean_rank, mrr, ndcg,
    rank_order, recall_at_k, reports_to_csv,
)


def test_ndcg_hand_example():
    value = ndcg([2.0, 1.0], [0.5, 1.0])
    dcg = 0.5 / math.log2(2) + 1.0 / math.log2(3)
    idcg = 1.0 / math.log2(2) + 0.5 / math.log2(3)
    assert value == pytest.approx(dcg / idcg, abs=1e-15)
    assert value == pytest.approx(0.8597, abs=1e-4)


def test_ndcg_ideal_order_is_one():
    rel = np.array([0.0, 1.0, 0.5, 0.0])
    assert ndcg(rel, rel) == 1.0
    with pytest.raises(UndefinedMetric):
        ndcg([1.0, 2.0], [0.0, 0.0])


def test_rank_metrics_hand_cases():
    assert (mrr([3, 1, 2], 0), recall_at_k([3, 1, 2], 0, 1), mean_rank([3, 1, 2], 0)) == (1.0, 1, 1)
    assert mrr([1.0, 3.0, 2.0, 0.5], 3) == pytest.approx(1 / 4)
    assert mrr([0.1, 0.9, 0.5], 0) == pytest.approx(1 / 3)
    assert gt_rank([1.0, 1.0, 1.0], 0) == 1
    assert gt_rank([1.0, 1.0, 1.0], 2) == 3
    with pytest.raises(ValueError):
        gt_rank([1.0], 3)


def test_rank_order_breaks_ties_by_index():
    np.testing.assert_array_equal(rank_order([1.0, 2.0, 2.0, 0.0, 1.0]), [1, 2, 0, 4, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=12), st.data())
def test_rank_order_is_a_permutation(scores, data):
    order = rank_order(scores)
    assert sorted(order.tolist()) == list(range(len(scores)))
    gt = data.draw(st.integers(0, len(scores) - 1))
    assert gt_rank(scores, gt) == int(np.flatnonzero(order == gt)[0]) + 1


def test_aggregate_scaling_and_means():
    one = episode_metrics([3.0, 2.0, 1.0], 0, [1.0, 0.0, 0.0])
    rep = aggregate([one])
    assert (rep.ndcg, rep.mrr, rep.r1, rep.mean, rep.episodes) == (100.0, 100.0, 100.0, 1.0, 1)
    third = episode_metrics([1.0, 2.0, 3.0], 0, [1.0, 0.0, 0.0])
    assert aggregate([one, third]).mrr == pytest.approx(100 * 2 / 3)
    with pytest.raises(ValueError):
        aggregate([])


def test_report_csv_is_deterministic():
    rep = aggregate([episode_metrics([0.3, 0.5, 0.2], 1, [0.5, 1.0, 0.0])])
    text = reports_to_csv([rep], ["a"])
    assert text.splitlines()[0] == "eval,NDCG,MRR,R@1,R@5,R@10,Mean"
    assert text == reports_to_csv([rep], ["a"])
    assert reports_to_csv([rep]).splitlines()[0] == ",".join(MetricsReport.COLUMNS)
