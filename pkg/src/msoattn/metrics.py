"""Retrieval metrics over candidate scores.

Rank order is by descending score with ties broken by ascending candidate
index. NDCG uses raw relevance as gain, log2 discounts and the cutoff
k = number of positively relevant candidates.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np


class UndefinedMetric(ValueError):
    pass


def rank_order(scores: Sequence[float]) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    # lexsort sorts by the last key first
    return np.lexsort((np.arange(s.size), -s))


def gt_rank(scores: Sequence[float], gt_index: int) -> int:
    s = np.asarray(scores, dtype=np.float64)
    if not 0 <= gt_index < s.size:
        raise ValueError(f"ground-truth index {gt_index} out of range for {s.size} candidates")
    g = s[gt_index]
    # strictly better scores, plus equal scores at a smaller index
    return int(np.sum(s > g) + np.sum(s[:gt_index] == g)) + 1


def mrr(scores, gt_index: int) -> float:
    return 1.0 / gt_rank(scores, gt_index)


def recall_at_k(scores, gt_index: int, k: int) -> int:
    return int(gt_rank(scores, gt_index) <= k)


def mean_rank(scores, gt_index: int) -> int:
    return gt_rank(scores, gt_index)


def ndcg(scores, relevance) -> float:
    rel = np.asarray(relevance, dtype=np.float64)
    k = int(np.sum(rel > 0))
    if k == 0:
        raise UndefinedMetric("NDCG is undefined when no candidate has positive relevance")
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float(np.sum(rel[rank_order(scores)[:k]] * discounts))
    idcg = float(np.sum(np.sort(rel)[::-1][:k] * discounts))
    return dcg / idcg


@dataclass
class EpisodeMetrics:
    ndcg: float
    mrr: float
    r1: int
    r5: int
    r10: int
    rank: int


def episode_metrics(scores, gt_index: int, relevance) -> EpisodeMetrics:
    r = gt_rank(scores, gt_index)
    return EpisodeMetrics(
        ndcg=ndcg(scores, relevance),
        mrr=1.0 / r,
        r1=int(r <= 1),
        r5=int(r <= 5),
        r10=int(r <= 10),
        rank=r,
    )


@dataclass
class MetricsReport:
    """Means over episodes; NDCG, MRR and recalls on a 0-100 scale."""

    ndcg: float
    mrr: float
    r1: float
    r5: float
    r10: float
    mean: float
    episodes: int

    COLUMNS = ("NDCG", "MRR", "R@1", "R@5", "R@10", "Mean")

    def row(self) -> list[str]:
        return [f"{v:.6f}" for v in (self.ndcg, self.mrr, self.r1, self.r5, self.r10, self.mean)]

    def as_dict(self) -> dict:
        return asdict(self)


def aggregate(per_episode: Iterable[EpisodeMetrics]) -> MetricsReport:
    items = list(per_episode)
    if not items:
        raise ValueError("cannot aggregate an empty list of episode metrics")
    arr = np.array([[m.ndcg, m.mrr, m.r1, m.r5, m.r10, m.rank] for m in items], dtype=np.float64)
    means = arr.mean(axis=0)
    return MetricsReport(
        ndcg=100.0 * means[0],
        mrr=100.0 * means[1],
        r1=100.0 * means[2],
        r5=100.0 * means[3],
        r10=100.0 * means[4],
        mean=means[5],
        episodes=len(items),
    )


def reports_to_csv(reports: Sequence[MetricsReport], labels: Sequence[str] | None = None,
                   label_column: str = "eval") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = list(MetricsReport.COLUMNS)
    w.writerow(([label_column] if labels is not None else []) + head)
    for i, r in enumerate(reports):
        w.writerow(([labels[i]] if labels is not None else []) + r.row())
    return buf.getvalue()
