"""Retrieval metrics for ranked candidate answers."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


@dataclass
class MetricsReport:
    mrr: float
    r1: float
    r5: float
    r10: float
    mean: float
    ndcg: float | None
    count: int

    def as_dict(self) -> dict:
        return asdict(self)

    def __str__(self) -> str:
        ndcg = "n/a" if self.ndcg is None else f"{self.ndcg:.4f}"
        return (
            f"MRR {self.mrr:.4f}  R@1 {self.r1:.4f}  R@5 {self.r5:.4f}  "
            f"R@10 {self.r10:.4f}  Mean {self.mean:.2f}  NDCG {ndcg}  (n={self.count})"
        )


def ndcg(relevance_by_rank: Sequence[float]) -> float | None:
    """NDCG@k with k the number of relevant (> 0) candidates.

    ``relevance_by_rank`` lists candidate relevances in predicted-rank order.
    Returns None when nothing is relevant.
    """
    rel = np.asarray(relevance_by_rank, dtype=np.float64)
    k = int((rel > 0).sum())
    if k == 0:
        return None
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float((rel[:k] * discounts).sum())
    ideal = float((np.sort(rel)[::-1][:k] * discounts).sum())
    return dcg / ideal


def compute_metrics(gt_ranks: Sequence[int], relevance_by_rank: Sequence[Sequence[float]] | None = None) -> MetricsReport:
    ranks = np.asarray(gt_ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("no ranks to evaluate")
    if (ranks < 1).any():
        raise ValueError("ranks start at 1")
    score = None
    if relevance_by_rank is not None:
        vals = [v for v in (ndcg(r) for r in relevance_by_rank) if v is not None]
        score = float(np.mean(vals)) if vals else None
    return MetricsReport(
        mrr=float(np.mean(1.0 / ranks)),
        r1=float(np.mean(ranks <= 1)),
        r5=float(np.mean(ranks <= 5)),
        r10=float(np.mean(ranks <= 10)),
        mean=float(np.mean(ranks)),
        ndcg=score,
        count=int(ranks.size),
    )


def expected_uniform_mrr(n_candidates: int) -> tuple[float, float]:
    """Mean and standard deviation of 1/rank when the rank is uniform on 1..n."""
    inv = 1.0 / np.arange(1, n_candidates + 1)
    mu = float(inv.mean())
    return mu, float(np.sqrt((inv**2).mean() - mu**2))
