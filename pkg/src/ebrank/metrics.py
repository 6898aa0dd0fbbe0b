"""DCG/NDCG with examination weights, discounted cumulative NDCG, offline
cold/warm evaluation and the per-feature exploitation ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .eb_core import StatsStore
from .letor import Dataset
from .policies import ModelBundle, PolicySpec, offline_scores, rank_items
from .user_sim import relevance_probability


@dataclass(frozen=True)
class MetricConfig:
    k_c: int = 5
    gamma: float = 0.995

    def __post_init__(self):
        if self.k_c < 1:
            raise ValueError("k_c must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")


def rank_weights(length: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, length + 2))


def dcg_at_k(relevances: Sequence[float], k_c: int) -> float:
    rel = np.asarray(relevances, dtype=np.float64)[:k_c]
    return float(np.sum(rel * rank_weights(len(rel))))


def ndcg_at_k(ranked: Sequence[float], ideal_pool: Sequence[float], k_c: int) -> float:
    """DCG of ``ranked`` over the DCG of ``ideal_pool`` sorted descending.

    ``ideal_pool`` should hold every candidate's relevance, including items
    that were not shown. Returns 0 when the ideal DCG is 0.
    """
    ideal = dcg_at_k(np.sort(np.asarray(ideal_pool, dtype=np.float64))[::-1], k_c)
    if ideal <= 0:
        return 0.0
    return dcg_at_k(ranked, k_c) / ideal


def cum_ndcg(series: Sequence[float], gamma: float) -> float:
    """sum_tau gamma**(t - tau) * series[tau], evaluated at the last step t."""
    values = np.asarray(series, dtype=np.float64)
    if values.size == 0:
        return 0.0
    powers = np.power(gamma, np.arange(values.size - 1, -1, -1, dtype=np.float64))
    return float(np.sum(powers * values))


@dataclass
class CumNdcg:
    """Streaming form: A_t = gamma * A_{t-1} + NDCG_t."""

    gamma: float
    value: float = 0.0
    series: List[float] = field(default_factory=list)

    def push(self, ndcg: float) -> float:
        self.value = self.gamma * self.value + ndcg
        self.series.append(ndcg)
        return self.value


def true_relevance(dataset: Dataset):
    """Relevance probability per item for every query of ``dataset``."""
    return {q.query_id: relevance_probability(q.labels, dataset.y_max) for q in dataset.queries}


def evaluate_offline(spec: PolicySpec, models: ModelBundle, dataset: Dataset, mode: str,
                     stats: StatsStore, k_c: int = 5) -> float:
    """Mean NDCG@k_c over the queries of ``dataset``, ranking all their items.

    ``mode`` is ``"cold"`` (every item treated as never presented) or
    ``"warm"`` (accumulated statistics used). Exploration terms are never
    applied here.
    """
    if mode not in ("cold", "warm"):
        raise ValueError(f"mode must be 'cold' or 'warm', got {mode!r}")
    if len(dataset) == 0:
        return 0.0
    values = []
    for q in dataset.queries:
        rel = relevance_probability(q.labels, dataset.y_max)
        scores = offline_scores(spec, models, q, stats, mode == "warm", dataset.bm25_feature_index)
        order = rank_items(list(q.item_ids), scores, k_c)
        values.append(ndcg_at_k(rel[order], rel, k_c))
    return float(np.mean(values))


def exploitation_ratio(weights: Sequence[float]) -> np.ndarray:
    """|w_j| / sum_i |w_i| for a linear model's feature weights."""
    mag = np.abs(np.asarray(weights, dtype=np.float64))
    total = mag.sum()
    if total == 0 or not np.isfinite(total):
        raise ValueError("exploitation ratio is undefined for all-zero weights")
    return mag / total
