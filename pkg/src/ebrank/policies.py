"""Rankers: EBRank and the BM25 / counterfactual / UCB baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, List, Optional, Sequence

import numpy as np

from .eb_core import BehaviorStats, StatsStore, marginal_certainty, posterior_mean, prior_mean
from .letor import QueryRecord
from .prior import PriorModel, format_linear_checkpoint, parse_linear_checkpoint, sigmoid
from .user_sim import ExaminationModel, RankedList

POLICY_KINDS = ("ebrank", "bm25", "cf_topk", "cf_randomk", "cf_epsilon", "ucbrank")
CF_KINDS = ("cf_topk", "cf_randomk", "cf_epsilon")

_PROB_CLIP = 1e-7


@dataclass(frozen=True)
class PolicySpec:
    """Which ranker to run.

    ``epsilon`` scales EBRank's marginal-certainty bonus. ``use_behavior``
    only matters for the CF kinds: when False the behavior column is held at
    zero, which is the non-behavior feature setting.
    """

    kind: str
    epsilon: float = 0.0
    use_behavior: bool = True

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; choose from {POLICY_KINDS}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    @property
    def label(self) -> str:
        if self.kind in CF_KINDS:
            return f"{self.kind}{'+behav' if self.use_behavior else ''}"
        return self.kind


@dataclass
class CfModel:
    """Linear scorer over [non-behavior features, C/n]. The last weight is the behavior one."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)

    @classmethod
    def zeros(cls, feature_count: int) -> "CfModel":
        return cls(np.zeros(feature_count + 1), 0.0)

    @property
    def feature_count(self) -> int:
        return len(self.weights) - 1

    def score(self, X, xb) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.weights[:-1] + self.weights[-1] * np.asarray(xb, dtype=np.float64) + self.bias

    def copy(self) -> "CfModel":
        return CfModel(self.weights.copy(), self.bias)

    def to_text(self) -> str:
        return format_linear_checkpoint(self.weights, self.bias)

    @classmethod
    def from_text(cls, text: str) -> "CfModel":
        return cls(*parse_linear_checkpoint(text))


def behavior_feature(n, C) -> np.ndarray:
    """C/n where presented, 0 otherwise."""
    n = np.asarray(n, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    return np.divide(C, n, out=np.zeros_like(C), where=n > 0)


def cf_loss(model: CfModel, X, xb, clicks, p_rank) -> float:
    """IPS-weighted pointwise cross-entropy summed over presentations."""
    p_rank = np.asarray(p_rank, dtype=np.float64)
    if np.any(p_rank <= 0):
        raise ValueError("every presentation needs a positive examination probability")
    w = np.asarray(clicks, dtype=np.float64) / p_rank
    prob = np.clip(sigmoid(model.score(X, xb)), _PROB_CLIP, 1 - _PROB_CLIP)
    return float(np.sum(-w * np.log(prob) - (1.0 - w) * np.log1p(-prob)))


def cf_loss_grad_score(model: CfModel, X, xb, clicks, p_rank) -> np.ndarray:
    """Per-presentation derivative of :func:`cf_loss` in the model score: sigma(s) - c/p."""
    w = np.asarray(clicks, dtype=np.float64) / np.asarray(p_rank, dtype=np.float64)
    return sigmoid(model.score(X, xb)) - w


def train_cf(model: CfModel, X, xb, n, C, learning_rate: float = 0.01, epochs: int = 200,
             history: Optional[List[float]] = None) -> CfModel:
    """Fit on aggregated logs: per item, the presentations sum to
    ``C * -ln(sigma) + (n - C) * -ln(1 - sigma)``, identical to summing
    :func:`cf_loss` over the individual sessions. Minimises the mean over
    presentations with full-batch gradient descent and returns the best
    iterate.
    """
    n = np.asarray(n, dtype=np.float64)
    keep = n > 0
    if not np.any(keep):
        return model
    X, xb, n, C = np.asarray(X)[keep], np.asarray(xb)[keep], n[keep], np.asarray(C)[keep]
    total = float(np.sum(n))
    design = np.column_stack([X, xb])

    def objective(m: CfModel):
        s = design @ m.weights + m.bias
        prob = np.clip(sigmoid(s), _PROB_CLIP, 1 - _PROB_CLIP)
        loss = float(np.sum(-C * np.log(prob) - (n - C) * np.log1p(-prob))) / total
        g_s = (n * sigmoid(s) - C) / total
        return loss, design.T @ g_s, float(np.sum(g_s))

    current = model.copy()
    best, best_loss = current.copy(), np.inf
    for _ in range(epochs):
        loss, g_w, g_b = objective(current)
        if history is not None:
            history.append(loss)
        if loss < best_loss:
            best, best_loss = current.copy(), loss
        current.weights = current.weights - learning_rate * g_w
        current.bias = current.bias - learning_rate * g_b
    if objective(current)[0] < best_loss:
        best = current
    return best


@dataclass
class ModelBundle:
    """Models a policy may consult; absent ones are None."""

    prior: Optional[PriorModel] = None
    cf: Optional[CfModel] = None
    cf_nb: Optional[CfModel] = None


@dataclass
class QueryState:
    """What a ranker sees when a query arrives."""

    query: QueryRecord
    active: Sequence[int]
    stats: StatsStore
    bm25_index: int
    t_total: int = 1


def score_ebrank(stats: BehaviorStats, epsilon: float):
    """Posterior mean plus ``epsilon`` times marginal certainty."""
    out = np.asarray(posterior_mean(stats)) + epsilon * np.asarray(marginal_certainty(stats))
    return float(out) if np.ndim(out) == 0 else out


def rank_items(item_ids: Sequence[Hashable], scores: Sequence[float], k: Optional[int] = None) -> List:
    """Descending by score, ties by ascending item id, truncated to ``k``."""
    if k is not None and k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    scores = [float(s) for s in scores]
    if len(scores) != len(item_ids):
        raise ValueError("item_ids and scores differ in length")
    if not all(math.isfinite(s) for s in scores):
        raise ValueError("scores must be finite")
    order = sorted(zip(item_ids, scores), key=lambda pair: (-pair[1], pair[0]))
    ranked = [item for item, _ in order]
    return ranked if k is None else ranked[:k]


def _ebrank_stats(prior: PriorModel, query: QueryRecord, items, stats: StatsStore) -> BehaviorStats:
    alpha = prior.alpha(query.features[items])
    return stats.for_items(query.query_id, items, alpha, prior.beta_fixed)


def _cf_scores(model: CfModel, query: QueryRecord, items, stats: StatsStore, use_behavior: bool):
    if use_behavior:
        n, C, _ = stats.arrays(query.query_id)
        xb = behavior_feature(n[items], C[items])
    else:
        xb = np.zeros(len(items))
    return model.score(query.features[items], xb)


def _ucb_estimate(model: CfModel, query: QueryRecord, items, stats: StatsStore, warm: bool = True):
    nb = sigmoid(model.score(query.features[items], np.zeros(len(items))))
    if not warm:
        return nb
    n, C, _ = stats.arrays(query.query_id)
    n_i, C_i = n[items], C[items]
    return np.where(n_i > 0, behavior_feature(n_i, C_i), nb)


def policy_scores(spec: PolicySpec, state: QueryState, models: ModelBundle,
                  rng: np.random.Generator) -> Optional[np.ndarray]:
    """Online serving scores over ``state.active``; None means a random permutation."""
    query, items = state.query, np.asarray(state.active, dtype=np.intp)
    if spec.kind == "bm25":
        return query.features[items, state.bm25_index]
    if spec.kind == "ebrank":
        return score_ebrank(_ebrank_stats(models.prior, query, items, state.stats), spec.epsilon)
    if spec.kind == "cf_topk":
        return _cf_scores(models.cf, query, items, state.stats, spec.use_behavior)
    if spec.kind == "cf_randomk":
        return None
    if spec.kind == "cf_epsilon":
        base = sigmoid(_cf_scores(models.cf, query, items, state.stats, spec.use_behavior))
        return base + rng.random(len(items))
    if spec.kind == "ucbrank":
        n, _, _ = state.stats.arrays(query.query_id)
        estimate = _ucb_estimate(models.cf_nb, query, items, state.stats)
        bonus = np.sqrt(2.0 * math.log(max(state.t_total, 1)) / np.maximum(n[items], 1.0))
        return estimate + bonus
    raise ValueError(f"unknown policy kind {spec.kind!r}")


def policy_rank(spec: PolicySpec, state: QueryState, models: ModelBundle,
                rng: np.random.Generator, exam: ExaminationModel = ExaminationModel()) -> RankedList:
    """Rank every active candidate for one session."""
    if len(state.active) == 0:
        raise ValueError(f"query {state.query.query_id} has no active candidates")
    scores = policy_scores(spec, state, models, rng)
    if scores is None:
        order = [state.active[i] for i in rng.permutation(len(state.active))]
    else:
        order = rank_items(list(state.active), scores)
    return RankedList.build(order, exam)


def offline_scores(spec: PolicySpec, models: ModelBundle, query: QueryRecord,
                   stats: StatsStore, warm: bool, bm25_index: int) -> np.ndarray:
    """Exploration-free scores for every item of a query.

    Cold scoring treats all items as never presented.
    """
    items = query.item_ids
    if spec.kind == "bm25":
        return query.features[:, bm25_index]
    if spec.kind == "ebrank":
        prior = models.prior
        alpha = prior.alpha(query.features)
        if not warm:
            return prior_mean(alpha, prior.beta_fixed)
        return posterior_mean(stats.for_items(query.query_id, items, alpha, prior.beta_fixed))
    if spec.kind in CF_KINDS:
        return _cf_scores(models.cf, query, items, stats, spec.use_behavior and warm)
    if spec.kind == "ucbrank":
        return _ucb_estimate(models.cf_nb, query, items, stats, warm=warm)
    raise ValueError(f"unknown policy kind {spec.kind!r}")
