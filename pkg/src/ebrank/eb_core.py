"""Behavior statistics and the Beta-posterior relevance estimate built on them.

A :class:`BehaviorStats` holds ``(alpha, beta, n, C, E)`` for one item, or
for a whole candidate set when the fields are numpy arrays; every function
here broadcasts, so rankers score a query in one call.
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, Tuple

import numpy as np

# Floor for the second posterior Beta parameter n - C + beta, which IPS
# weighting can push to zero or below.
POSTERIOR_BETA_FLOOR = 1e-3


@dataclass(frozen=True)
class BehaviorStats:
    alpha: float
    beta: float
    n: float = 0
    C: float = 0.0
    E: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.alpha) <= 0) or np.any(np.asarray(self.beta) <= 0):
            raise ValueError("alpha and beta must be positive")
        if np.any(np.asarray(self.n) < 0) or np.any(np.asarray(self.C) < 0) or np.any(np.asarray(self.E) < 0):
            raise ValueError("n, C and E must be nonnegative")


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    variance_bound: float
    mc: float


def update_stats(stats: BehaviorStats, rank: int, clicked: int, p_rank: float) -> BehaviorStats:
    """Fold one presentation at ``rank`` into the running sums.

    ``n += 1``, ``C += clicked / p_rank``, ``E += p_rank``. Only presentations
    inside the examined prefix count, so ``p_rank`` must lie in (0, 1].
    """
    if not 0.0 < p_rank <= 1.0:
        raise ValueError(f"p_rank must be in (0, 1], got {p_rank} at rank {rank}")
    if clicked not in (0, 1):
        raise ValueError(f"clicked must be 0 or 1, got {clicked}")
    return dataclasses.replace(
        stats,
        n=stats.n + 1,
        C=stats.C + clicked / p_rank,
        E=stats.E + p_rank,
    )


def posterior_mean(stats: BehaviorStats):
    """(C + alpha) / (n + alpha + beta), clamped to [0, 1]."""
    raw = (np.asarray(stats.C) + stats.alpha) / (np.asarray(stats.n) + stats.alpha + stats.beta)
    out = np.clip(raw, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def prior_mean(alpha, beta):
    out = np.asarray(alpha, dtype=np.float64) / (np.asarray(alpha) + beta)
    return float(out) if np.ndim(out) == 0 else out


def variance_bound(stats: BehaviorStats):
    """Upper-bound surrogate for Var[R_hat]: mean / (E + alpha + beta).

    The 1/p_min factor of the bound is a constant across items and is
    dropped, so this only orders uncertainty, it is not a variance.
    """
    out = posterior_mean(stats) / (np.asarray(stats.E) + stats.alpha + stats.beta)
    return float(out) if np.ndim(out) == 0 else out


def marginal_certainty(stats: BehaviorStats):
    """Rate at which the variance bound shrinks per unit of extra exposure."""
    out = posterior_mean(stats) / (np.asarray(stats.E) + stats.alpha + stats.beta) ** 2
    return float(out) if np.ndim(out) == 0 else out


def summarize(stats: BehaviorStats) -> PosteriorSummary:
    return PosteriorSummary(
        mean=posterior_mean(stats),
        variance_bound=variance_bound(stats),
        mc=marginal_certainty(stats),
    )


def posterior_params(stats: BehaviorStats) -> Tuple[object, object, object]:
    """Beta posterior ``(C + alpha, n - C + beta)`` with the second floored.

    Returns the two parameters and a boolean (array) marking entries that hit
    the floor.
    """
    a_post = np.asarray(stats.C) + stats.alpha
    b_raw = np.asarray(stats.n) - np.asarray(stats.C) + stats.beta
    degenerate = b_raw <= 0
    b_post = np.where(degenerate, POSTERIOR_BETA_FLOOR, b_raw)
    return a_post, b_post, degenerate


def query_uncertainty(stats: BehaviorStats) -> float:
    """Sum of per-item variance bounds; diagnostics only."""
    return float(np.sum(variance_bound(stats)))


class StatsStore:
    """Per-(query, item) presentation counts, IPS click sums and exposure.

    Storage is one float array per query, indexed by item position; an item
    that was never presented reads as zeros. Priors are not stored: callers
    attach (alpha, beta) from the current prior model on every read.
    """

    def __init__(self, sizes: Dict[str, int]):
        self._n = {qid: np.zeros(size) for qid, size in sizes.items()}
        self._C = {qid: np.zeros(size) for qid, size in sizes.items()}
        self._E = {qid: np.zeros(size) for qid, size in sizes.items()}

    def arrays(self, query_id: str):
        """Live ``(n, C, E)`` arrays for a query. Treat as read-only."""
        return self._n[query_id], self._C[query_id], self._E[query_id]

    def get(self, query_id: str, item_id: int, alpha: float, beta: float) -> BehaviorStats:
        n, C, E = self.arrays(query_id)
        return BehaviorStats(alpha=alpha, beta=beta, n=n[item_id], C=C[item_id], E=E[item_id])

    def for_items(self, query_id: str, item_ids, alpha, beta) -> BehaviorStats:
        n, C, E = self.arrays(query_id)
        idx = np.asarray(item_ids, dtype=np.intp)
        return BehaviorStats(alpha=alpha, beta=beta, n=n[idx], C=C[idx], E=E[idx])

    def record(self, query_id: str, item_ids, clicks, exam_probs) -> None:
        """Apply ``update_stats`` to every examined position of one session."""
        n, C, E = self.arrays(query_id)
        for item, click, p in zip(item_ids, clicks, exam_probs):
            if p <= 0:
                continue
            n[item] += 1
            C[item] += click / p
            E[item] += p

    def query_ids(self) -> Iterator[str]:
        return iter(self._n)

    def copy(self) -> "StatsStore":
        other = StatsStore({})
        other._n = {k: v.copy() for k, v in self._n.items()}
        other._C = {k: v.copy() for k, v in self._C.items()}
        other._E = {k: v.copy() for k, v in self._E.items()}
        return other

    def equals(self, other: "StatsStore") -> bool:
        if list(self._n) != list(other._n):
            return False
        return all(
            np.array_equal(mine[k], theirs[k])
            for mine, theirs in ((self._n, other._n), (self._C, other._C), (self._E, other._E))
            for k in mine
        )

    def dump(self) -> str:
        """Line format ``query_id item_id n C E``; untouched items are skipped."""
        buf = io.StringIO()
        for qid in self._n:
            n, C, E = self.arrays(qid)
            for item in np.flatnonzero(n):
                buf.write(f"{qid} {item} {int(n[item])} {float(C[item])!r} {float(E[item])!r}\n")
        return buf.getvalue()

    @classmethod
    def load(cls, text: str, sizes: Dict[str, int]) -> "StatsStore":
        store = cls(sizes)
        for lineno, line in enumerate(_nonblank(text.splitlines()), start=1):
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"line {lineno}: expected 5 fields, got {len(parts)}")
            qid, item = parts[0], int(parts[1])
            n, C, E = store.arrays(qid)
            n[item] = int(parts[2])
            C[item] = float(parts[3])
            E[item] = float(parts[4])
        return store


def _nonblank(lines: Iterable[str]) -> Iterator[str]:
    for line in lines:
        if line.strip():
            yield line
