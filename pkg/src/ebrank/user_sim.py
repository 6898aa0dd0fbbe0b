"""Simulated users: position/selection-biased clicks and cold-start arrivals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .letor import QueryRecord

NOISE_FLOOR = 0.1
INITIAL_MIN = 5
INITIAL_MAX = 10


def relevance_probability(y, y_max: int, noise_floor: float = NOISE_FLOOR):
    """Map graded labels to click-if-examined probabilities.

    ``noise_floor + (1 - noise_floor) * (2**y - 1) / (2**y_max - 1)``; works
    on scalars and arrays.
    """
    if y_max < 1:
        raise ValueError(f"y_max must be >= 1, got {y_max}")
    arr = np.asarray(y)
    if np.any(arr < 0) or np.any(arr > y_max):
        raise ValueError(f"label outside [0, {y_max}]: {y!r}")
    gain = (np.power(2.0, arr) - 1.0) / (2.0 ** y_max - 1.0)
    out = noise_floor + (1.0 - noise_floor) * gain
    return float(out) if np.ndim(out) == 0 else out


def examination_probability(rank: int, k_s: int = 5) -> float:
    if rank < 1:
        raise ValueError(f"ranks start at 1, got {rank}")
    if rank > k_s:
        return 0.0
    return 1.0 / math.log2(rank + 1)


@dataclass(frozen=True)
class ExaminationModel:
    k_s: int = 5

    def probs(self, length: int) -> np.ndarray:
        """Examination probability for ranks 1..length."""
        ranks = np.arange(1, length + 1)
        p = 1.0 / np.log2(ranks + 1.0)
        p[ranks > self.k_s] = 0.0
        return p


@dataclass(frozen=True)
class RankedList:
    items: Tuple[int, ...]
    exam_probs: np.ndarray
    cutoff: int

    @classmethod
    def build(cls, items: Sequence[int], exam: ExaminationModel) -> "RankedList":
        items = tuple(int(i) for i in items)
        if len(set(items)) != len(items):
            raise ValueError("ranked list contains duplicates")
        return cls(items, exam.probs(len(items)), exam.k_s)

    def __len__(self):
        return len(self.items)

    def examined(self) -> Tuple[Tuple[int, ...], np.ndarray]:
        """Items and probabilities of the prefix that can receive clicks."""
        k = min(self.cutoff, len(self.items))
        return self.items[:k], self.exam_probs[:k]


def sample_clicks(ranked: RankedList, rel_probs, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(p_rank * R) click per rank; ``rel_probs`` aligned with ``ranked.items``."""
    rel = np.asarray(rel_probs, dtype=np.float64)
    if rel.shape != (len(ranked),):
        raise ValueError("rel_probs must align with the ranked items")
    u = rng.random(len(ranked))
    return (u < ranked.exam_probs * rel).astype(np.int8)


def init_candidates(query: QueryRecord, rng: np.random.Generator,
                    initial_min: int = INITIAL_MIN, initial_max: int = INITIAL_MAX):
    """Draw the initial active set; returns ``(active, masked)`` item-id lists."""
    size = len(query)
    draw = int(rng.integers(initial_min, initial_max + 1))
    n_active = min(size, draw)
    order = rng.permutation(size)
    active = sorted(int(i) for i in order[:n_active])
    masked = [int(i) for i in order[n_active:]]
    return active, masked


@dataclass
class ArrivalProcess:
    """Per-query active candidate sets and the masked pools that feed them."""

    eta: float = 1.0
    active: Dict[str, List[int]] = field(default_factory=dict)
    masked: Dict[str, List[int]] = field(default_factory=dict)
    initial_min: int = INITIAL_MIN
    initial_max: int = INITIAL_MAX

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")

    @classmethod
    def start(cls, queries: Sequence[QueryRecord], eta: float, rng: np.random.Generator,
              initial_min: int = INITIAL_MIN, initial_max: int = INITIAL_MAX) -> "ArrivalProcess":
        proc = cls(eta=eta, initial_min=initial_min, initial_max=initial_max)
        for q in queries:
            proc.active[q.query_id], proc.masked[q.query_id] = init_candidates(
                q, rng, initial_min, initial_max)
        return proc

    def step(self, query_id: str, rng: np.random.Generator) -> Optional[int]:
        return step_arrival(self, query_id, rng)


def step_arrival(process: ArrivalProcess, query_id: str, rng: np.random.Generator) -> Optional[int]:
    """With probability eta move one uniformly drawn masked item into the active set."""
    pool = process.masked[query_id]
    if not pool:
        return None
    if rng.random() >= process.eta:
        return None
    item = pool.pop(int(rng.integers(len(pool))))
    process.active[query_id].append(item)
    return item


def session_count(num_queries: int, avg_docs: float, eta: float) -> int:
    """Number of online sessions: queries * (avg_docs - 5) / eta, floored."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return max(0, math.floor(num_queries * (avg_docs - INITIAL_MIN) / eta + 1e-9))
