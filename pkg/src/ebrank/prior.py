"""Linear prior model mapping non-behavior features to the Beta prior.

alpha = softplus(w.x + b) + 1e-6 and beta is a fixed constant. The model is
fitted by maximising the Beta-Binomial marginal likelihood of the observed
(n, C) pairs with full-batch gradient descent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .eb_core import POSTERIOR_BETA_FLOOR
from .special import digamma, log_beta

log = logging.getLogger(__name__)

ALPHA_FLOOR = 1e-6
DEFAULT_BETA = 5.0


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


@dataclass
class PriorModel:
    weights: np.ndarray
    bias: float = 0.0
    beta_fixed: float = DEFAULT_BETA

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.beta_fixed <= 0:
            raise ValueError("beta_fixed must be positive")

    @classmethod
    def zeros(cls, feature_count: int, beta_fixed: float = DEFAULT_BETA) -> "PriorModel":
        return cls(np.zeros(feature_count), 0.0, beta_fixed)

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != len(self.weights):
            raise ValueError(f"expected {len(self.weights)} features, got {X.shape[-1]}")
        return X @ self.weights + self.bias

    def alpha(self, X):
        return softplus(self.logits(X)) + ALPHA_FLOOR

    def copy(self) -> "PriorModel":
        return PriorModel(self.weights.copy(), self.bias, self.beta_fixed)

    def to_text(self) -> str:
        return format_linear_checkpoint(self.weights, self.bias)

    @classmethod
    def from_text(cls, text: str, beta_fixed: float = DEFAULT_BETA) -> "PriorModel":
        weights, bias = parse_linear_checkpoint(text)
        return cls(weights, bias, beta_fixed)


def prior_forward(model: PriorModel, x):
    """Return ``(alpha, beta)`` for one feature vector (or a matrix of them)."""
    alpha = model.alpha(x)
    if np.ndim(alpha) == 0:
        return float(alpha), float(model.beta_fixed)
    return alpha, np.full_like(alpha, model.beta_fixed)


def _second_param(beta, n, C):
    raw = np.asarray(n, dtype=np.float64) - C + beta
    return np.maximum(raw, POSTERIOR_BETA_FLOOR), raw <= 0


def prior_loss(alpha, beta, n, C):
    """Negative log marginal likelihood ln B(a, b) - ln B(C + a, n - C + b).

    Zero wherever n == 0. The second posterior parameter is floored at 1e-3.
    """
    n_arr = np.asarray(n, dtype=np.float64)
    alpha, beta, n_arr, C = np.broadcast_arrays(
        np.asarray(alpha, dtype=np.float64), np.asarray(beta, dtype=np.float64),
        n_arr, np.asarray(C, dtype=np.float64))
    seen = n_arr > 0
    out = np.zeros(alpha.shape)
    if np.any(seen):
        b2, _ = _second_param(beta[seen], n_arr[seen], C[seen])
        a, c = alpha[seen], C[seen]
        lb = log_beta(np.concatenate([a, c + a]), np.concatenate([beta[seen], b2]))
        out[seen] = lb[:len(a)] - lb[len(a):]
    return float(out) if out.ndim == 0 else out


def prior_loss_grad_alpha(alpha, beta, n, C):
    """d(prior_loss)/d(alpha).

    psi(a) - psi(a + b) - (psi(C + a) - psi(n + a + b)); when the floor on
    n - C + b is active the last term uses the floored parameter so the
    result stays the derivative of :func:`prior_loss`.
    """
    alpha, beta, n_arr, C = np.broadcast_arrays(
        np.asarray(alpha, dtype=np.float64), np.asarray(beta, dtype=np.float64),
        np.asarray(n, dtype=np.float64), np.asarray(C, dtype=np.float64))
    seen = n_arr > 0
    out = np.zeros(alpha.shape)
    if np.any(seen):
        a, b, c = alpha[seen], beta[seen], C[seen]
        b2, _ = _second_param(b, n_arr[seen], c)
        psi = digamma(np.concatenate([a, a + b, c + a, c + a + b2])).reshape(4, -1)
        out[seen] = psi[0] - psi[1] - (psi[2] - psi[3])
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TrainExample:
    features: np.ndarray
    n: int
    C: float


@dataclass(frozen=True)
class TrainBatch:
    X: np.ndarray
    n: np.ndarray
    C: np.ndarray

    @classmethod
    def from_examples(cls, examples: Sequence[TrainExample], feature_count: int) -> "TrainBatch":
        if not examples:
            return cls(np.zeros((0, feature_count)), np.zeros(0), np.zeros(0))
        return cls(
            np.vstack([np.asarray(e.features, dtype=np.float64) for e in examples]),
            np.array([e.n for e in examples], dtype=np.float64),
            np.array([e.C for e in examples], dtype=np.float64),
        )

    def presented(self) -> "TrainBatch":
        keep = self.n > 0
        return TrainBatch(self.X[keep], self.n[keep], self.C[keep])

    def __len__(self):
        return len(self.n)


def prior_objective(model: PriorModel, batch: TrainBatch):
    """Mean loss over presented examples and its gradient in (w, b).

    Returns ``(loss, grad_w, grad_b, n_degenerate)``.
    """
    z = model.logits(batch.X)
    a = softplus(z) + ALPHA_FLOOR
    b = np.full_like(a, model.beta_fixed)
    C = batch.C
    count = len(batch)
    # Same formulas as prior_loss / prior_loss_grad_alpha, fused into one call
    # per special function. No n > 0 mask is needed: at n = 0 both terms cancel.
    b2, degenerate = _second_param(b, batch.n, C)
    lb = log_beta(np.concatenate([a, C + a]), np.concatenate([b, b2])).reshape(2, -1)
    psi = digamma(np.concatenate([a, a + b, C + a, C + a + b2])).reshape(4, -1)
    g_alpha = psi[0] - psi[1] - (psi[2] - psi[3])
    g_z = g_alpha * sigmoid(z)
    return (
        float(np.sum(lb[0] - lb[1])) / count,
        batch.X.T @ g_z / count,
        float(np.sum(g_z)) / count,
        int(np.count_nonzero(degenerate)),
    )


def train_prior(model: PriorModel,
                examples: Union[TrainBatch, Sequence[TrainExample]],
                learning_rate: float = 0.01,
                epochs: int = 200,
                history: Optional[List[float]] = None) -> PriorModel:
    """Full-batch gradient descent from ``model``; returns the best iterate.

    Only examples with n > 0 contribute. If none do, the input model is
    returned unchanged. Per-epoch losses are appended to ``history`` when
    given.
    """
    if not isinstance(examples, TrainBatch):
        examples = TrainBatch.from_examples(list(examples), len(model.weights))
    batch = examples.presented()
    if len(batch) == 0:
        log.warning("no presented examples; prior model left unchanged")
        return model

    current = model.copy()
    best, best_loss = current.copy(), np.inf
    for _ in range(epochs):
        loss, g_w, g_b, _ = prior_objective(current, batch)
        if history is not None:
            history.append(loss)
        if loss < best_loss:
            best, best_loss = current.copy(), loss
        current.weights = current.weights - learning_rate * g_w
        current.bias = current.bias - learning_rate * g_b
    loss = prior_objective(current, batch)[0]
    if loss < best_loss:
        best = current
    return best


def format_linear_checkpoint(weights, bias: float) -> str:
    lines = [f"bias {float(bias):.17g}"]
    lines += [f"w{i} {float(w):.17g}" for i, w in enumerate(np.asarray(weights))]
    return "\n".join(lines) + "\n"


def parse_linear_checkpoint(text: str):
    bias = None
    weights = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, _, value = line.strip().partition(" ")
        if key == "bias":
            bias = float(value)
        elif key.startswith("w") and key[1:].isdigit():
            weights[int(key[1:])] = float(value)
        else:
            raise ValueError(f"line {lineno}: unexpected key {key!r}")
    if bias is None:
        raise ValueError("checkpoint has no bias line")
    if sorted(weights) != list(range(len(weights))):
        raise ValueError("checkpoint weight indices are not contiguous from 0")
    return np.array([weights[i] for i in range(len(weights))]), bias
