"""Evidential heads: Dirichlet evidence, uncertainty, and the evidential loss.

Classes are numbered 1..K throughout, matching the label convention of the
cube format (0 is background, never a class). Evidence is clamped nonnegative
and offset by a small epsilon so the Dirichlet parameters stay valid.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from . import numerics as nx
from .layers import Linear

EPSILON = 1e-6
ESTIMATOR_KINDS = ("edl", "softmax_conf", "entropy", "temp_scaling")


@dataclass
class DirichletOutput:
    """Per-sample Dirichlet summary: rows are samples, columns classes."""

    evidence: np.ndarray
    alpha: np.ndarray
    strength: np.ndarray
    probs: np.ndarray
    uncertainty: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.alpha.shape[1]

    def validate(self) -> None:
        if np.any(self.alpha < 1.0):
            raise ValueError("alpha must be >= 1 component-wise")
        if not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("expected probabilities must sum to 1")
        if np.any(self.uncertainty <= 0.0) or np.any(self.uncertainty > 1.0 + 1e-9):
            raise ValueError("uncertainty must lie in (0, 1]")


def dirichlet_from_evidence(evidence: np.ndarray) -> DirichletOutput:
    e = np.atleast_2d(np.asarray(evidence, dtype=np.float64))
    if not np.isfinite(e).all():
        raise FloatingPointError("non-finite evidence")
    if np.any(e < 0.0):
        raise ValueError("evidence must be nonnegative")
    k = e.shape[1]
    alpha = e + 1.0
    strength = alpha.sum(axis=1)
    probs = alpha / strength[:, None]
    uncertainty = k / strength
    return DirichletOutput(evidence=e, alpha=alpha, strength=strength, probs=probs, uncertainty=uncertainty)


class EvidenceHead:
    """Linear head whose rectified output is Dirichlet evidence."""

    def __init__(self, dim: int, num_classes: int, rng: np.random.Generator, eps: float = EPSILON, dtype=np.float32):
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.num_classes = num_classes
        self.eps = eps
        # zero bias so evidence vanishes off the training manifold; the
        # rectifier then only rewards directions the weights have learned.
        # unit-scale inputs and gain 1.0 leave roughly half of each class
        # firing at the start, which is enough gradient to stay alive
        self.linear = Linear(dim, num_classes, rng, gain=1.0, dtype=dtype)

    def __call__(self, f) -> nx.Tensor:
        """Evidence tensor e = relu(Wf + b) + eps, differentiable."""
        return nx.add(nx.relu(self.linear(f)), self.eps)

    def dirichlet(self, f) -> DirichletOutput:
        data = f.data if isinstance(f, nx.Tensor) else np.asarray(f)
        if not np.isfinite(data).all():
            raise FloatingPointError("non-finite pathway features")
        out = self(nx.Tensor(data, dtype=data.dtype))
        if not np.isfinite(out.data).all():
            raise FloatingPointError("non-finite head output")
        return dirichlet_from_evidence(out.data)

    def params(self) -> List[nx.Tensor]:
        return self.linear.params()


def _one_hot(y, num_classes: int) -> np.ndarray:
    """1-based class labels to one-hot rows."""
    arr = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if np.any(arr < 1) or np.any(arr > num_classes):
        raise ValueError(f"class labels must lie in 1..{num_classes}")
    hot = np.zeros((arr.size, num_classes))
    hot[np.arange(arr.size), arr - 1] = 1.0
    return hot


def edl_loss(alpha, y, lam_reg: float = 0.2) -> nx.Tensor:
    """Evidential loss: squared error of expected probabilities against the
    one-hot target plus lam_reg times the total off-class alpha mass.

    ``alpha`` may be a (K,) or (N, K) array or Tensor; the result is the mean
    over samples. ``y`` uses 1-based class ids.
    """
    a = alpha if isinstance(alpha, nx.Tensor) else nx.Tensor(np.asarray(alpha, dtype=np.float64))
    if a.data.ndim == 1:
        a = nx.reshape(a, (1, -1))
    k = a.data.shape[1]
    target = _one_hot(y, k)
    if target.shape[0] != a.data.shape[0]:
        raise ValueError("label count does not match alpha rows")
    strength = nx.reduce_sum(a, axis=1, keepdims=True)
    probs = nx.div(a, strength)
    mse = nx.reduce_sum(nx.square(nx.sub(target, probs)), axis=1)
    reg = nx.reduce_sum(nx.mul(a, 1.0 - target), axis=1)
    per_sample = nx.add(mse, nx.mul(reg, float(lam_reg)))
    return nx.reduce_mean(per_sample)


@dataclass
class UncertaintyEstimator:
    kind: str = "edl"
    temperature: float = 1.0

    def validate(self) -> None:
        if self.kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def alt_uncertainty(kind: str, probs: Optional[np.ndarray] = None, logits: Optional[np.ndarray] = None,
                    temperature: float = 1.0) -> Union[float, np.ndarray]:
    """Non-evidential uncertainty scores in [0, 1].

    entropy and softmax_conf read ``probs``; temp_scaling reads ``logits``
    and a fitted temperature. The evidential kind is not served here.
    """
    if kind == "edl":
        raise ValueError("evidential uncertainty comes from the Dirichlet head, not alt_uncertainty")
    if kind not in ESTIMATOR_KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}")
    if kind == "temp_scaling":
        if logits is None:
            raise ValueError("temp_scaling needs logits")
        if temperature <= 0.0:
            raise ValueError("temperature must be positive")
        z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
        u = 1.0 - _softmax(z / temperature).max(axis=1)
        return u if np.asarray(logits).ndim > 1 else float(u[0])
    if probs is None:
        raise ValueError(f"{kind} needs a probability vector")
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if np.any(p < -1e-9) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("expected rows of probabilities summing to 1")
    if kind == "softmax_conf":
        u = 1.0 - p.max(axis=1)
    else:  # entropy
        k = p.shape[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0.0, p * np.log(p), 0.0)
        u = -terms.sum(axis=1) / math.log(k)
    u = np.clip(u, 0.0, 1.0)
    return u if np.asarray(probs).ndim > 1 else float(u[0])


def _nll_at_temperature(logits: np.ndarray, hot: np.ndarray, t: float) -> float:
    p = _softmax(logits / t)
    picked = (p * hot).sum(axis=1)
    return float(-np.log(np.maximum(picked, 1e-300)).mean())


def fit_temperature(logits: np.ndarray, y, t_min: float = 0.05, t_max: float = 20.0, iters: int = 60) -> float:
    """Temperature minimizing validation NLL, by log-grid plus ternary refine."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    hot = _one_hot(y, z.shape[1])
    if hot.shape[0] != z.shape[0]:
        raise ValueError("label count does not match logits rows")
    grid = np.exp(np.linspace(math.log(t_min), math.log(t_max), 64))
    values = [_nll_at_temperature(z, hot, t) for t in grid]
    i = int(np.argmin(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if _nll_at_temperature(z, hot, m1) <= _nll_at_temperature(z, hot, m2):
            hi = m2
        else:
            lo = m1
    return float(0.5 * (lo + hi))
