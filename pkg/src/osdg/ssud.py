"""Uncertainty disentanglement, rejection scoring, and the training objective.

Reliability is the complement of uncertainty. When the two pathways disagree
strongly about their own reliability, the decision trusts the more reliable
pathway's uncertainty (down-weighting the other) instead of the combined head.
The rejection score blends final uncertainty with classifier confidence.
"""

from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

from . import numerics as nx
from .dataio import UNKNOWN_LABEL

VARIANTS = (
    "full",
    "no_decoupling",
    "fixed_weights",
    "simple_average",
    "max_uncertainty",
    "no_confidence",
    "no_uncertainty",
)

BRANCH_SPECTRAL = "spectral"
BRANCH_SPATIAL = "spatial"
BRANCH_COMBINED = "combined"


@dataclass
class SsudConfig:
    tau_decouple: float = 0.3
    kappa_down: float = 0.5
    w_unc: float = 0.5
    w_conf: float = 0.5
    variant: str = "full"
    tau: float = 0.5

    def validate(self) -> None:
        if not 0.0 < self.tau_decouple <= 1.0:
            raise ValueError("tau_decouple must lie in (0, 1]")
        if not 0.0 < self.kappa_down <= 1.0:
            raise ValueError("kappa_down must lie in (0, 1]")
        if self.w_unc < 0.0 or self.w_conf < 0.0:
            raise ValueError("score weights must be nonnegative")
        if abs(self.w_unc + self.w_conf - 1.0) > 1e-9:
            raise ValueError("score weights must sum to 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("rejection threshold must lie in (0, 1)")

    def effective_weights(self) -> Tuple[float, float]:
        if self.variant == "no_confidence":
            return 1.0, 0.0
        if self.variant == "no_uncertainty":
            return 0.0, 1.0
        if self.variant == "fixed_weights":
            return 0.5, 0.5
        return self.w_unc, self.w_conf


@dataclass
class SsudDecision:
    r_spec: float
    r_spat: float
    delta_r: float
    branch: str
    u_final: float
    p_cls: np.ndarray
    p_max: float
    k_hat: int
    r_score: float
    prediction: int


def _check_unit(name: str, value: float) -> float:
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return v


def reliability(u_spec: float, u_spat: float) -> Tuple[float, float, float]:
    r_spec = 1.0 - _check_unit("u_spec", u_spec)
    r_spat = 1.0 - _check_unit("u_spat", u_spat)
    return r_spec, r_spat, abs(r_spec - r_spat)


def disentangle(u_spec: float, u_spat: float, u_comb: float, cfg: SsudConfig) -> Tuple[float, str]:
    """Pick the uncertainty the rejection score will use.

    Only the full (and weighting-only) variants route through the decoupling
    rule. The max_uncertainty branch label names the pathway the maximum came
    from (spectral on ties); it carries no reliability semantics there.
    """
    cfg.validate()
    u_spec = _check_unit("u_spec", u_spec)
    u_spat = _check_unit("u_spat", u_spat)
    u_comb = _check_unit("u_comb", u_comb)
    if cfg.variant == "no_decoupling":
        return u_comb, BRANCH_COMBINED
    if cfg.variant == "simple_average":
        return 0.5 * (u_spec + u_spat), BRANCH_COMBINED
    if cfg.variant == "max_uncertainty":
        if u_spec >= u_spat:
            return u_spec, BRANCH_SPECTRAL
        return u_spat, BRANCH_SPATIAL
    r_spec, r_spat, delta_r = reliability(u_spec, u_spat)
    if delta_r > cfg.tau_decouple:
        if r_spec > r_spat:
            return max(u_spec, cfg.kappa_down * u_spat), BRANCH_SPECTRAL
        return max(u_spat, cfg.kappa_down * u_spec), BRANCH_SPATIAL
    return u_comb, BRANCH_COMBINED


def rejection_score(u_final: float, p_cls: np.ndarray, cfg: SsudConfig) -> Tuple[float, float, int]:
    """Blend uncertainty and closed-set confidence; returns (score, p_max, k_hat)."""
    cfg.validate()
    u_final = _check_unit("u_final", u_final)
    p = np.asarray(p_cls, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("p_cls must be a probability vector over at least two classes")
    if abs(p.sum() - 1.0) > 1e-5 or np.any(p < -1e-9):
        raise ValueError("p_cls must be normalized")
    p_max = float(p.max())
    k_hat = int(p.argmax()) + 1  # ties resolve to the lowest class id
    w_unc, w_conf = cfg.effective_weights()
    score = w_unc * u_final + w_conf * (1.0 - p_max)
    return float(score), p_max, k_hat


def decide(r_score: float, k_hat: int, tau: float) -> int:
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    return int(k_hat) if r_score <= tau else UNKNOWN_LABEL


def make_decision(u_spec: float, u_spat: float, u_comb: float, p_cls: np.ndarray, cfg: SsudConfig) -> SsudDecision:
    """Full per-sample decision record."""
    r_spec, r_spat, delta_r = reliability(u_spec, u_spat)
    u_final, branch = disentangle(u_spec, u_spat, u_comb, cfg)
    score, p_max, k_hat = rejection_score(u_final, p_cls, cfg)
    return SsudDecision(
        r_spec=r_spec,
        r_spat=r_spat,
        delta_r=delta_r,
        branch=branch,
        u_final=u_final,
        p_cls=np.asarray(p_cls, dtype=np.float64),
        p_max=p_max,
        k_hat=k_hat,
        r_score=score,
        prediction=decide(score, k_hat, cfg.tau),
    )


@dataclass
class DecisionBatch:
    """Vectorized decisions; row i mirrors make_decision on sample i."""

    u_final: np.ndarray
    branch: np.ndarray
    p_max: np.ndarray
    k_hat: np.ndarray
    r_score: np.ndarray
    prediction: np.ndarray


def decide_batch(u_spec: np.ndarray, u_spat: np.ndarray, u_comb: np.ndarray, p_cls: np.ndarray,
                 cfg: SsudConfig) -> DecisionBatch:
    cfg.validate()
    u_spec = np.asarray(u_spec, dtype=np.float64)
    u_spat = np.asarray(u_spat, dtype=np.float64)
    u_comb = np.asarray(u_comb, dtype=np.float64)
    p = np.asarray(p_cls, dtype=np.float64)
    n = u_spec.shape[0]
    if u_spat.shape != (n,) or u_comb.shape != (n,) or p.shape[0] != n or p.ndim != 2:
        raise ValueError("batch shapes disagree")
    for name, u in (("u_spec", u_spec), ("u_spat", u_spat), ("u_comb", u_comb)):
        if np.any(u < 0.0) or np.any(u > 1.0):
            raise ValueError(f"{name} must lie in [0, 1]")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-5) or np.any(p < -1e-9):
        raise ValueError("p_cls rows must be normalized")

    branch = np.full(n, BRANCH_COMBINED, dtype="<U8")
    if cfg.variant == "no_decoupling":
        u_final = u_comb.copy()
    elif cfg.variant == "simple_average":
        u_final = 0.5 * (u_spec + u_spat)
    elif cfg.variant == "max_uncertainty":
        take_spec = u_spec >= u_spat
        u_final = np.where(take_spec, u_spec, u_spat)
        branch = np.where(take_spec, BRANCH_SPECTRAL, BRANCH_SPATIAL).astype("<U8")
    else:
        r_spec = 1.0 - u_spec
        r_spat = 1.0 - u_spat
        delta_r = np.abs(r_spec - r_spat)
        decouple = delta_r > cfg.tau_decouple
        spec_side = decouple & (r_spec > r_spat)
        spat_side = decouple & ~spec_side
        u_final = u_comb.copy()
        u_final[spec_side] = np.maximum(u_spec, cfg.kappa_down * u_spat)[spec_side]
        u_final[spat_side] = np.maximum(u_spat, cfg.kappa_down * u_spec)[spat_side]
        branch[spec_side] = BRANCH_SPECTRAL
        branch[spat_side] = BRANCH_SPATIAL

    p_max = p.max(axis=1)
    k_hat = p.argmax(axis=1).astype(np.int64) + 1
    w_unc, w_conf = cfg.effective_weights()
    r_score = w_unc * u_final + w_conf * (1.0 - p_max)
    prediction = np.where(r_score <= cfg.tau, k_hat, UNKNOWN_LABEL).astype(np.int64)
    return DecisionBatch(u_final=u_final, branch=branch, p_max=p_max, k_hat=k_hat,
                         r_score=r_score, prediction=prediction)


def total_loss(network, batch, alpha: float, beta: float, gamma: float,
               lam_reg: float = 0.2) -> Tuple[nx.Tensor, Dict[str, float]]:
    """Combined objective: classification plus weighted auxiliary terms.

    The network supplies the four raw terms as tensors via
    ``training_terms(batch, lam_reg)``; this op owns the weighting. Weights
    only need to be nonnegative here; sweep-grid membership is enforced at
    the run-config level.
    """
    for name, w in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        if not np.isfinite(w) or w < 0.0:
            raise ValueError(f"{name} must be a nonnegative finite weight")
    terms = network.training_terms(batch, lam_reg)
    total = terms["cls"]
    breakdown = {"cls": terms["cls"].item()}
    for name, weight in (("edl", alpha), ("domain", beta), ("recon", gamma)):
        weighted = nx.mul(terms[name], float(weight))
        total = nx.add(total, weighted)
        breakdown[name] = weighted.item()
    breakdown["total"] = total.item()
    return total, breakdown
