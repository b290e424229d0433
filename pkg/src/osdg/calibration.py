"""Synthetic unknowns and rejection-threshold calibration.

Four generators perturb known validation patches into unknown-like samples:
additive noise, cross-class mixing, band corruption, and spatial corruption.
The threshold sweep picks the tau whose true-positive rate (fraction of
synthetic unknowns rejected) comes closest to the target, breaking ties
toward the larger tau so known-class retention is favored.

Everything here runs on source-domain data only.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np

from .dataio import BandStats, Patch

STRATEGIES = ("noise", "mix", "spectral", "spatial")


class CalibrationError(Exception):
    pass


@dataclass
class SyntheticUnknownSpec:
    sigmas: Tuple[float, ...] = (0.1, 0.2, 0.4)
    lambda_range: Tuple[float, float] = (0.3, 0.7)
    band_fraction_range: Tuple[float, float] = (0.20, 0.30)
    patch_count_range: Tuple[int, int] = (2, 3)
    samples_per_strategy: int = 500
    seed: int = 0

    def validate(self) -> None:
        if not self.sigmas or any(s < 0.0 for s in self.sigmas):
            raise ValueError("noise levels must be nonnegative and nonempty")
        lo, hi = self.lambda_range
        if not (0.0 < lo <= hi < 1.0):
            raise ValueError("mixing weight range must sit inside (0, 1)")
        flo, fhi = self.band_fraction_range
        if not (0.20 <= flo <= fhi <= 0.30):
            raise ValueError("band fraction range must stay within [0.20, 0.30]")
        plo, phi = self.patch_count_range
        if not (2 <= plo <= phi <= 3):
            raise ValueError("spatial corruption uses 2 or 3 regions")
        if self.samples_per_strategy < 1:
            raise ValueError("need at least one sample per strategy")


@dataclass
class CalibrationResult:
    tau_star: float
    achieved_tpr: float
    taus: np.ndarray
    tprs: np.ndarray
    known_retention: np.ndarray
    mean_synthetic_score: float
    mean_known_score: float

    def validate(self) -> None:
        order = np.argsort(self.taus)
        tpr_sorted = self.tprs[order]
        if np.any(np.diff(tpr_sorted) > 1e-12):
            raise ValueError("TPR must be non-increasing in tau")


def _rng_of(seed: Union[int, np.random.Generator]) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gen_noise(x: Patch, sigma: float, seed: Union[int, np.random.Generator]) -> Patch:
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    rng = _rng_of(seed)
    window = x.window.astype(np.float32, copy=True)
    if sigma > 0.0:
        window = window + rng.normal(0.0, sigma, size=window.shape).astype(np.float32)
    return Patch(window=window, label=x.label, row=x.row, col=x.col)


def gen_mix(x_i: Patch, x_j: Patch, lam: float) -> Patch:
    if x_i.label == x_j.label:
        raise ValueError("mixing requires patches of different classes")
    if not 0.0 < lam < 1.0:
        raise ValueError("mixing weight must lie strictly inside (0, 1)")
    window = (lam * x_i.window.astype(np.float64) + (1.0 - lam) * x_j.window.astype(np.float64)).astype(np.float32)
    return Patch(window=window, label=x_i.label, row=x_i.row, col=x_i.col)


def gen_spectral_corrupt(x: Patch, frac: float, stats: BandStats, seed: Union[int, np.random.Generator]) -> Patch:
    if not 0.20 <= frac <= 0.30:
        raise ValueError("band fraction must lie in [0.20, 0.30]")
    rng = _rng_of(seed)
    window = x.window.astype(np.float32, copy=True)
    bands = window.shape[2]
    n = int(np.floor(frac * bands))
    chosen = rng.choice(bands, size=n, replace=False)
    for b in chosen:
        noise = rng.normal(stats.mean[b], stats.std[b], size=window.shape[:2])
        window[:, :, b] = noise.astype(np.float32)
    return Patch(window=window, label=x.label, row=x.row, col=x.col)


def gen_spatial_corrupt(x: Patch, n_patches: int, stats: BandStats, seed: Union[int, np.random.Generator],
                        max_attempts: int = 200) -> Patch:
    if n_patches not in (2, 3):
        raise ValueError("spatial corruption uses 2 or 3 regions")
    rng = _rng_of(seed)
    window = x.window.astype(np.float32, copy=True)
    h, w, bands = window.shape
    regions: List[Tuple[int, int]] = []
    attempts = 0
    while len(regions) < n_patches:
        attempts += 1
        if attempts > max_attempts:
            raise CalibrationError("could not place non-overlapping corruption regions")
        r = int(rng.integers(0, h - 1))
        c = int(rng.integers(0, w - 1))
        if any(abs(r - rr) < 2 and abs(c - cc) < 2 for rr, cc in regions):
            continue
        regions.append((r, c))
    for r, c in regions:
        noise = rng.normal(stats.mean, stats.std, size=(2, 2, bands))
        window[r:r + 2, c:c + 2, :] = noise.astype(np.float32)
    return Patch(window=window, label=x.label, row=x.row, col=x.col)


def generate_synthetic_unknowns(val_patches: Sequence[Patch], spec: SyntheticUnknownSpec,
                                stats: BandStats) -> List[Tuple[str, Patch]]:
    """Equal counts per strategy, deterministically derived from spec.seed."""
    spec.validate()
    if not val_patches:
        raise ValueError("validation set is empty")
    labels = np.array([p.label for p in val_patches])
    streams = np.random.SeedSequence([spec.seed, 0xCA11]).spawn(len(STRATEGIES))
    out: List[Tuple[str, Patch]] = []
    for strategy, ss in zip(STRATEGIES, streams):
        rng = np.random.default_rng(ss)
        for _ in range(spec.samples_per_strategy):
            base = val_patches[int(rng.integers(len(val_patches)))]
            if strategy == "noise":
                sigma = spec.sigmas[int(rng.integers(len(spec.sigmas)))]
                out.append((strategy, gen_noise(base, sigma, rng)))
            elif strategy == "mix":
                others = np.flatnonzero(labels != base.label)
                if others.size == 0:
                    raise CalibrationError("mixing needs at least two classes in validation")
                partner = val_patches[int(others[int(rng.integers(others.size))])]
                lam = float(rng.uniform(*spec.lambda_range))
                out.append((strategy, gen_mix(base, partner, lam)))
            elif strategy == "spectral":
                frac = float(rng.uniform(*spec.band_fraction_range))
                out.append((strategy, gen_spectral_corrupt(base, frac, stats, rng)))
            else:
                n = int(rng.integers(spec.patch_count_range[0], spec.patch_count_range[1] + 1))
                out.append((strategy, gen_spatial_corrupt(base, n, stats, rng)))
    return out


def sweep_candidates(scores: np.ndarray) -> np.ndarray:
    distinct = np.unique(scores)
    if distinct.size < 2:
        raise CalibrationError("degenerate score distribution: all rejection scores identical")
    mids = 0.5 * (distinct[:-1] + distinct[1:])
    return np.unique(np.concatenate([distinct, mids]))


def calibrate_threshold(score_fn: Callable[[Sequence[Patch]], np.ndarray], val_patches: Sequence[Patch],
                        spec: SyntheticUnknownSpec, stats: BandStats,
                        rho_target: float = 0.75) -> CalibrationResult:
    """Pick tau* = argmin |TPR(tau) - rho_target| over the candidate sweep.

    score_fn maps a sequence of patches to their rejection scores under the
    trained model. Ties in the objective break toward larger tau.
    """
    if not 0.0 < rho_target <= 1.0:
        raise ValueError("rho_target must lie in (0, 1]")
    if not val_patches:
        raise ValueError("validation set is empty")
    synth = [p for _, p in generate_synthetic_unknowns(val_patches, spec, stats)]
    synth_scores = np.asarray(score_fn(synth), dtype=np.float64)
    known_scores = np.asarray(score_fn(list(val_patches)), dtype=np.float64)
    mean_synth = float(synth_scores.mean())
    mean_known = float(known_scores.mean())
    if mean_known - mean_synth > 0.0:
        raise CalibrationError(
            "synthetic unknowns score below known validation samples "
            f"(synthetic mean {mean_synth:.4f} < known mean {mean_known:.4f}); "
            "the model's rejection score is not separating unknowns"
        )
    candidates = sweep_candidates(np.concatenate([synth_scores, known_scores]))
    tprs = (synth_scores[None, :] > candidates[:, None]).mean(axis=1)
    retention = (known_scores[None, :] <= candidates[:, None]).mean(axis=1)
    objective = np.abs(tprs - rho_target)
    best = objective.min()
    tied = np.flatnonzero(objective <= best + 1e-12)
    pick = tied[np.argmax(candidates[tied])]
    tau_star = float(np.clip(candidates[pick], 1e-6, 1.0 - 1e-6))
    result = CalibrationResult(
        tau_star=tau_star,
        achieved_tpr=float(tprs[pick]),
        taus=candidates,
        tprs=tprs,
        known_retention=retention,
        mean_synthetic_score=mean_synth,
        mean_known_score=mean_known,
    )
    result.validate()
    return result
