"""Synthetic-unknown generators and threshold-sweep tests."""

import numpy as np
import pytest

from osdg.calibration import (
    CalibrationError,
    CalibrationResult,
    SyntheticUnknownSpec,
    calibrate_threshold,
    gen_mix,
    gen_noise,
    gen_spatial_corrupt,
    gen_spectral_corrupt,
    generate_synthetic_unknowns,
    sweep_candidates,
)
from osdg.dataio import BandStats, Patch


def _patch(label=1, bands=8, seed=0, fill=None):
    rng = np.random.default_rng(seed)
    if fill is None:
        window = rng.uniform(0.0, 1.0, size=(7, 7, bands)).astype(np.float32)
    else:
        window = np.full((7, 7, bands), fill, dtype=np.float32)
    return Patch(window=window, label=label, row=3, col=3)


def _stats(bands=8):
    return BandStats(mean=np.zeros(bands), std=np.ones(bands))


def test_spec_validation():
    SyntheticUnknownSpec().validate()
    for bad in (
        SyntheticUnknownSpec(sigmas=()),
        SyntheticUnknownSpec(sigmas=(-0.1,)),
        SyntheticUnknownSpec(lambda_range=(0.0, 0.7)),
        SyntheticUnknownSpec(band_fraction_range=(0.1, 0.3)),
        SyntheticUnknownSpec(patch_count_range=(2, 4)),
        SyntheticUnknownSpec(samples_per_strategy=0),
    ):
        with pytest.raises(ValueError):
            bad.validate()


def test_gen_noise_zero_sigma_is_identity():
    x = _patch()
    out = gen_noise(x, 0.0, seed=5)
    assert np.array_equal(out.window, x.window)
    assert out.label == x.label


def test_gen_noise_matches_sigma_and_seed():
    x = _patch(bands=64, seed=1)
    out = gen_noise(x, 0.4, seed=7)
    resid = out.window.astype(np.float64) - x.window.astype(np.float64)
    assert abs(resid.std() - 0.4) < 0.04
    assert abs(resid.mean()) < 0.05
    again = gen_noise(x, 0.4, seed=7)
    assert np.array_equal(out.window, again.window)
    other = gen_noise(x, 0.4, seed=8)
    assert not np.array_equal(out.window, other.window)


def test_gen_mix_values_and_envelope():
    zeros = _patch(label=1, fill=0.0)
    twos = _patch(label=2, fill=2.0)
    mixed = gen_mix(zeros, twos, 0.5)
    assert np.allclose(mixed.window, 1.0)
    a = _patch(label=1, seed=3)
    b = _patch(label=2, seed=4)
    near = gen_mix(a, b, 0.999)
    assert np.max(np.abs(near.window - a.window)) < 1.05e-3
    mid = gen_mix(a, b, 0.37)
    lo = np.minimum(a.window, b.window) - 1e-6
    hi = np.maximum(a.window, b.window) + 1e-6
    assert np.all(mid.window >= lo) and np.all(mid.window <= hi)


def test_gen_mix_rejects_same_class_and_bad_lambda():
    a = _patch(label=2, seed=3)
    b = _patch(label=2, seed=4)
    with pytest.raises(ValueError):
        gen_mix(a, b, 0.5)
    c = _patch(label=3, seed=5)
    with pytest.raises(ValueError):
        gen_mix(a, c, 0.0)
    with pytest.raises(ValueError):
        gen_mix(a, c, 1.0)


def test_gen_spectral_corrupt_band_counts():
    x = _patch(bands=100, seed=6)
    out = gen_spectral_corrupt(x, 0.25, _stats(100), seed=9)
    changed = np.flatnonzero(np.any(out.window != x.window, axis=(0, 1)))
    assert changed.size == 25
    untouched = np.setdiff1d(np.arange(100), changed)
    assert np.array_equal(out.window[:, :, untouched], x.window[:, :, untouched])
    small = _patch(bands=10, seed=7)
    out2 = gen_spectral_corrupt(small, 0.20, _stats(10), seed=9)
    assert np.flatnonzero(np.any(out2.window != small.window, axis=(0, 1))).size == 2
    assert np.array_equal(out2.window, gen_spectral_corrupt(small, 0.20, _stats(10), seed=9).window)
    with pytest.raises(ValueError):
        gen_spectral_corrupt(small, 0.5, _stats(10), seed=9)


@pytest.mark.parametrize("n", [2, 3])
def test_gen_spatial_corrupt_region_counts(n):
    x = _patch(seed=8)
    out = gen_spatial_corrupt(x, n, _stats(), seed=11)
    changed = np.any(out.window != x.window, axis=2)
    assert changed.sum() == 4 * n
    assert np.array_equal(out.window[~changed], x.window[~changed])
    assert np.array_equal(out.window, gen_spatial_corrupt(x, n, _stats(), seed=11).window)
    with pytest.raises(ValueError):
        gen_spatial_corrupt(x, 4, _stats(), seed=11)


def test_generate_synthetic_unknowns_counts_and_determinism():
    patches = [_patch(label=1 + (i % 3), seed=20 + i) for i in range(9)]
    spec = SyntheticUnknownSpec(samples_per_strategy=5, seed=3)
    out = generate_synthetic_unknowns(patches, spec, _stats())
    assert len(out) == 20
    names = [name for name, _ in out]
    assert names.count("noise") == names.count("mix") == names.count("spectral") == names.count("spatial") == 5
    again = generate_synthetic_unknowns(patches, spec, _stats())
    for (na, pa), (nb, pb) in zip(out, again):
        assert na == nb and np.array_equal(pa.window, pb.window)
    other = generate_synthetic_unknowns(patches, SyntheticUnknownSpec(samples_per_strategy=5, seed=4), _stats())
    assert any(not np.array_equal(pa.window, pb.window) for (_, pa), (_, pb) in zip(out, other))


def test_generate_synthetic_unknowns_needs_two_classes():
    patches = [_patch(label=1, seed=i) for i in range(4)]
    with pytest.raises(CalibrationError):
        generate_synthetic_unknowns(patches, SyntheticUnknownSpec(samples_per_strategy=2), _stats())


def _fixed_score_fn(synth_scores, known_scores):
    calls = {"n": 0}

    def score(patches):
        calls["n"] += 1
        return np.array(synth_scores if calls["n"] == 1 else known_scores, dtype=np.float64)

    return score


def _val_patches():
    return [_patch(label=1, seed=30), _patch(label=2, seed=31)]


def test_calibrate_threshold_hand_sweep():
    spec = SyntheticUnknownSpec(samples_per_strategy=1, seed=0)
    score_fn = _fixed_score_fn([0.9, 0.8, 0.7, 0.2], [0.1, 0.05])
    result = calibrate_threshold(score_fn, _val_patches(), spec, _stats(), rho_target=0.75)
    assert result.tau_star == pytest.approx(0.45)
    assert result.achieved_tpr == pytest.approx(0.75)
    result.validate()


def test_calibrate_threshold_perfect_separation_tie_break():
    spec = SyntheticUnknownSpec(samples_per_strategy=1, seed=0)
    score_fn = _fixed_score_fn([1.0, 1.0, 1.0, 1.0], [0.0, 0.0])
    result = calibrate_threshold(score_fn, _val_patches(), spec, _stats(), rho_target=0.75)
    assert result.tau_star == pytest.approx(0.5)  # largest candidate below 1
    assert result.achieved_tpr == pytest.approx(1.0)


def test_calibrate_threshold_full_rejection_target():
    spec = SyntheticUnknownSpec(samples_per_strategy=1, seed=0)
    score_fn = _fixed_score_fn([0.9, 0.8, 0.7, 0.2], [0.1, 0.05])
    result = calibrate_threshold(score_fn, _val_patches(), spec, _stats(), rho_target=1.0)
    assert result.tau_star < 0.2
    assert result.achieved_tpr == pytest.approx(1.0)


def test_calibrate_threshold_sanity_hard_fail():
    spec = SyntheticUnknownSpec(samples_per_strategy=1, seed=0)
    score_fn = _fixed_score_fn([0.1, 0.1, 0.2, 0.1], [0.9, 0.8])
    with pytest.raises(CalibrationError):
        calibrate_threshold(score_fn, _val_patches(), spec, _stats())


def test_degenerate_scores_rejected():
    with pytest.raises(CalibrationError):
        sweep_candidates(np.full(6, 0.4))
    spec = SyntheticUnknownSpec(samples_per_strategy=1, seed=0)
    score_fn = _fixed_score_fn([0.4, 0.4, 0.4, 0.4], [0.4, 0.4])
    with pytest.raises(CalibrationError):
        calibrate_threshold(score_fn, _val_patches(), spec, _stats())


def test_sweep_tpr_monotone_on_random_scores():
    rng = np.random.default_rng(12)
    spec = SyntheticUnknownSpec(samples_per_strategy=25, seed=1)
    synth = rng.uniform(0.3, 1.0, size=100)
    known = rng.uniform(0.0, 0.6, size=2)
    score_fn = _fixed_score_fn(synth, known)
    result = calibrate_threshold(score_fn, _val_patches(), spec, _stats())
    result.validate()
    order = np.argsort(result.taus)
    assert np.all(np.diff(result.tprs[order]) <= 1e-12)
    assert np.all(np.diff(result.known_retention[order]) >= -1e-12)
