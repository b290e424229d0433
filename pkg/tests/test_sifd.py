"""Frequency-branch tests: transforms, encoder, auxiliary heads, enhancement."""

import math

import numpy as np
import pytest

import osdg.numerics as nx
from osdg.sifd import SifdConfig, SifdModel, TRANSFORM_VARIANTS, transform_length, transform_spectra


def _model(bands=16, seed=0, dtype=np.float64, **cfg_kw):
    cfg = SifdConfig(
        feature_dim=cfg_kw.pop("feature_dim", 8),
        channels=cfg_kw.pop("channels", (4, 6)),
        attention_hidden=cfg_kw.pop("attention_hidden", 3),
        decoder_hidden=cfg_kw.pop("decoder_hidden", 6),
        domain_hidden=cfg_kw.pop("domain_hidden", 4),
        **cfg_kw,
    )
    return SifdModel(cfg, bands=bands, rng=np.random.default_rng(seed), dtype=dtype)


def test_transform_lengths():
    assert transform_length("fft", 64) == 66
    assert transform_length("real_only", 64) == 33
    assert transform_length("imag_only", 65) == 33
    assert transform_length("dct", 64) == 64
    assert transform_length("none", 64) == 64
    assert transform_length("wavelet", 48) == 64  # padded to next power of two


def test_transform_constant_spectrum_is_dc_only():
    s = np.full((1, 16), 1.7)
    out = transform_spectra(s, "fft", dtype=np.float64)[0]
    assert out[0] == pytest.approx(16 * 1.7)
    assert np.allclose(out[1:], 0.0, atol=1e-6)


@pytest.mark.parametrize("variant", TRANSFORM_VARIANTS)
def test_transform_shapes(variant):
    s = np.random.default_rng(0).normal(size=(5, 20))
    out = transform_spectra(s, variant)
    assert out.shape == (5, transform_length(variant, 20))
    assert np.isfinite(out).all()


def test_short_transforms_padded_to_encoder_minimum():
    m = _model(bands=8, variant="real_only")  # raw length 5
    assert m.input_length == m.cfg.min_encoder_length() == 13
    feats = m.transform(np.random.default_rng(0).normal(size=(3, 8)))
    assert feats.shape == (3, 13)
    out = m.freq_features(np.random.default_rng(0).normal(size=(3, 8)))
    assert out.f_freq.shape == (3, 8)


def test_identical_seeds_give_bitwise_identical_features():
    spectra = np.random.default_rng(1).normal(size=(4, 16))
    a = _model(seed=42).freq_features(spectra)
    b = _model(seed=42).freq_features(spectra)
    assert np.array_equal(a.f_freq, b.f_freq)
    assert np.array_equal(a.reconstruction, b.reconstruction)
    c = _model(seed=43).freq_features(spectra)
    assert not np.array_equal(a.f_freq, c.f_freq)


def test_attention_disabled_reports_unit_gate():
    spectra = np.random.default_rng(2).normal(size=(3, 16))
    out = _model(use_attention=False).freq_features(spectra)
    assert np.array_equal(out.attention, np.ones_like(out.attention))


def test_freq_features_shapes_and_range():
    m = _model(bands=16)
    out = m.freq_features(np.random.default_rng(3).normal(size=(7, 16)))
    assert out.f_freq.shape == (7, 8)
    assert out.attention.shape == (7, 6)
    assert out.reconstruction.shape == (7, 16)
    assert np.all((out.reconstruction > 0.0) & (out.reconstruction < 1.0))


def _zero_layer(layer):
    layer.w.data[...] = 0.0
    layer.b.data[...] = 0.0


def test_recon_loss_hand_values():
    m = _model(bands=16)
    _zero_layer(m.dec1)
    _zero_layer(m.dec2)  # decoder output is sigmoid(0) = 0.5 everywhere
    f = nx.Tensor(np.random.default_rng(0).normal(size=(3, 8)), dtype=np.float64)
    perfect = m.recon_loss(f, np.full((3, 16), 0.5)).item()
    assert perfect == pytest.approx(0.0, abs=1e-12)
    off = m.recon_loss(f, np.ones((3, 16))).item()
    assert off == pytest.approx(16 * 0.25, abs=1e-9)


def test_domain_loss_confusion_values():
    m = _model(bands=16)
    f = nx.Tensor(np.random.default_rng(0).normal(size=(5, 8)), dtype=np.float64)
    _zero_layer(m.dom1)
    _zero_layer(m.dom2)  # head output p = 0.5 exactly
    assert m.domain_loss(f).item() == pytest.approx(math.log(2.0), abs=1e-12)
    # force p = 0.9 through the head bias
    m.dom2.b.data[...] = math.log(9.0)
    expected = -0.5 * (math.log(0.9) + math.log(0.1))
    assert m.domain_loss(f).item() == pytest.approx(expected, abs=1e-9)
    assert m.domain_loss(f).item() == pytest.approx(1.2040, abs=1e-4)


def test_gradient_reversal_flips_encoder_gradient_exactly():
    m = _model(bands=16)
    spectra = np.random.default_rng(4).normal(size=(6, 16))
    feats = m.transform(spectra)
    targets = np.full((6, 1), 0.5)

    def run(reverse):
        for p in m.params():
            p.zero_grad()
        with nx.GradTape() as tape:
            f_freq, _ = m.encode(feats)
            loss = nx.reduce_mean(nx.sigmoid_bce(m.domain_logits(f_freq, reverse=reverse), targets))
        tape.backward(loss)
        return m.enc1.w.grad.copy(), m.dom2.w.grad.copy()

    enc_rev, head_rev = run(True)
    enc_fwd, head_fwd = run(False)
    assert np.allclose(enc_rev, -enc_fwd, atol=1e-12)  # encoder side flips
    assert np.allclose(head_rev, head_fwd, atol=1e-12)  # head side does not


def test_domain_adversarial_loss_balanced_views():
    m = _model(bands=16)
    rng = np.random.default_rng(5)
    f_orig = nx.Tensor(rng.normal(size=(4, 8)), dtype=np.float64)
    f_aug = nx.Tensor(rng.normal(size=(4, 8)), dtype=np.float64)
    _zero_layer(m.dom1)
    _zero_layer(m.dom2)
    # an all-0.5 head is maximally confused on any balanced view pair
    assert m.domain_adversarial_loss(f_orig, f_aug).item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_enhance_is_identity_at_init():
    m = _model(bands=16)
    rng = np.random.default_rng(6)
    patches = rng.normal(size=(3, 16, 7, 7))
    f = nx.Tensor(rng.normal(size=(3, 8)), dtype=np.float64)
    out = m.enhance(patches, f)
    assert np.array_equal(out.data, patches)  # zero-initialised projection


def test_enhance_broadcasts_projection():
    m = _model(bands=16)
    m.proj.w.data[...] = 0.0
    m.proj.b.data[...] = np.arange(16.0)
    patches = np.zeros((2, 16, 7, 7))
    f = nx.Tensor(np.zeros((2, 8)), dtype=np.float64)
    out = m.enhance(patches, f).data
    assert np.allclose(out[0, :, 3, 3], np.arange(16.0))
    assert np.allclose(out[1, :, 0, 6], np.arange(16.0))


@pytest.mark.parametrize("seed", [0, 1])
def test_sifd_branch_gradients_finite_difference(seed):
    # recon + unreversed domain head + projection path: every layer gets a true
    # gradient here (the reversal itself is covered by the sign-flip test)
    m = _model(bands=12, seed=seed)
    rng = np.random.default_rng(seed + 10)
    spectra = rng.normal(size=(3, 12))
    feats = m.transform(spectra)
    patches = rng.normal(size=(3, 12, 7, 7))
    target = rng.uniform(0.2, 0.8, size=(3, 12))
    dom_t = rng.uniform(0.0, 1.0, size=(3, 1))
    r = rng.normal(size=(3, 12, 7, 7))

    def loss_fn():
        f_freq, _ = m.encode(feats)
        loss = m.recon_loss(f_freq, target)
        loss = nx.add(loss, nx.reduce_mean(nx.sigmoid_bce(m.domain_logits(f_freq, reverse=False), dom_t)))
        loss = nx.add(loss, nx.reduce_mean(nx.mul(m.enhance(patches, f_freq), r)))
        return loss

    err = nx.gradient_check(loss_fn, m.params(), h=1e-4, sample=6, seed=seed)
    assert err < 1e-4
