"""Spectral-domain feature disentanglement.

The center-pixel spectrum is mapped to a frequency representation (FFT
real/imag halves by default, with DCT / Haar / single-half / pass-through
variants), encoded by two strided 1D convolutions with a squeeze-style
channel attention gate, and projected to a compact frequency feature
``f_freq``. Three auxiliary heads hang off that feature:

* a reconstruction decoder (sigmoid MLP) pulling ``f_freq`` back toward the
  per-band min-max rescaled input spectrum,
* a domain head behind a gradient-reversal layer, trained adversarially to
  tell original center spectra from Gaussian-noise augmented views, which
  pushes the encoder toward domain-indistinguishable features (the
  constant-0.5 confusion value of that head is exposed as ``domain_loss``),
* a linear projection whose output is broadcast-added over the patch window
  (``enhance``), initialised to zero so enhancement starts as the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import numerics as nx
from .layers import Conv1d, Linear

TRANSFORM_VARIANTS = ("fft", "dct", "wavelet", "real_only", "imag_only", "none")

__all__ = ["TRANSFORM_VARIANTS", "SifdConfig", "SifdOutput", "SifdModel", "transform_length", "transform_spectra"]


@dataclass
class SifdConfig:
    variant: str = "fft"
    use_attention: bool = True
    use_domain_reg: bool = True
    use_recon: bool = True
    feature_dim: int = 64
    channels: Tuple[int, int] = (16, 32)
    kernel: int = 5
    stride: int = 2
    attention_hidden: int = 8
    decoder_hidden: int = 64
    domain_hidden: int = 32
    grl_lambda: float = 1.0
    domain_view_sigma: float = 0.03
    domain_view_gain: float = 0.1
    domain_view_offset: float = 0.3

    def validate(self):
        if self.variant not in TRANSFORM_VARIANTS:
            raise ValueError(f"unknown transform variant {self.variant!r}, pick one of {TRANSFORM_VARIANTS}")
        if self.feature_dim < 1 or self.kernel < 1 or self.stride < 1:
            raise ValueError("feature_dim, kernel and stride must be positive")
        if self.domain_view_sigma <= 0:
            raise ValueError("domain_view_sigma must be positive")
        if self.domain_view_gain < 0 or self.domain_view_offset < 0:
            raise ValueError("domain view gain and offset must be non-negative")

    def min_encoder_length(self) -> int:
        # two valid strided convolutions need k + s*(k-1) input samples
        return self.kernel + self.stride * (self.kernel - 1)


@dataclass
class SifdOutput:
    f_freq: np.ndarray  # (N, feature_dim)
    attention: np.ndarray  # (N, channels[1]); all ones when attention is off
    reconstruction: np.ndarray  # (N, C) in (0, 1)


def transform_length(variant: str, bands: int) -> int:
    half = bands // 2 + 1
    if variant == "fft":
        return 2 * half
    if variant in ("real_only", "imag_only"):
        return half
    if variant == "wavelet":
        return 1 << (bands - 1).bit_length()
    if variant in ("dct", "none"):
        return bands
    raise ValueError(f"unknown transform variant {variant!r}")


def transform_spectra(spectra: np.ndarray, variant: str, dtype=np.float32) -> np.ndarray:
    """Frequency representation of a batch of spectra, (N, C) -> (N, Lf)."""
    spectra = np.atleast_2d(np.asarray(spectra))
    if variant == "fft":
        re, im = nx.fft_spectrum(spectra)
        out = np.concatenate([re, im], axis=-1)
    elif variant == "real_only":
        out = nx.fft_spectrum(spectra)[0]
    elif variant == "imag_only":
        out = nx.fft_spectrum(spectra)[1]
    elif variant == "dct":
        out = nx.dct_spectrum(spectra)
    elif variant == "wavelet":
        out = nx.haar_spectrum(spectra)
    elif variant == "none":
        out = spectra
    else:
        raise ValueError(f"unknown transform variant {variant!r}")
    return np.ascontiguousarray(out, dtype=dtype)


class SifdModel:
    """Weights plus forward logic for the frequency branch."""

    def __init__(self, cfg: SifdConfig, bands: int, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.bands = bands
        self.dtype = dtype
        c1, c2 = cfg.channels
        self.input_length = max(transform_length(cfg.variant, bands), cfg.min_encoder_length())
        l1 = (self.input_length - cfg.kernel) // cfg.stride + 1
        l2 = (l1 - cfg.kernel) // cfg.stride + 1
        self.encoded_length = l2
        self.enc1 = Conv1d(1, c1, cfg.kernel, rng, stride=cfg.stride, dtype=dtype)
        self.enc2 = Conv1d(c1, c2, cfg.kernel, rng, stride=cfg.stride, dtype=dtype)
        self.att1 = Linear(c2, cfg.attention_hidden, rng, dtype=dtype)
        self.att2 = Linear(cfg.attention_hidden, c2, rng, gain=1.0, dtype=dtype)
        self.head = Linear(c2 * l2, cfg.feature_dim, rng, gain=1.0, dtype=dtype)
        self.dec1 = Linear(cfg.feature_dim, cfg.decoder_hidden, rng, dtype=dtype)
        self.dec2 = Linear(cfg.decoder_hidden, bands, rng, gain=1.0, dtype=dtype)
        self.dom1 = Linear(cfg.feature_dim, cfg.domain_hidden, rng, dtype=dtype)
        self.dom2 = Linear(cfg.domain_hidden, 1, rng, gain=1.0, dtype=dtype)
        self.proj = Linear(cfg.feature_dim, bands, rng, zero_init=True, dtype=dtype)

    # -- forward pieces ----------------------------------------------------

    def transform(self, spectra: np.ndarray) -> np.ndarray:
        """Per-pixel frequency input, zero padded up to the encoder minimum."""
        out = transform_spectra(spectra, self.cfg.variant, dtype=self.dtype)
        if out.shape[-1] < self.input_length:
            pad = self.input_length - out.shape[-1]
            out = np.pad(out, ((0, 0), (0, pad)))
        return out

    def encode(self, feats) -> Tuple[nx.Tensor, nx.Tensor]:
        """(N, Lf) frequency inputs to (f_freq, attention gate). Tape aware."""
        x = feats if isinstance(feats, nx.Tensor) else nx.Tensor(feats, dtype=self.dtype)
        n = x.shape[0]
        h = nx.relu(self.enc1(nx.reshape(x, (n, 1, x.shape[1]))))
        h = nx.relu(self.enc2(h))
        c2 = self.cfg.channels[1]
        if self.cfg.use_attention:
            squeeze = nx.reduce_mean(h, axis=2)
            gate = nx.sigmoid(self.att2(nx.relu(self.att1(squeeze))))
            h = nx.mul(h, nx.reshape(gate, (n, c2, 1)))
        else:
            gate = nx.Tensor(np.ones((n, c2), dtype=self.dtype))
        f_freq = self.head(nx.reshape(h, (n, c2 * self.encoded_length)))
        return f_freq, gate

    def reconstruct(self, f_freq) -> nx.Tensor:
        return nx.sigmoid(self.dec2(nx.relu(self.dec1(f_freq))))

    def freq_features(self, spectra: np.ndarray) -> SifdOutput:
        """Tape-free convenience wrapper returning plain arrays."""
        f_freq, gate = self.encode(self.transform(spectra))
        recon = self.reconstruct(f_freq)
        return SifdOutput(f_freq=f_freq.data, attention=gate.data, reconstruction=recon.data)

    # -- losses -------------------------------------------------------------

    def recon_loss(self, f_freq, target_unit: np.ndarray) -> nx.Tensor:
        """Squared L2 between decoder output and the (0,1)-rescaled spectrum,
        summed over bands, averaged over the batch."""
        recon = self.reconstruct(f_freq)
        diff = nx.sub(recon, np.asarray(target_unit, dtype=self.dtype))
        return nx.reduce_mean(nx.reduce_sum(nx.square(diff), axis=1))

    def domain_logits(self, f_freq, reverse: bool = True) -> nx.Tensor:
        h = nx.grad_reverse(f_freq, lam=self.cfg.grl_lambda) if reverse else f_freq
        return self.dom2(nx.relu(self.dom1(h)))

    def domain_loss(self, f_freq) -> nx.Tensor:
        """BCE of the reversed-gradient domain head against a constant 0.5.

        This is the label-free confusion value: it is minimal (ln 2) exactly
        when the head cannot tell the batch apart. The optimized adversarial
        term lives in ``domain_adversarial_loss``; this quantity is the
        diagnostic reported for it at equilibrium.
        """
        logits = self.domain_logits(f_freq, reverse=True)
        half = np.full(logits.shape, 0.5, dtype=self.dtype)
        return nx.reduce_mean(nx.sigmoid_bce(logits, half))

    def domain_adversarial_loss(self, f_orig, f_aug) -> nx.Tensor:
        """View-discrimination BCE through the reversal layer.

        The head learns to separate original center spectra (label 0) from
        noise-augmented views (label 1); the encoder, receiving the reversed
        gradient, learns features on which the head cannot do so.
        """
        both = nx.concat([f_orig, f_aug], axis=0)
        logits = self.domain_logits(both, reverse=True)
        n_orig = f_orig.shape[0]
        n_aug = f_aug.shape[0]
        targets = np.concatenate([np.zeros((n_orig, 1)), np.ones((n_aug, 1))]).astype(self.dtype)
        return nx.reduce_mean(nx.sigmoid_bce(logits, targets))

    # -- enhancement ---------------------------------------------------------

    def enhance(self, patches, f_freq) -> nx.Tensor:
        """Broadcast-add the projected frequency feature over the window.

        ``patches`` is (N, C, h, w); the projection starts at zero so an
        untrained model leaves patches untouched.
        """
        x = patches if isinstance(patches, nx.Tensor) else nx.Tensor(patches, dtype=self.dtype)
        boost = self.proj(f_freq)
        n, c = boost.shape
        return nx.add(x, nx.reshape(boost, (n, c, 1, 1)))

    def params(self) -> List[nx.Tensor]:
        out: List[nx.Tensor] = []
        for layer in (
            self.enc1,
            self.enc2,
            self.att1,
            self.att2,
            self.head,
            self.dec1,
            self.dec2,
            self.dom1,
            self.dom2,
            self.proj,
        ):
            out.extend(layer.params())
        return out
