"""Dual-pathway residual feature extractor over enhanced patches.

The spectral pathway mixes bands with 1x1 convolutions only, so its receptive
field never grows beyond a single pixel. The spatial pathway reduces to a
narrow channel budget and stacks 3x3 residual blocks. Both pool to a common
feature width and are fused either by a gated mix, a plain mean, or a linear
layer over the concatenation.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from . import numerics as nx
from .layers import Conv2d, Linear

PATHWAY_MODES = ("dual", "spectral_only")
FUSION_MODES = ("attention", "add", "concat")


@dataclass
class DcrnConfig:
    mode: str = "dual"
    fusion: str = "attention"
    dim: int = 128
    spatial_channels: int = 32
    spectral_blocks: int = 2
    spatial_blocks: int = 4

    def validate(self) -> None:
        if self.mode not in PATHWAY_MODES:
            raise ValueError(f"unknown pathway mode {self.mode!r}")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion!r}")
        if self.dim <= 0:
            raise ValueError("feature dimension must be positive")
        if self.spatial_channels <= 0:
            raise ValueError("spatial channel width must be positive")
        if self.spectral_blocks < 1 or self.spatial_blocks < 1:
            raise ValueError("need at least one residual block per pathway")


@dataclass
class PathwayFeatures:
    """Pooled pathway features, one row per patch."""

    f_spec: np.ndarray
    f_spat: np.ndarray
    f_comb: np.ndarray


class _ResidualBlock:
    """conv -> relu -> conv -> add skip -> relu, at constant width."""

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, dtype):
        pad = kernel // 2
        self.c1 = Conv2d(channels, channels, kernel, rng, pad=pad, dtype=dtype)
        self.c2 = Conv2d(channels, channels, kernel, rng, pad=pad, dtype=dtype)

    def __call__(self, x: nx.Tensor) -> nx.Tensor:
        h = nx.relu(self.c1(x))
        h = self.c2(h)
        return nx.relu(nx.add(x, h))

    def params(self) -> List[nx.Tensor]:
        return self.c1.params() + self.c2.params()


class DcrnModel:
    def __init__(self, cfg: DcrnConfig, bands: int, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        if bands <= 0:
            raise ValueError("bands must be positive")
        self.cfg = cfg
        self.dtype = dtype
        d = cfg.dim

        self.spec_stem = Conv2d(bands, d, 1, rng, pad=0, dtype=dtype)
        self.spec_blocks = [_ResidualBlock(d, 1, rng, dtype) for _ in range(cfg.spectral_blocks)]

        self.spat_stem = None
        self.spat_blocks = []
        self.spat_expand = None
        self.fuse_gate = None
        self.fuse_mix = None
        if cfg.mode == "dual":
            c = cfg.spatial_channels
            self.spat_stem = Conv2d(bands, c, 1, rng, pad=0, dtype=dtype)
            self.spat_blocks = [_ResidualBlock(c, 3, rng, dtype) for _ in range(cfg.spatial_blocks)]
            self.spat_expand = Conv2d(c, d, 1, rng, pad=0, dtype=dtype)
            if cfg.fusion == "attention":
                self.fuse_gate = Linear(2 * d, d, rng, gain=1.0, dtype=dtype)
                self.fuse_mix = Linear(2 * d, d, rng, gain=1.0, dtype=dtype)
            elif cfg.fusion == "concat":
                self.fuse_mix = Linear(2 * d, d, rng, gain=1.0, dtype=dtype)

    def _check_patch(self, x) -> nx.Tensor:
        t = x if isinstance(x, nx.Tensor) else nx.Tensor(np.asarray(x), dtype=self.dtype)
        if t.data.ndim != 4:
            raise ValueError("expected a patch batch of shape (n, bands, h, w)")
        return t

    @staticmethod
    def _unit_rms(f: nx.Tensor) -> nx.Tensor:
        """Scale each feature row to unit root-mean-square.

        Pooled rectified features drift to norms that differ several-fold
        between classes, and the class with the smallest, tightest feature
        cloud is the one whose downstream evidence row gets pushed through
        zero first and stays there. A common scale keeps every class in
        the dynamic range the heads and the classifier start from."""
        ms = nx.reduce_mean(nx.square(f), axis=1)
        rms = nx.sqrt(nx.add(ms, 1e-6))
        return nx.div(f, nx.reshape(rms, (f.data.shape[0], 1)))

    def spectral_path(self, x) -> nx.Tensor:
        t = self._check_patch(x)
        h = nx.relu(self.spec_stem(t))
        for block in self.spec_blocks:
            h = block(h)
        return self._unit_rms(nx.reduce_mean(h, axis=(2, 3)))

    def spatial_path(self, x) -> nx.Tensor:
        if self.cfg.mode != "dual":
            raise ValueError("spatial pathway is disabled in spectral_only mode")
        t = self._check_patch(x)
        h = nx.relu(self.spat_stem(t))
        for block in self.spat_blocks:
            h = block(h)
        h = nx.relu(self.spat_expand(h))
        return self._unit_rms(nx.reduce_mean(h, axis=(2, 3)))

    def fuse(self, f_spec: nx.Tensor, f_spat: nx.Tensor) -> nx.Tensor:
        mean = nx.mul(nx.add(f_spec, f_spat), np.asarray(0.5, dtype=f_spec.data.dtype))
        if self.cfg.fusion == "add":
            return mean
        cat = nx.concat([f_spec, f_spat], axis=1)
        if self.cfg.fusion == "concat":
            return self.fuse_mix(cat)
        # gated fusion: a channel gate interpolates between the residual mean
        # of the pathways and a learned linear mix of their concatenation; a
        # saturated gate recovers the mean exactly
        gate = nx.sigmoid(self.fuse_gate(cat))
        mix = self.fuse_mix(cat)
        one = np.asarray(1.0, dtype=gate.data.dtype)
        return nx.add(nx.mul(gate, mean), nx.mul(nx.sub(one, gate), mix))

    def forward(self, x) -> Tuple[nx.Tensor, nx.Tensor, nx.Tensor]:
        """Return (f_spec, f_spat, f_comb) tensors for a patch batch."""
        if self.cfg.mode == "spectral_only":
            f = self.spectral_path(x)
            return f, f, f
        f_spec = self.spectral_path(x)
        f_spat = self.spatial_path(x)
        return f_spec, f_spat, self.fuse(f_spec, f_spat)

    def pathway_features(self, x) -> PathwayFeatures:
        f_spec, f_spat, f_comb = self.forward(x)
        for name, f in (("f_spec", f_spec), ("f_spat", f_spat), ("f_comb", f_comb)):
            if not np.isfinite(f.data).all():
                raise FloatingPointError(f"non-finite values in {name}")
        return PathwayFeatures(f_spec=f_spec.data.copy(), f_spat=f_spat.data.copy(), f_comb=f_comb.data.copy())

    def params(self) -> List[nx.Tensor]:
        out = self.spec_stem.params()
        for block in self.spec_blocks:
            out += block.params()
        if self.spat_stem is not None:
            out += self.spat_stem.params()
            for block in self.spat_blocks:
                out += block.params()
            out += self.spat_expand.params()
        if self.fuse_gate is not None:
            out += self.fuse_gate.params()
        if self.fuse_mix is not None:
            out += self.fuse_mix.params()
        return out
