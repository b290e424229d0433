"""Hyperspectral cube I/O, patch geometry, splits, and the synthetic benchmark.

A cube is a (H, W, C) float32 reflectance array plus a (H, W) uint16 label
grid. Label semantics: 0 is unlabeled background, 1..K are known classes,
65535 marks unknown classes (present only in target scenes). Cubes are
serialized to a small self-describing binary format (magic ``HSIC``,
length-prefixed JSON header, raw little-endian payload) that round-trips
bit-exactly.

The synthetic scene generator builds paired source/target cubes from shared
per-class endmember spectra: contiguous class regions are grown from random
seeds, per-pixel spectra get brightness jitter, a smooth deformation, and
white noise, and the target domain additionally passes through a smooth
multiplicative gain curve, a per-band gain jitter, and a smooth additive
offset before its own noise is applied. Unknown classes appear only in the
target.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MAGIC = b"HSIC"
BACKGROUND_LABEL = 0
UNKNOWN_LABEL = 65535
PATCH_HALF = 3  # 7x7 windows

__all__ = [
    "MAGIC",
    "BACKGROUND_LABEL",
    "UNKNOWN_LABEL",
    "PATCH_HALF",
    "HSICube",
    "CubeFormatError",
    "SceneError",
    "Patch",
    "BandStats",
    "BandRange",
    "SceneSpec",
    "AccessTracker",
    "TrackedCube",
    "save_cube",
    "load_cube",
    "reflect_index",
    "extract_patch",
    "extract_patch_batch",
    "labeled_coords",
    "stratified_split",
    "compute_band_stats",
    "compute_band_range",
    "standardize",
    "rescale_unit",
    "default_scene_spec",
    "synth_scene",
]


class CubeFormatError(ValueError):
    """Cube (de)serialization failure with a stable ``code`` for tests."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class SceneError(RuntimeError):
    pass


@dataclass
class HSICube:
    """One hyperspectral scene: reflectance stack, labels, class metadata."""

    data: np.ndarray  # (H, W, C) float32
    labels: np.ndarray  # (H, W) uint16
    num_classes: int
    class_names: List[str]

    def __post_init__(self):
        self.data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float32))
        self.labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.uint16))
        self.validate()

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def validate(self):
        if self.data.ndim != 3:
            raise CubeFormatError("bad_shape", f"data must be (H, W, C), got {self.data.shape}")
        if self.labels.shape != self.data.shape[:2]:
            raise CubeFormatError(
                "bad_shape",
                f"labels {self.labels.shape} do not match data grid {self.data.shape[:2]}",
            )
        if self.num_classes < 1:
            raise CubeFormatError("bad_header", f"num_classes must be >= 1, got {self.num_classes}")
        if len(self.class_names) != self.num_classes:
            raise CubeFormatError(
                "bad_header",
                f"{len(self.class_names)} class names for {self.num_classes} classes",
            )
        if not np.isfinite(self.data).all():
            raise CubeFormatError("non_finite", "cube data contains non-finite values")
        lab = self.labels
        known = (lab >= 1) & (lab <= self.num_classes)
        valid = known | (lab == BACKGROUND_LABEL) | (lab == UNKNOWN_LABEL)
        if not valid.all():
            bad = int(lab[~valid][0])
            raise CubeFormatError("label_range", f"label {bad} outside 0, 1..{self.num_classes}, {UNKNOWN_LABEL}")


# ---------------------------------------------------------------------------
# serialization


def save_cube(cube: HSICube, path) -> None:
    cube.validate()
    header = {
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "K": cube.num_classes,
        "dtype": "f32",
        "class_names": list(cube.class_names),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(cube.labels, dtype="<u2").tobytes())


def load_cube(path) -> HSICube:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CubeFormatError("bad_magic", f"not a cube file: {path}")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise CubeFormatError("truncated", "header extends past end of file")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CubeFormatError("bad_header", f"header is not valid JSON: {exc}") from exc
    for key in ("height", "width", "bands", "K", "dtype", "class_names"):
        if key not in header:
            raise CubeFormatError("bad_header", f"missing header field {key!r}")
    if header["dtype"] != "f32":
        raise CubeFormatError("bad_dtype", f"unsupported dtype {header['dtype']!r}")
    h, w, c = int(header["height"]), int(header["width"]), int(header["bands"])
    if h < 1 or w < 1 or c < 1:
        raise CubeFormatError("bad_header", f"non-positive dimensions ({h}, {w}, {c})")
    body = raw[8 + hlen :]
    data_bytes = h * w * c * 4
    label_bytes = h * w * 2
    if len(body) < data_bytes + label_bytes:
        raise CubeFormatError("truncated", f"payload has {len(body)} bytes, expected {data_bytes + label_bytes}")
    if len(body) > data_bytes + label_bytes:
        raise CubeFormatError("trailing_bytes", f"{len(body) - data_bytes - label_bytes} unexpected trailing bytes")
    data = np.frombuffer(body[:data_bytes], dtype="<f4").reshape(h, w, c)
    labels = np.frombuffer(body[data_bytes:], dtype="<u2").reshape(h, w)
    return HSICube(
        data=data.copy(),
        labels=labels.copy(),
        num_classes=int(header["K"]),
        class_names=[str(n) for n in header["class_names"]],
    )


# ---------------------------------------------------------------------------
# patch geometry


@dataclass
class Patch:
    window: np.ndarray  # (7, 7, C) float32
    label: int
    row: int
    col: int


def reflect_index(i: int, n: int) -> int:
    """Mirror an out-of-range index about the border pixel (no edge doubling)."""
    if n == 1:
        return 0
    while i < 0 or i >= n:
        if i < 0:
            i = -i
        else:
            i = 2 * (n - 1) - i
    return i


def extract_patch(cube: HSICube, row: int, col: int, half: int = PATCH_HALF) -> Patch:
    """Cut the (2*half+1)^2 window centred on a labeled pixel.

    Windows hanging over the scene edge are filled by mirror reflection
    about the border pixel, matching ``reflect_index``.
    """
    if not (0 <= row < cube.height and 0 <= col < cube.width):
        raise ValueError(f"patch centre ({row}, {col}) outside {cube.height}x{cube.width} grid")
    label = int(cube.labels[row, col])
    if label == BACKGROUND_LABEL:
        raise ValueError(f"patch centre ({row}, {col}) is unlabeled background")
    rows = [reflect_index(r, cube.height) for r in range(row - half, row + half + 1)]
    cols = [reflect_index(c, cube.width) for c in range(col - half, col + half + 1)]
    window = cube.data[np.ix_(rows, cols)]
    return Patch(window=np.ascontiguousarray(window), label=label, row=row, col=col)


def extract_patch_batch(data: np.ndarray, coords: np.ndarray, half: int = PATCH_HALF) -> np.ndarray:
    """Vectorized window extraction: (H, W, C) + (N, 2) -> (N, 2h+1, 2h+1, C)."""
    coords = np.asarray(coords)
    padded = np.pad(data, ((half, half), (half, half), (0, 0)), mode="reflect")
    win = sliding_window_view(padded, (2 * half + 1, 2 * half + 1), axis=(0, 1))
    # win is (H, W, C, k, k); gather and put bands last
    out = win[coords[:, 0], coords[:, 1]]
    return np.ascontiguousarray(out.transpose(0, 2, 3, 1))


def labeled_coords(cube: HSICube, include_unknown: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Coordinates and labels of every labeled pixel, row-major order."""
    lab = cube.labels
    mask = (lab >= 1) & (lab <= cube.num_classes)
    if include_unknown:
        mask |= lab == UNKNOWN_LABEL
    coords = np.argwhere(mask)
    return coords, lab[mask].astype(np.int64)


# ---------------------------------------------------------------------------
# splits and band statistics


def stratified_split(labels: np.ndarray, ratio: float = 0.8, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Per-class split: ceil(ratio * n_k) indices to train, rest to validation.

    Deterministic in (labels, ratio, seed); returns disjoint index arrays
    into ``labels``.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError("stratified_split expects a flat label array")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    train_parts, val_parts = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 2:
            raise ValueError(f"class {int(cls)} has {idx.size} samples, need at least 2")
        perm = rng.permutation(idx)
        n_train = math.ceil(ratio * idx.size)
        train_parts.append(perm[:n_train])
        val_parts.append(perm[n_train:])
    train = np.sort(np.concatenate(train_parts))
    val = np.sort(np.concatenate(val_parts)) if any(p.size for p in val_parts) else np.array([], dtype=np.int64)
    return train, val


@dataclass
class BandStats:
    mean: np.ndarray  # (C,)
    std: np.ndarray  # (C,)

    @property
    def bands(self) -> int:
        return self.mean.shape[0]


@dataclass
class BandRange:
    lo: np.ndarray
    hi: np.ndarray


def compute_band_stats(data: np.ndarray, coords: np.ndarray) -> BandStats:
    """Per-band mean/std over the given pixels; degenerate bands get std 1."""
    pixels = data[coords[:, 0], coords[:, 1]].astype(np.float64)
    mean = pixels.mean(axis=0)
    std = pixels.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return BandStats(mean=mean.astype(np.float32), std=std.astype(np.float32))


def compute_band_range(data: np.ndarray, coords: np.ndarray) -> BandRange:
    pixels = data[coords[:, 0], coords[:, 1]]
    return BandRange(lo=pixels.min(axis=0).astype(np.float32), hi=pixels.max(axis=0).astype(np.float32))


def standardize(cube: HSICube, stats: BandStats) -> HSICube:
    """Z-score every pixel with the supplied (source-train) band statistics."""
    if stats.bands != cube.bands:
        raise ValueError(f"stats cover {stats.bands} bands, cube has {cube.bands}")
    data = (cube.data - stats.mean[None, None, :]) / stats.std[None, None, :]
    return HSICube(
        data=data.astype(np.float32),
        labels=cube.labels.copy(),
        num_classes=cube.num_classes,
        class_names=list(cube.class_names),
    )


def rescale_unit(spectra: np.ndarray, band_range: BandRange) -> np.ndarray:
    """Min-max rescale spectra to [0, 1] per band, clipping values outside
    the training range; degenerate bands map to 0.5."""
    span = band_range.hi - band_range.lo
    safe = np.where(span < 1e-12, 1.0, span)
    out = (spectra - band_range.lo) / safe
    out = np.where(span[None, :] < 1e-12, 0.5, out) if spectra.ndim == 2 else np.where(span < 1e-12, 0.5, out)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SceneSpec:
    """Everything needed to synthesize one paired source/target benchmark."""

    num_known: int
    num_unknown: int
    bands: int
    height: int
    width: int
    endmembers: np.ndarray  # (K + U, C), known classes first
    pixels_per_known_source: int = 260
    pixels_per_known_target: int = 200
    pixels_per_unknown: int = 150
    # intra-class variation
    brightness_jitter: float = 0.05
    deform_scale: float = 0.02
    noise_source: float = 0.01
    texture_amp: float = 0.08
    # domain shift (target only)
    gain_amplitude: float = 0.12
    gain_jitter: float = 0.03
    offset_amplitude: float = 0.04
    noise_target: float = 0.015
    # region growing
    seed_min_separation: int = 6
    region_attempts: int = 60
    seed: int = 0

    def validate(self):
        if self.num_known < 2:
            raise ValueError(f"need at least 2 known classes, got {self.num_known}")
        if self.num_unknown < 1:
            raise ValueError(f"need at least 1 unknown class, got {self.num_unknown}")
        if self.bands < 8:
            raise ValueError(f"need at least 8 bands, got {self.bands}")
        em = np.asarray(self.endmembers)
        if em.shape != (self.num_known + self.num_unknown, self.bands):
            raise ValueError(
                f"endmembers must be ({self.num_known + self.num_unknown}, {self.bands}), got {em.shape}"
            )
        if not np.isfinite(em).all():
            raise ValueError("endmembers contain non-finite values")
        for budget, name in (
            (self.pixels_per_known_source, "pixels_per_known_source"),
            (self.pixels_per_known_target, "pixels_per_known_target"),
            (self.pixels_per_unknown, "pixels_per_unknown"),
        ):
            if budget < 50:
                raise ValueError(f"{name} must be >= 50 so every class occupies >= 50 pixels, got {budget}")
        if self.texture_amp < 0:
            raise ValueError("texture_amp must be nonnegative")
        src_total = self.num_known * self.pixels_per_known_source
        tgt_total = self.num_known * self.pixels_per_known_target + self.num_unknown * self.pixels_per_unknown
        if max(src_total, tgt_total) > 0.75 * self.height * self.width:
            raise ValueError("class budgets exceed 75% of the scene, regions cannot grow freely")


SHIFT_PRESETS: Dict[str, Dict[str, float]] = {
    "none": dict(gain_amplitude=0.0, gain_jitter=0.0, offset_amplitude=0.0, noise_target=0.01),
    "mild": dict(gain_amplitude=0.06, gain_jitter=0.015, offset_amplitude=0.02, noise_target=0.012),
    "moderate": dict(gain_amplitude=0.12, gain_jitter=0.03, offset_amplitude=0.04, noise_target=0.015),
    "strong": dict(gain_amplitude=0.22, gain_jitter=0.06, offset_amplitude=0.08, noise_target=0.02),
}


def _smooth_curves(rng: np.random.Generator, count: int, bands: int, min_sep: float = 0.12, attempts: int = 200) -> np.ndarray:
    """Random smooth reflectance-like curves with enforced pairwise separation."""
    x = np.linspace(0.0, 1.0, bands)

    def one() -> np.ndarray:
        curve = 0.25 + 0.45 * rng.uniform() + rng.uniform(-0.3, 0.3) * (x - 0.5)
        for _ in range(int(rng.integers(2, 5))):
            amp = rng.uniform(-0.35, 0.5)
            mu = rng.uniform(0.0, 1.0)
            width = rng.uniform(0.04, 0.16)
            curve = curve + amp * np.exp(-0.5 * ((x - mu) / width) ** 2)
        return np.clip(curve, 0.02, 1.2)

    curves: List[np.ndarray] = []
    for _ in range(count):
        for attempt in range(attempts):
            cand = one()
            if all(math.sqrt(float(np.mean((cand - c) ** 2))) >= min_sep for c in curves):
                curves.append(cand)
                break
        else:
            raise SceneError(f"could not draw {count} separated endmembers (min_sep={min_sep})")
    return np.stack(curves)


def _blend_unknowns(rng: np.random.Generator, known: np.ndarray, count: int,
                    min_sep: float = 0.05, attempts: int = 200) -> np.ndarray:
    """Unknown endmembers that sit between known materials.

    A convex blend of two known curves plus a small smooth residual stays
    inside the scene's spectral envelope, so the unknown class is plausible
    rather than an arbitrary far-away curve. Far-away curves are the easy
    case for a distance rule and the degenerate case for an evidential
    model, which extrapolates them onto whichever class ray they project
    onto with high confidence. In-envelope unknowns are the regime the
    rejection rule is supposed to handle.
    """
    k, bands = known.shape
    out: List[np.ndarray] = []
    for _ in range(count):
        for _ in range(attempts):
            i, j = rng.choice(k, size=2, replace=False)
            lam = rng.uniform(0.35, 0.65)
            residual = _smooth_curves(rng, 1, bands, min_sep=0.0)[0]
            cand = np.clip(lam * known[i] + (1.0 - lam) * known[j]
                           + 0.25 * (residual - residual.mean()), 0.02, 1.2)
            dists = [math.sqrt(float(np.mean((cand - c) ** 2))) for c in list(known) + out]
            if min(dists) >= min_sep:
                out.append(cand)
                break
        else:
            raise SceneError(f"could not blend {count} unknown endmembers (min_sep={min_sep})")
    return np.stack(out)


def default_scene_spec(
    seed: int = 0,
    num_known: int = 5,
    num_unknown: int = 2,
    bands: int = 64,
    height: int = 56,
    width: int = 56,
    shift: str = "moderate",
    **overrides,
) -> SceneSpec:
    """The stock benchmark spec: seeded smooth endmembers plus a shift preset."""
    if shift not in SHIFT_PRESETS:
        raise ValueError(f"unknown shift preset {shift!r}, pick one of {sorted(SHIFT_PRESETS)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE17]))
    known = _smooth_curves(rng, num_known, bands, min_sep=0.25)
    endmembers = np.concatenate([known, _blend_unknowns(rng, known, num_unknown)], axis=0)
    spec = SceneSpec(
        num_known=num_known,
        num_unknown=num_unknown,
        bands=bands,
        height=height,
        width=width,
        endmembers=endmembers,
        seed=seed,
        **SHIFT_PRESETS[shift],
    )
    spec = replace(spec, **overrides)
    spec.validate()
    return spec


def _grow_regions(
    height: int, width: int, budgets: Sequence[int], rng: np.random.Generator, min_sep: int, attempts: int
) -> np.ndarray:
    """Grow one contiguous region per class (labels 1..len(budgets)), exact sizes."""
    n_classes = len(budgets)
    for attempt in range(attempts):
        sep = max(2, min_sep - attempt // 10)  # relax separation if placement keeps failing
        grid = np.zeros((height, width), dtype=np.int32)
        seeds: List[Tuple[int, int]] = []
        placed = True
        for _ in range(n_classes):
            for _try in range(300):
                r = int(rng.integers(0, height))
                c = int(rng.integers(0, width))
                if all(max(abs(r - sr), abs(c - sc)) >= sep for sr, sc in seeds):
                    seeds.append((r, c))
                    break
            else:
                placed = False
                break
        if not placed:
            continue
        frontiers: List[List[Tuple[int, int]]] = []
        remaining = list(budgets)
        for cls, (r, c) in enumerate(seeds, start=1):
            grid[r, c] = cls
            frontiers.append([(r, c)])
            remaining[cls - 1] -= 1
        failed = False
        while any(n > 0 for n in remaining) and not failed:
            progressed = False
            for cls in range(n_classes):
                if remaining[cls] <= 0:
                    continue
                frontier = frontiers[cls]
                grown = False
                while frontier and not grown:
                    pick = int(rng.integers(0, len(frontier)))
                    r, c = frontier[pick]
                    nbrs = [
                        (rr, cc)
                        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))
                        if 0 <= rr < height and 0 <= cc < width and grid[rr, cc] == 0
                    ]
                    if not nbrs:
                        frontier[pick] = frontier[-1]
                        frontier.pop()
                        continue
                    rr, cc = nbrs[int(rng.integers(0, len(nbrs)))]
                    grid[rr, cc] = cls + 1
                    frontier.append((rr, cc))
                    remaining[cls] -= 1
                    grown = True
                    progressed = True
                if not frontier and remaining[cls] > 0:
                    failed = True
                    break
            if not progressed:
                failed = True
        if not failed:
            return grid
    raise SceneError(f"region growing failed after {attempts} attempts (budgets {list(budgets)})")


def _class_pixels(
    endmember: np.ndarray, n: int, rng: np.random.Generator, spec: SceneSpec, noise: float
) -> np.ndarray:
    """Sample n spectra around one endmember: brightness jitter, smooth
    deformation, white noise."""
    bands = endmember.shape[0]
    x = np.linspace(0.0, 1.0, bands)[None, :]
    scale = 1.0 + rng.normal(0.0, spec.brightness_jitter, size=(n, 1))
    amps = rng.normal(0.0, spec.deform_scale, size=(n, 1))
    freqs = rng.integers(1, 4, size=(n, 1))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(n, 1))
    deform = amps * np.sin(2.0 * math.pi * freqs * x + phases)
    return endmember[None, :] * scale + deform + rng.normal(0.0, noise, size=(n, bands))


def _shift_curves(spec: SceneSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Fixed per-scene domain shift: smooth gain, per-band jitter, smooth offset."""
    bands = spec.bands
    x = np.linspace(0.0, 1.0, bands)
    gain = spec.gain_amplitude * np.sin(2.0 * math.pi * rng.uniform(1.0, 3.0) * x + rng.uniform(0.0, 2.0 * math.pi))
    gain = gain + spec.gain_jitter * rng.normal(0.0, 1.0, size=bands)
    offset = spec.offset_amplitude * np.sin(2.0 * math.pi * rng.uniform(1.0, 3.0) * x + rng.uniform(0.0, 2.0 * math.pi))
    return gain, offset


def _texture_field(spec: SceneSpec, class_id: int, coords: np.ndarray) -> np.ndarray:
    """Per-class brightness wave over pixel position.

    Materials differ not only in their spectra but in surface texture, and
    the spatial pathway has nothing to learn from regions that are iid
    inside. The wave parameters are derived from the class id and the
    scene seed only, so the same material carries the same texture in the
    source and the target scene.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x7E7, class_id]))
    fx, fy = rng.uniform(0.15, 0.45, size=2)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    wave = np.sin(2.0 * math.pi * (fx * coords[:, 0] + fy * coords[:, 1]) + phase)
    return 1.0 + spec.texture_amp * wave


def _fill_scene(
    grid: np.ndarray,
    spec: SceneSpec,
    class_ids: Sequence[int],
    rng: np.random.Generator,
    noise: float,
    shift: Optional[Tuple[np.ndarray, np.ndarray]],
) -> np.ndarray:
    """Generate spectra for every pixel of one scene (background included)."""
    height, width = grid.shape
    data = np.zeros((height, width, spec.bands), dtype=np.float64)
    background = 0.6 * spec.endmembers[: spec.num_known].mean(axis=0)
    mask_bg = grid == 0
    n_bg = int(mask_bg.sum())
    if n_bg:
        tex = _texture_field(spec, 0, np.argwhere(mask_bg))
        data[mask_bg] = _class_pixels(background, n_bg, rng, spec, noise) * tex[:, None]
    for slot, class_id in enumerate(class_ids, start=1):
        mask = grid == slot
        n = int(mask.sum())
        if n:
            tex = _texture_field(spec, class_id, np.argwhere(mask))
            data[mask] = _class_pixels(spec.endmembers[class_id - 1], n, rng, spec, noise) * tex[:, None]
    if shift is not None:
        gain, offset = shift
        data = data * (1.0 + gain)[None, None, :] + offset[None, None, :]
    return data.astype(np.float32)


def synth_scene(spec: SceneSpec) -> Tuple[HSICube, HSICube]:
    """Build the paired (source, target) cubes for one benchmark seed.

    Deterministic in the spec. Source carries labels 1..K only; target
    carries 1..K plus ``UNKNOWN_LABEL`` regions for the U unknown classes.
    """
    spec.validate()
    root = np.random.SeedSequence([spec.seed, 0x5CE])
    rng_layout, rng_source, rng_target, rng_shift = (np.random.default_rng(s) for s in root.spawn(4))

    k, u = spec.num_known, spec.num_unknown
    src_grid = _grow_regions(
        spec.height,
        spec.width,
        [spec.pixels_per_known_source] * k,
        rng_layout,
        spec.seed_min_separation,
        spec.region_attempts,
    )
    tgt_budgets = [spec.pixels_per_known_target] * k + [spec.pixels_per_unknown] * u
    tgt_grid = _grow_regions(
        spec.height, spec.width, tgt_budgets, rng_layout, spec.seed_min_separation, spec.region_attempts
    )

    shift = _shift_curves(spec, rng_shift)
    src_data = _fill_scene(src_grid, spec, list(range(1, k + 1)), rng_source, spec.noise_source, None)
    tgt_data = _fill_scene(tgt_grid, spec, list(range(1, k + u + 1)), rng_target, spec.noise_target, shift)

    src_labels = src_grid.astype(np.uint16)
    tgt_labels = tgt_grid.astype(np.uint16)
    tgt_labels[tgt_grid > k] = UNKNOWN_LABEL

    names = [f"class_{i}" for i in range(1, k + 1)]
    source = HSICube(data=src_data, labels=src_labels, num_classes=k, class_names=names)
    target = HSICube(data=tgt_data, labels=tgt_labels, num_classes=k, class_names=names)
    return source, target


# ---------------------------------------------------------------------------
# access tracking (domain-generalization contract)


class AccessTracker:
    """Counts pixel reads per pipeline phase.

    The pipeline labels its phases (train/calibrate/evaluate/report); any
    read of a tracked cube's data or labels is booked to the current phase,
    which lets tests assert that the target was never touched before
    evaluation.
    """

    def __init__(self):
        self.phase = "setup"
        self.reads: Dict[str, int] = {}

    def note(self):
        self.reads[self.phase] = self.reads.get(self.phase, 0) + 1

    def reads_outside(self, allowed=("evaluate", "report")) -> int:
        return sum(n for phase, n in self.reads.items() if phase not in allowed)


class TrackedCube:
    """HSICube proxy whose pixel accesses are booked on an AccessTracker.

    Shape/metadata lookups are free; only ``data`` and ``labels`` count as
    reads.
    """

    def __init__(self, cube: HSICube, tracker: AccessTracker):
        self._cube = cube
        self.tracker = tracker

    @property
    def data(self) -> np.ndarray:
        self.tracker.note()
        return self._cube.data

    @property
    def labels(self) -> np.ndarray:
        self.tracker.note()
        return self._cube.labels

    @property
    def num_classes(self) -> int:
        return self._cube.num_classes

    @property
    def class_names(self) -> List[str]:
        return self._cube.class_names

    @property
    def height(self) -> int:
        return self._cube.height

    @property
    def width(self) -> int:
        return self._cube.width

    @property
    def bands(self) -> int:
        return self._cube.bands

    def validate(self):
        self._cube.validate()
