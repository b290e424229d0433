"""End-to-end orchestration: training, calibration, evaluation, ablation.

Everything here is deterministic in (config, seed). Run directories hold
plain CSV/JSON/bitmap artifacts plus a manifest naming each one; reruns with
the same inputs reproduce every artifact byte for byte (the manifest isolates
its timestamp in a single field).
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import numerics as nx
from .calibration import CalibrationResult, SyntheticUnknownSpec, calibrate_threshold
from .dataio import (
    UNKNOWN_LABEL,
    BandRange,
    BandStats,
    Patch,
    compute_band_range,
    compute_band_stats,
    extract_patch_batch,
    labeled_coords,
    standardize,
    stratified_split,
)
from .dcrn import FUSION_MODES, PATHWAY_MODES, DcrnConfig
from .edl import ESTIMATOR_KINDS, UncertaintyEstimator, fit_temperature
from .metrics import MetricsReport, map_to_rgb, report_from_predictions, write_bmp
from .network import OsdgNetwork, TrainBatch, write_npz
from .sifd import TRANSFORM_VARIANTS, SifdConfig
from .ssud import VARIANTS as SSUD_VARIANTS
from .ssud import SsudConfig, decide_batch, total_loss

TRAIN_RATIO = 0.8
WEIGHT_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
SHUFFLE_STREAM = 0x514
VIEW_STREAM = 0xA06
DECISION_CHUNK = 512

REPORT_TABLES = (
    "branch_frequency",
    "class_uncertainty",
    "evidence_entropy",
    "evidence_uncertainty",
    "pathway_uncertainty",
)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """One experiment: every module config plus the optimization scalars."""

    sifd: SifdConfig = field(default_factory=SifdConfig)
    dcrn: DcrnConfig = field(default_factory=DcrnConfig)
    ssud: SsudConfig = field(default_factory=SsudConfig)
    estimator: UncertaintyEstimator = field(default_factory=UncertaintyEstimator)
    synthetic_unknowns: SyntheticUnknownSpec = field(default_factory=SyntheticUnknownSpec)
    epochs: int = 50
    batch: int = 32
    lr: float = 1e-3
    head_lr_scale: float = 0.1
    weight_decay: float = 1e-5
    clip: float = 1.0
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 0.1
    lam_reg: float = 0.2
    rho_target: float = 0.75
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)

    def validate(self) -> None:
        self.sifd.validate()
        self.dcrn.validate()
        self.ssud.validate()
        self.estimator.validate()
        self.synthetic_unknowns.validate()
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be positive")
        for name, v in (("lr", self.lr), ("head_lr_scale", self.head_lr_scale), ("clip", self.clip)):
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive")
        if not np.isfinite(self.weight_decay) or self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not np.isfinite(self.lam_reg) or self.lam_reg < 0:
            raise ValueError("lam_reg must be nonnegative")
        for name, w in (("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)):
            if not any(abs(w - g) < 1e-12 for g in WEIGHT_GRID):
                raise ValueError(f"{name}={w} is not on the sweep grid {WEIGHT_GRID}")
        if not 0.0 < self.rho_target <= 1.0:
            raise ValueError("rho_target must lie in (0, 1]")
        if len(self.seeds) == 0:
            raise ValueError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")

    def to_dict(self) -> Dict:
        return {
            "sifd": dataclasses.asdict(self.sifd),
            "dcrn": dataclasses.asdict(self.dcrn),
            "ssud": dataclasses.asdict(self.ssud),
            "estimator": dataclasses.asdict(self.estimator),
            "synthetic_unknowns": dataclasses.asdict(self.synthetic_unknowns),
            "epochs": self.epochs,
            "batch": self.batch,
            "lr": self.lr,
            "head_lr_scale": self.head_lr_scale,
            "weight_decay": self.weight_decay,
            "clip": self.clip,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "lam_reg": self.lam_reg,
            "rho_target": self.rho_target,
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "sifd" in d:
            sub = dict(d.pop("sifd"))
            if "channels" in sub:
                sub["channels"] = tuple(sub["channels"])
            kwargs["sifd"] = SifdConfig(**sub)
        if "dcrn" in d:
            kwargs["dcrn"] = DcrnConfig(**d.pop("dcrn"))
        if "ssud" in d:
            kwargs["ssud"] = SsudConfig(**d.pop("ssud"))
        if "estimator" in d:
            kwargs["estimator"] = UncertaintyEstimator(**d.pop("estimator"))
        if "synthetic_unknowns" in d:
            sub = dict(d.pop("synthetic_unknowns"))
            for key in ("sigmas", "lambda_range", "band_fraction_range", "patch_count_range"):
                if key in sub:
                    sub[key] = tuple(sub[key])
            kwargs["synthetic_unknowns"] = SyntheticUnknownSpec(**sub)
        if "seeds" in d:
            kwargs["seeds"] = tuple(int(s) for s in d.pop("seeds"))
        kwargs.update(d)
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def training_hash(self) -> str:
        """Hash over the fields that shape the trained weights.

        Decision-time knobs (ssud variant, estimator, calibration spec,
        rho_target) are excluded, so variants differing only there can share
        one training run.
        """
        subset = {
            "sifd": dataclasses.asdict(self.sifd),
            "dcrn": dataclasses.asdict(self.dcrn),
            "epochs": self.epochs,
            "batch": self.batch,
            "lr": self.lr,
            "head_lr_scale": self.head_lr_scale,
            "weight_decay": self.weight_decay,
            "clip": self.clip,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "lam_reg": self.lam_reg,
        }
        blob = json.dumps(subset, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        cfg = RunConfig.from_json(f.read())
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# training


@dataclass
class RunHistory:
    loss_total: List[float]
    loss_cls: List[float]
    loss_edl: List[float]
    loss_domain: List[float]
    loss_recon: List[float]
    val_accuracy: List[float]
    lr: List[float]
    best_epoch: int

    def validate(self, epochs: Optional[int] = None) -> None:
        n = len(self.loss_total)
        series = (self.loss_cls, self.loss_edl, self.loss_domain, self.loss_recon, self.val_accuracy, self.lr)
        if any(len(s) != n for s in series):
            raise ValueError("history series lengths disagree")
        if epochs is not None and n != epochs:
            raise ValueError(f"history covers {n} epochs, expected {epochs}")
        if not 0 <= self.best_epoch < n:
            raise ValueError("best_epoch out of range")
        best = max(self.val_accuracy)
        if self.val_accuracy[self.best_epoch] != best:
            raise ValueError("best_epoch does not hold the best validation accuracy")

    def to_csv(self) -> str:
        lines = ["epoch,loss_total,loss_cls,loss_edl,loss_domain,loss_recon,val_accuracy,lr,is_best"]
        for e in range(len(self.loss_total)):
            cells = [str(e)]
            for v in (
                self.loss_total[e],
                self.loss_cls[e],
                self.loss_edl[e],
                self.loss_domain[e],
                self.loss_recon[e],
                self.val_accuracy[e],
                self.lr[e],
            ):
                cells.append(repr(float(v)))
            cells.append("1" if e == self.best_epoch else "0")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


@dataclass
class TrainedModel:
    """Weights plus the source-derived normalizers every later stage needs."""

    network: OsdgNetwork
    stats: BandStats
    band_range: BandRange
    history: Optional[RunHistory]
    seed: int


def _center_spectra(windows: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(windows[:, windows.shape[1] // 2, windows.shape[2] // 2, :])


def _standardize_windows(windows: np.ndarray, stats: BandStats) -> np.ndarray:
    return ((windows - stats.mean[None, None, None, :]) / stats.std[None, None, None, :]).astype(np.float32)


def _domain_views(spectra: np.ndarray, sifd_cfg: SifdConfig, rng: np.random.Generator) -> np.ndarray:
    """Second view of each spectrum for the adversarial branch.

    Cross-scene drift is dominated by smooth gain and offset curves over
    wavelength, so the views sample exactly that family (one random
    low-frequency cosine per sample for each) plus band noise. The
    discriminator then pushes the frequency encoder to drop whatever
    separates the two views, which is what should not survive a change
    of scene.
    """
    n, bands = spectra.shape
    t = np.arange(bands, dtype=np.float64) / bands
    freq = rng.uniform(0.5, 2.0, size=(n, 1))
    phase = rng.uniform(0.0, 1.0, size=(n, 1))
    gain = 1.0 + sifd_cfg.domain_view_gain * np.cos(2.0 * np.pi * (freq * t + phase))
    freq_o = rng.uniform(0.5, 2.0, size=(n, 1))
    phase_o = rng.uniform(0.0, 1.0, size=(n, 1))
    offset = sifd_cfg.domain_view_offset * np.cos(2.0 * np.pi * (freq_o * t + phase_o))
    noise = rng.normal(scale=sifd_cfg.domain_view_sigma, size=spectra.shape)
    return (spectra * gain + offset + noise).astype(np.float32)


def _closed_set_accuracy(network: OsdgNetwork, windows: np.ndarray, labels: np.ndarray) -> float:
    hits = 0
    for lo in range(0, windows.shape[0], DECISION_CHUNK):
        p = network.decision_inputs(windows[lo : lo + DECISION_CHUNK])["p_cls"]
        hits += int(np.sum(p.argmax(axis=1) + 1 == labels[lo : lo + DECISION_CHUNK]))
    return hits / float(windows.shape[0])


def train(cfg: RunConfig, source, seed: int) -> TrainedModel:
    """Single-stage joint optimization on the labeled source scene.

    Standardization statistics and reconstruction ranges come from the
    training split only. Minibatch order and the augmented domain views are
    redrawn from seeded streams every epoch. The returned weights are the
    epoch snapshot with the best closed-set validation accuracy.
    """
    cfg.validate()
    coords, labels = labeled_coords(source)
    tr_idx, va_idx = stratified_split(labels, TRAIN_RATIO, seed)
    if va_idx.size == 0:
        raise ValueError("validation split is empty; scene too small")
    data = source.data
    stats = compute_band_stats(data, coords[tr_idx])
    band_range = compute_band_range(data, coords[tr_idx])

    windows_tr = _standardize_windows(extract_patch_batch(data, coords[tr_idx]), stats)
    windows_va = _standardize_windows(extract_patch_batch(data, coords[va_idx]), stats)
    labels_tr = labels[tr_idx]
    labels_va = labels[va_idx]
    spectra_tr = _center_spectra(windows_tr)
    raw_center = data[coords[tr_idx, 0], coords[tr_idx, 1]]
    unit_tr = np.clip((raw_center - band_range.lo) / np.where(band_range.hi - band_range.lo < 1e-12, 1.0, band_range.hi - band_range.lo), 0.0, 1.0).astype(np.float32)

    network = OsdgNetwork(cfg.sifd, cfg.dcrn, num_classes=source.num_classes, bands=source.bands, seed=seed)
    params = network.params()
    head_ids = {id(t) for t in network.evidence_params()}
    scales = [cfg.head_lr_scale if id(p) in head_ids else 1.0 for p in params]
    opt = nx.adam_init([p.data for p in params], lr=cfg.lr, weight_decay=cfg.weight_decay, lr_scales=scales)

    n = windows_tr.shape[0]
    history = RunHistory([], [], [], [], [], [], [], best_epoch=0)
    best_acc = -1.0
    best_state = network.state_arrays()

    for epoch in range(cfg.epochs):
        lr_e = nx.cosine_lr(epoch, cfg.epochs, cfg.lr)
        opt = replace(opt, lr=lr_e)
        perm = np.random.default_rng(np.random.SeedSequence([seed, SHUFFLE_STREAM, epoch])).permutation(n)
        view_rng = np.random.default_rng(np.random.SeedSequence([seed, VIEW_STREAM, epoch]))
        aug_tr = _domain_views(spectra_tr, cfg.sifd, view_rng)

        sums = {"total": 0.0, "cls": 0.0, "edl": 0.0, "domain": 0.0, "recon": 0.0}
        batches = 0
        for lo in range(0, n, cfg.batch):
            idx = perm[lo : lo + cfg.batch]
            tb = TrainBatch(
                windows=windows_tr[idx],
                spectra=spectra_tr[idx],
                spectra_unit=unit_tr[idx],
                aug_spectra=aug_tr[idx],
                labels=labels_tr[idx],
            )
            for p in params:
                p.zero_grad()
            with nx.GradTape() as tape:
                loss, parts = total_loss(network, tb, cfg.alpha, cfg.beta, cfg.gamma, cfg.lam_reg)
                if not all(np.isfinite(v) for v in parts.values()):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch} batch {batches}: "
                        + ", ".join(f"{k}={v}" for k, v in parts.items())
                    )
                tape.backward(loss)
            grads, _norm = nx.clip_grad_norm([p.grad_or_zeros() for p in params], cfg.clip)
            new_data, opt = nx.adam_step([p.data for p in params], grads, opt)
            for p, nd in zip(params, new_data):
                p.data = nd
            for key in sums:
                sums[key] += parts[key]
            batches += 1

        acc = _closed_set_accuracy(network, windows_va, labels_va)
        history.loss_total.append(sums["total"] / batches)
        history.loss_cls.append(sums["cls"] / batches)
        history.loss_edl.append(sums["edl"] / batches)
        history.loss_domain.append(sums["domain"] / batches)
        history.loss_recon.append(sums["recon"] / batches)
        history.val_accuracy.append(acc)
        history.lr.append(lr_e)
        # ties go to the later epoch: once validation saturates the extra
        # training still sharpens the evidence heads
        if acc >= best_acc:
            best_acc = acc
            history.best_epoch = epoch
            best_state = network.state_arrays()

    network.load_state(best_state)
    history.validate(cfg.epochs)
    return TrainedModel(network=network, stats=stats, band_range=band_range, history=history, seed=seed)


# ---------------------------------------------------------------------------
# decision passes


def _decision_pass(network: OsdgNetwork, windows: np.ndarray, estimator: UncertaintyEstimator) -> Dict[str, np.ndarray]:
    pieces: Dict[str, List[np.ndarray]] = {}
    for lo in range(0, windows.shape[0], DECISION_CHUNK):
        out = network.decision_inputs(windows[lo : lo + DECISION_CHUNK], estimator)
        for key, arr in out.items():
            pieces.setdefault(key, []).append(arr)
    return {key: np.concatenate(chunks, axis=0) for key, chunks in pieces.items()}


def _decide_windows(model: TrainedModel, windows: np.ndarray, estimator: UncertaintyEstimator, ssud_cfg: SsudConfig):
    raw = _decision_pass(model.network, windows, estimator)
    dec = decide_batch(raw["u_spec"], raw["u_spat"], raw["u_comb"], raw["p_cls"], ssud_cfg)
    return dec, raw


# ---------------------------------------------------------------------------
# calibration


def _val_patches(source, model: TrainedModel) -> List[Patch]:
    coords, labels = labeled_coords(source)
    _tr, va_idx = stratified_split(labels, TRAIN_RATIO, model.seed)
    windows = _standardize_windows(extract_patch_batch(source.data, coords[va_idx]), model.stats)
    out = []
    for i, idx in enumerate(va_idx):
        out.append(Patch(window=windows[i], label=int(labels[idx]), row=int(coords[idx, 0]), col=int(coords[idx, 1])))
    return out


def calibrate(model: TrainedModel, source, cfg: RunConfig) -> Tuple[CalibrationResult, UncertaintyEstimator]:
    """Pick the rejection threshold on held-out source patches.

    Synthetic unknowns are generated in standardized space from the
    validation split (the same split training held out, re-derived from the
    seed). For the temperature-scaled estimator the temperature is fitted on
    the validation logits first, then the sweep runs with it in place.
    """
    patches = _val_patches(source, model)
    estimator = cfg.estimator
    if estimator.kind == "temp_scaling":
        windows = np.stack([p.window for p in patches])
        raw = _decision_pass(model.network, windows, UncertaintyEstimator())
        labels = np.array([p.label for p in patches])
        t = fit_temperature(raw["logits"], labels)
        estimator = replace(estimator, temperature=t)
    ssud_cfg = cfg.ssud

    def score_fn(batch: Sequence[Patch]) -> np.ndarray:
        windows = np.stack([p.window for p in batch])
        dec, _raw = _decide_windows(model, windows, estimator, ssud_cfg)
        return dec.r_score

    # corruption generators draw per-band replacements; they see the same
    # standardized space the patches live in, flattened to a 1-row scene
    coords, labels = labeled_coords(source)
    tr_idx, _va = stratified_split(labels, TRAIN_RATIO, model.seed)
    pix = (source.data[coords[tr_idx, 0], coords[tr_idx, 1]] - model.stats.mean) / model.stats.std
    flat_coords = np.stack([np.zeros(len(tr_idx), dtype=np.int64), np.arange(len(tr_idx))], axis=1)
    std_stats = compute_band_stats(pix[None, :, :].astype(np.float32), flat_coords)
    result = calibrate_threshold(score_fn, patches, cfg.synthetic_unknowns, std_stats, cfg.rho_target)
    return result, estimator


# ---------------------------------------------------------------------------
# evaluation


def _check_bands(model: TrainedModel, cube) -> None:
    if cube.bands != model.stats.bands:
        raise ValueError(f"target has {cube.bands} bands, model was trained on {model.stats.bands}")


def evaluate(model: TrainedModel, target, cfg: RunConfig, tau: float,
             estimator: Optional[UncertaintyEstimator] = None, map_path=None) -> MetricsReport:
    """Score every labeled target pixel and aggregate the open-set report."""
    _check_bands(model, target)
    estimator = cfg.estimator if estimator is None else estimator
    ssud_cfg = replace(cfg.ssud, tau=float(tau))
    std = standardize(target, model.stats)
    coords, labels = labeled_coords(std, include_unknown=True)
    windows = extract_patch_batch(std.data, coords)
    dec, _raw = _decide_windows(model, windows, estimator, ssud_cfg)
    report = report_from_predictions(dec.prediction, labels, std.num_classes, float(tau))
    if map_path is not None:
        grid = np.zeros(std.labels.shape, dtype=np.int64)
        grid[coords[:, 0], coords[:, 1]] = dec.prediction
        write_bmp(map_path, map_to_rgb(grid, std.num_classes))
    return report


# ---------------------------------------------------------------------------
# uncertainty analysis exports


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path, header: str, rows: List[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join([header] + rows) + "\n")


def uncertainty_report(model: TrainedModel, target, cfg: RunConfig, tau: float, out_dir,
                       estimator: Optional[UncertaintyEstimator] = None) -> Dict[str, str]:
    """Five tables describing how the decision rule behaved on the target.

    branch_frequency: pathway selection shares per true group.
    class_uncertainty: final uncertainty moments per true class.
    evidence_entropy: histogram of normalized Dirichlet-mean entropy.
    evidence_uncertainty: (total evidence strength, uncertainty) pairs.
    pathway_uncertainty: (spectral, spatial, chosen branch) triples.
    """
    _check_bands(model, target)
    estimator = cfg.estimator if estimator is None else estimator
    ssud_cfg = replace(cfg.ssud, tau=float(tau))
    std = standardize(target, model.stats)
    coords, labels = labeled_coords(std, include_unknown=True)
    windows = extract_patch_batch(std.data, coords)
    dec, raw = _decide_windows(model, windows, estimator, ssud_cfg)

    os.makedirs(out_dir, exist_ok=True)
    known = labels != UNKNOWN_LABEL
    groups = [("known", known)]
    if np.any(~known):
        groups.append(("unknown", ~known))
    paths: Dict[str, str] = {}

    rows = []
    for name, mask in groups:
        total = int(mask.sum())
        for branch in ("spectral", "spatial", "combined"):
            frac = float(np.sum(dec.branch[mask] == branch)) / total
            rows.append(f"{name},{branch},{_fmt(frac)}")
    paths["branch_frequency"] = os.path.join(out_dir, "branch_frequency.csv")
    _write_csv(paths["branch_frequency"], "group,branch,frequency", rows)

    rows = []
    class_ids = [(str(c), labels == c) for c in range(1, std.num_classes + 1)]
    if np.any(~known):
        class_ids.append(("unknown", ~known))
    for name, mask in class_ids:
        if not np.any(mask):
            continue
        u = dec.u_final[mask]
        rows.append(f"{name},{int(mask.sum())},{_fmt(u.mean())},{_fmt(u.std())}")
    paths["class_uncertainty"] = os.path.join(out_dir, "class_uncertainty.csv")
    _write_csv(paths["class_uncertainty"], "class,count,mean_uncertainty,std_uncertainty", rows)

    alpha = raw["evidence"] + 1.0
    p = alpha / alpha.sum(axis=1, keepdims=True)
    entropy = -np.sum(p * np.log(p), axis=1) / np.log(std.num_classes)
    edges = np.linspace(0.0, 1.0, 11)
    counts = {name: np.histogram(entropy[mask], bins=edges)[0] for name, mask in groups}
    rows = []
    for b in range(10):
        cells = [_fmt(edges[b]), _fmt(edges[b + 1])]
        cells.append(str(int(counts["known"][b])))
        cells.append(str(int(counts["unknown"][b])) if "unknown" in counts else "0")
        rows.append(",".join(cells))
    paths["evidence_entropy"] = os.path.join(out_dir, "evidence_entropy.csv")
    _write_csv(paths["evidence_entropy"], "bin_lo,bin_hi,known_count,unknown_count", rows)

    rows = [f"{_fmt(s)},{_fmt(u)}" for s, u in zip(raw["strength"], raw["u_comb"])]
    paths["evidence_uncertainty"] = os.path.join(out_dir, "evidence_uncertainty.csv")
    _write_csv(paths["evidence_uncertainty"], "strength,uncertainty", rows)

    rows = [f"{_fmt(a)},{_fmt(b)},{c}" for a, b, c in zip(raw["u_spec"], raw["u_spat"], dec.branch)]
    paths["pathway_uncertainty"] = os.path.join(out_dir, "pathway_uncertainty.csv")
    _write_csv(paths["pathway_uncertainty"], "u_spec,u_spat,branch", rows)
    return paths


# ---------------------------------------------------------------------------
# ablation


def variant_space() -> Dict[str, str]:
    """Every recognized ablation name mapped to the family it modifies."""
    space: Dict[str, str] = {}
    for v in SSUD_VARIANTS:
        space[v] = "ssud"
    for v in ESTIMATOR_KINDS:
        space[v] = "estimator"
    for v in TRANSFORM_VARIANTS:
        space[v] = "sifd"
    for v in PATHWAY_MODES:
        space[v] = "dcrn_mode"
    for v in FUSION_MODES:
        space[v] = "dcrn_fusion"
    return space


TRAINING_FAMILIES = ("sifd", "dcrn_mode", "dcrn_fusion")


def apply_variant(cfg: RunConfig, name: str) -> RunConfig:
    space = variant_space()
    if name not in space:
        raise ValueError(f"unknown variant {name!r}; valid names: {', '.join(sorted(space))}")
    family = space[name]
    if family == "ssud":
        return replace(cfg, ssud=replace(cfg.ssud, variant=name))
    if family == "estimator":
        return replace(cfg, estimator=replace(cfg.estimator, kind=name))
    if family == "sifd":
        return replace(cfg, sifd=replace(cfg.sifd, variant=name))
    if family == "dcrn_mode":
        return replace(cfg, dcrn=replace(cfg.dcrn, mode=name))
    return replace(cfg, dcrn=replace(cfg.dcrn, fusion=name))


def _trained(cfg: RunConfig, source, seed: int, cache: Dict) -> TrainedModel:
    key = (cfg.training_hash(), seed)
    if key not in cache:
        cache[key] = train(cfg, source, seed)
    return cache[key]


def ablate(cfg: RunConfig, variants: Sequence[str], source, target,
           cache: Optional[Dict] = None) -> List[Dict[str, object]]:
    """Train/calibrate/evaluate each named variant across the config's seeds.

    Variants that only change the decision rule or the uncertainty estimator
    reuse the weights trained for the matching training configuration; the
    cache is keyed on (training hash, seed) so callers can share it across
    calls.
    """
    cfg.validate()
    space = variant_space()
    bad = [v for v in variants if v not in space]
    if bad:
        raise ValueError(f"unknown variants {bad}; valid names: {', '.join(sorted(space))}")
    if cache is None:
        cache = {}
    rows: List[Dict[str, object]] = []
    for name in variants:
        vcfg = apply_variant(cfg, name)
        for seed in cfg.seeds:
            model = _trained(vcfg, source, seed, cache)
            cal, estimator = calibrate(model, source, vcfg)
            report = evaluate(model, target, vcfg, cal.tau_star, estimator)
            rows.append(
                {
                    "variant": name,
                    "seed": seed,
                    "os": report.os_percent,
                    "unk": report.unk_percent,
                    "hos": report.hos_percent,
                    "tau": cal.tau_star,
                }
            )
    return rows


def ablation_table(rows: Sequence[Dict[str, object]]) -> str:
    lines = ["variant,seed,os_percent,unk_percent,hos_percent,tau"]
    for r in rows:
        lines.append(f"{r['variant']},{r['seed']},{_fmt(r['os'])},{_fmt(r['unk'])},{_fmt(r['hos'])},{_fmt(r['tau'])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# model persistence

_META_KEY = "__meta__"
_STATS_MEAN = "__stats_mean__"
_STATS_STD = "__stats_std__"
_RANGE_LO = "__range_lo__"
_RANGE_HI = "__range_hi__"


def save_model(model: TrainedModel, path) -> None:
    arrays = model.network.state_arrays()
    arrays[_META_KEY] = np.array([model.network.num_classes, model.network.bands, model.seed], dtype=np.int64)
    arrays[_STATS_MEAN] = model.stats.mean
    arrays[_STATS_STD] = model.stats.std
    arrays[_RANGE_LO] = model.band_range.lo
    arrays[_RANGE_HI] = model.band_range.hi
    write_npz(path, arrays)


def load_model(cfg: RunConfig, path) -> TrainedModel:
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    meta = arrays.pop(_META_KEY)
    stats = BandStats(mean=arrays.pop(_STATS_MEAN), std=arrays.pop(_STATS_STD))
    band_range = BandRange(lo=arrays.pop(_RANGE_LO), hi=arrays.pop(_RANGE_HI))
    num_classes, bands, seed = (int(v) for v in meta)
    network = OsdgNetwork(cfg.sifd, cfg.dcrn, num_classes=num_classes, bands=bands, seed=seed)
    network.load_state(arrays)
    return TrainedModel(network=network, stats=stats, band_range=band_range, history=None, seed=seed)


# ---------------------------------------------------------------------------
# run directory plumbing


def _set_phase(cube, phase: str) -> None:
    tracker = getattr(cube, "tracker", None)
    if tracker is not None:
        tracker.phase = phase


def _assert_untouched(cube) -> None:
    tracker = getattr(cube, "tracker", None)
    if tracker is not None and tracker.reads_outside() > 0:
        raise RuntimeError(f"target cube was read before evaluation: {tracker.reads}")


def write_manifest(run_dir, config_hash: str, artifacts: Dict[str, str]) -> str:
    manifest = {
        "config_hash": config_hash,
        "created": datetime.now(timezone.utc).isoformat(),
        "artifacts": {k: artifacts[k] for k in sorted(artifacts)},
    }
    path = os.path.join(run_dir, "manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _calibration_csv(result: CalibrationResult, temperature: Optional[float]) -> str:
    lines = ["metric,value"]
    lines.append(f"tau_star,{_fmt(result.tau_star)}")
    lines.append(f"achieved_tpr,{_fmt(result.achieved_tpr)}")
    lines.append(f"mean_synthetic_score,{_fmt(result.mean_synthetic_score)}")
    lines.append(f"mean_known_score,{_fmt(result.mean_known_score)}")
    if temperature is not None:
        lines.append(f"temperature,{_fmt(temperature)}")
    lines.append("tau,tpr,known_retention")
    for t, r, k in zip(result.taus, result.tprs, result.known_retention):
        lines.append(f"{_fmt(t)},{_fmt(r)},{_fmt(k)}")
    return "\n".join(lines) + "\n"


def read_calibration_summary(path) -> Dict[str, float]:
    out: Dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    for line in lines[1:]:
        if line.startswith("tau,"):
            break
        name, value = line.split(",", 1)
        out[name] = float(value)
    return out


@dataclass
class BenchmarkResult:
    model: TrainedModel
    calibration: CalibrationResult
    estimator: UncertaintyEstimator
    report: MetricsReport
    artifacts: Dict[str, str]


def run_benchmark(cfg: RunConfig, source, target, seed: int, out_dir=None) -> BenchmarkResult:
    """One full leg: train on source, calibrate on held-out source, evaluate
    on target, optionally writing every artifact plus a manifest.

    When the target is access-tracked the phases are labeled as they run and
    any pre-evaluation read raises.
    """
    _set_phase(target, "train")
    model = train(cfg, source, seed)
    _set_phase(target, "calibrate")
    cal, estimator = calibrate(model, source, cfg)
    _assert_untouched(target)
    _set_phase(target, "evaluate")
    artifacts: Dict[str, str] = {}
    map_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        map_path = os.path.join(out_dir, "classification_map.bmp")
    report = evaluate(model, target, cfg, cal.tau_star, estimator, map_path=map_path)
    if out_dir is not None:
        _set_phase(target, "report")
        artifacts["classification_map"] = "classification_map.bmp"
        config_path = os.path.join(out_dir, "config.json")
        with open(config_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(cfg.to_json())
        artifacts["config"] = "config.json"
        save_model(model, os.path.join(out_dir, "model.npz"))
        artifacts["model"] = "model.npz"
        with open(os.path.join(out_dir, "history.csv"), "w", encoding="utf-8", newline="\n") as f:
            f.write(model.history.to_csv())
        artifacts["history"] = "history.csv"
        temp = estimator.temperature if estimator.kind == "temp_scaling" else None
        with open(os.path.join(out_dir, "calibration.csv"), "w", encoding="utf-8", newline="\n") as f:
            f.write(_calibration_csv(cal, temp))
        artifacts["calibration"] = "calibration.csv"
        with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8", newline="\n") as f:
            f.write(report.to_csv())
        artifacts["metrics"] = "metrics.csv"
        table_paths = uncertainty_report(model, target, cfg, cal.tau_star, out_dir, estimator)
        for name, path in table_paths.items():
            artifacts[name] = os.path.basename(path)
        write_manifest(out_dir, cfg.config_hash(), artifacts)
        artifacts["manifest"] = "manifest.json"
    return BenchmarkResult(model=model, calibration=cal, estimator=estimator, report=report, artifacts=artifacts)
