"""Model assembly: frequency branch, dual pathways, heads, and classifier.

One object owns all trainable parameters and exposes the two faces the
pipeline needs: differentiable loss terms for training and plain-numpy
decision inputs for calibration and evaluation.
"""

import io
import zipfile
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from numpy.lib import format as np_format

from . import numerics as nx
from .dcrn import DcrnConfig, DcrnModel
from .edl import EvidenceHead, UncertaintyEstimator, alt_uncertainty, edl_loss
from .layers import Linear
from .sifd import SifdConfig, SifdModel, transform_spectra

CLASSIFIER_HIDDEN = 64


@dataclass
class TrainBatch:
    """Everything one optimization step consumes.

    windows: (N, 7, 7, C) standardized patches
    spectra: (N, C) center-pixel spectra (standardized)
    spectra_unit: (N, C) reconstruction targets in [0, 1]
    aug_spectra: (N, C) noise-augmented view for the domain loss
    labels: (N,) 1-based class ids
    """

    windows: np.ndarray
    spectra: np.ndarray
    spectra_unit: np.ndarray
    aug_spectra: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


def _np_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def write_npz(path, arrays: Dict[str, np.ndarray]) -> None:
    """np.load-compatible archive with frozen zip metadata.

    np.savez stamps each entry with the current time, which breaks
    byte-identical reruns; here every entry gets a fixed timestamp.
    """
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for key in sorted(arrays):
            buf = io.BytesIO()
            np_format.write_array(buf, np.ascontiguousarray(arrays[key]), allow_pickle=False)
            info = zipfile.ZipInfo(key + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


class OsdgNetwork:
    def __init__(self, sifd_cfg: SifdConfig, dcrn_cfg: DcrnConfig, num_classes: int, bands: int,
                 seed: int = 0, dtype=np.float32):
        if num_classes < 2:
            raise ValueError("need at least two known classes")
        sifd_cfg.validate()
        dcrn_cfg.validate()
        self.num_classes = num_classes
        self.bands = bands
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0E7]))
        # build order is part of the determinism contract
        self.sifd = SifdModel(sifd_cfg, bands=bands, rng=rng, dtype=dtype)
        self.dcrn = DcrnModel(dcrn_cfg, bands=bands, rng=rng, dtype=dtype)
        d = dcrn_cfg.dim
        # one pathway means one head: the collapsed mode never builds the
        # per-pathway heads, so its decoupling rule sees identical inputs
        self.dual = dcrn_cfg.mode == "dual"
        self.head_spec = EvidenceHead(d, num_classes, rng, dtype=dtype) if self.dual else None
        self.head_spat = EvidenceHead(d, num_classes, rng, dtype=dtype) if self.dual else None
        self.head_comb = EvidenceHead(d, num_classes, rng, dtype=dtype)
        self.cls1 = Linear(d, CLASSIFIER_HIDDEN, rng, dtype=dtype)
        self.cls2 = Linear(CLASSIFIER_HIDDEN, num_classes, rng, gain=1.0, dtype=dtype)

    # ----- shared forward pieces -------------------------------------------------

    def _freq_and_enhanced(self, windows: np.ndarray, spectra: np.ndarray) -> Tuple[nx.Tensor, nx.Tensor]:
        feats = self.sifd.transform(spectra)
        f_freq, _gate = self.sifd.encode(feats)
        patches = np.ascontiguousarray(windows.transpose(0, 3, 1, 2)).astype(self.dtype, copy=False)
        enhanced = self.sifd.enhance(patches, f_freq)
        return f_freq, enhanced

    def _logits(self, f_comb: nx.Tensor) -> nx.Tensor:
        return self.cls2(nx.relu(self.cls1(f_comb)))

    # ----- training face ---------------------------------------------------------

    def training_terms(self, batch: TrainBatch, lam_reg: float) -> Dict[str, nx.Tensor]:
        """Raw loss terms as tensors; weighting happens in the caller."""
        if len(batch) == 0:
            raise ValueError("empty batch")
        f_freq, enhanced = self._freq_and_enhanced(batch.windows, batch.spectra)
        f_spec, f_spat, f_comb = self.dcrn.forward(enhanced)

        log_p = nx.log_softmax(self._logits(f_comb))
        hot = np.zeros((len(batch), self.num_classes), dtype=log_p.data.dtype)
        hot[np.arange(len(batch)), np.asarray(batch.labels, dtype=np.int64) - 1] = 1.0
        cls = nx.mul(nx.reduce_mean(nx.reduce_sum(nx.mul(log_p, hot), axis=1)), -1.0)

        heads = [(self.head_comb, f_comb)]
        if self.dual:
            heads = [(self.head_spec, f_spec), (self.head_spat, f_spat)] + heads
        edl_total = None
        for head, f in heads:
            alpha = nx.add(head(f), 1.0)
            term = edl_loss(alpha, batch.labels, lam_reg)
            edl_total = term if edl_total is None else nx.add(edl_total, term)

        feats_aug = self.sifd.transform(batch.aug_spectra)
        f_freq_aug, _ = self.sifd.encode(feats_aug)
        domain = self.sifd.domain_adversarial_loss(f_freq, f_freq_aug)

        recon = self.sifd.recon_loss(f_freq, batch.spectra_unit)
        return {"cls": cls, "edl": edl_total, "domain": domain, "recon": recon}

    # ----- decision face ---------------------------------------------------------

    def decision_inputs(self, windows: np.ndarray,
                        estimator: UncertaintyEstimator = UncertaintyEstimator()) -> Dict[str, np.ndarray]:
        """Per-sample uncertainties and closed-set probabilities, no tape.

        With the evidential estimator each pathway head supplies its own
        uncertainty. The alternative estimators produce one score from the
        classifier output, which then stands in for all three pathways (the
        decoupling rule degenerates accordingly).
        """
        estimator.validate()
        spectra = np.ascontiguousarray(windows[:, windows.shape[1] // 2, windows.shape[2] // 2, :])
        f_freq, enhanced = self._freq_and_enhanced(windows, spectra)
        f_spec, f_spat, f_comb = self.dcrn.forward(enhanced)
        logits = self._logits(f_comb).data.astype(np.float64)
        p_cls = _np_softmax(logits)
        dir_comb = self.head_comb.dirichlet(f_comb)
        out = {
            "p_cls": p_cls,
            "logits": logits,
            "evidence": dir_comb.evidence,
            "strength": dir_comb.strength,
        }
        if estimator.kind == "edl":
            u_comb = dir_comb.uncertainty
            out["u_comb"] = u_comb
            if self.dual:
                out["u_spec"] = self.head_spec.dirichlet(f_spec).uncertainty
                out["u_spat"] = self.head_spat.dirichlet(f_spat).uncertainty
            else:
                out["u_spec"] = u_comb.copy()
                out["u_spat"] = u_comb.copy()
        else:
            if estimator.kind == "temp_scaling":
                u = alt_uncertainty("temp_scaling", logits=logits, temperature=estimator.temperature)
            else:
                u = alt_uncertainty(estimator.kind, probs=p_cls)
            u = np.asarray(u, dtype=np.float64)
            out["u_spec"] = u
            out["u_spat"] = u.copy()
            out["u_comb"] = u.copy()
        return out

    # ----- parameter plumbing ----------------------------------------------------

    def params(self) -> List[nx.Tensor]:
        out = self.sifd.params() + self.dcrn.params()
        if self.dual:
            out += self.head_spec.params() + self.head_spat.params()
        out += self.head_comb.params()
        out += self.cls1.params() + self.cls2.params()
        return out

    def evidence_params(self) -> List[nx.Tensor]:
        """The head parameters that should train slower than the trunk.

        Rectified evidence has an absorbing zero state: once a head drives
        a class's pre-activation negative on that class's own samples the
        gradient vanishes and the class can never earn evidence again. The
        off-class penalty pushes exactly that way from the first batch,
        while the features that would justify positive evidence only firm
        up over many epochs, so the heads must lag the trunk."""
        out: List[nx.Tensor] = []
        if self.dual:
            out += self.head_spec.params() + self.head_spat.params()
        out += self.head_comb.params()
        return out

    def revive_dead_evidence(self, windows: np.ndarray, labels: np.ndarray, margin: float = 0.1) -> int:
        """Repoint evidence columns that stopped firing on their own class.

        The rectifier gives a column no gradient from samples it scores
        negative, so a column pushed below zero across a whole class is
        frozen out for good even after the trunk makes the class easy.
        Such a column is aimed back at the class's current mean feature
        with a unit response at the mean, which puts it back on the
        training signal without granting it more evidence than it can
        defend. Returns the number of columns repointed.
        """
        spectra = np.ascontiguousarray(windows[:, windows.shape[1] // 2, windows.shape[2] // 2, :])
        _f_freq, enhanced = self._freq_and_enhanced(windows, spectra)
        f_spec, f_spat, f_comb = self.dcrn.forward(enhanced)
        y = np.asarray(labels, dtype=np.int64)
        heads = [(self.head_comb, f_comb)]
        if self.dual:
            heads = [(self.head_spec, f_spec), (self.head_spat, f_spat)] + heads
        revived = 0
        for head, f in heads:
            feat = f.data.astype(np.float64)
            w, b = head.linear.w, head.linear.b
            pre = feat @ w.data + b.data
            for c in range(1, self.num_classes + 1):
                rows = y == c
                if not rows.any() or float(pre[rows, c - 1].max()) > margin:
                    continue
                mu = feat[rows].mean(axis=0)
                denom = float(mu @ mu)
                if denom <= 0.0:
                    continue
                w.data[:, c - 1] = (mu / denom).astype(w.data.dtype)
                b.data[c - 1] = 0.0
                revived += 1
        return revived

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {f"p{i:03d}": p.data.copy() for i, p in enumerate(self.params())}

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        params = self.params()
        if len(arrays) != len(params):
            raise ValueError(f"state has {len(arrays)} arrays, model needs {len(params)}")
        for i, p in enumerate(params):
            key = f"p{i:03d}"
            if key not in arrays:
                raise ValueError(f"missing parameter {key}")
            a = np.asarray(arrays[key])
            if a.shape != p.data.shape:
                raise ValueError(f"{key} shape {a.shape} does not match {p.data.shape}")
            p.data[...] = a.astype(p.data.dtype)

    def save(self, path) -> None:
        write_npz(path, self.state_arrays())

    def load(self, path) -> None:
        with np.load(path, allow_pickle=False) as data:
            self.load_state({k: data[k] for k in data.files})
