"""Open-set evaluation: confusion counts, scores, report files, label maps.

Known-class accuracy is the macro mean of per-class accuracies; the unknown
rate is the fraction of true unknowns rejected. Their harmonic mean is the
headline number. Reports serialize to CSV with repr-formatted floats so
reruns are byte-identical.
"""

import colorsys
import struct
import warnings
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from .dataio import BACKGROUND_LABEL, UNKNOWN_LABEL, HSICube, extract_patch_batch, labeled_coords


def _check_domain(values: np.ndarray, num_classes: int, what: str, allow_background: bool) -> None:
    ok = (values >= 1) & (values <= num_classes)
    ok |= values == UNKNOWN_LABEL
    if allow_background:
        ok |= values == BACKGROUND_LABEL
    if not ok.all():
        bad = values[~ok][0]
        raise ValueError(f"{what} contains label {bad} outside 1..{num_classes} / unknown")


def confusion(predictions, labels, num_classes: int) -> np.ndarray:
    """(K+1)x(K+1) counts, true classes in rows, last row/col unknown.

    Background (0) labels are excluded before counting.
    """
    pred = np.asarray(predictions).astype(np.int64).reshape(-1)
    lab = np.asarray(labels).astype(np.int64).reshape(-1)
    if pred.shape != lab.shape:
        raise ValueError("predictions and labels differ in length")
    _check_domain(lab, num_classes, "labels", allow_background=True)
    keep = lab != BACKGROUND_LABEL
    pred, lab = pred[keep], lab[keep]
    _check_domain(pred, num_classes, "predictions", allow_background=False)
    k = num_classes
    rows = np.where(lab == UNKNOWN_LABEL, k, lab - 1)
    cols = np.where(pred == UNKNOWN_LABEL, k, pred - 1)
    mat = np.zeros((k + 1, k + 1), dtype=np.int64)
    np.add.at(mat, (rows, cols), 1)
    return mat


def per_class_accuracy(conf: np.ndarray) -> np.ndarray:
    """Percent accuracy per known class (rows before the unknown row)."""
    known = conf[:-1]
    totals = known.sum(axis=1)
    if np.any(totals == 0):
        raise ValueError("every known class needs at least one sample")
    return 100.0 * np.diag(conf)[:-1] / totals


def os_score(conf: np.ndarray) -> float:
    """Macro mean of per-class known accuracies, in percent."""
    return float(per_class_accuracy(conf).mean())


def unk_rate(conf: np.ndarray) -> float:
    row = conf[-1]
    total = row.sum()
    if total == 0:
        raise ValueError("no unknown-labeled samples to score")
    return float(100.0 * row[-1] / total)


def hos(os_percent: float, unk_percent: float) -> float:
    for name, v in (("OS", os_percent), ("Unk", unk_percent)):
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"{name} must lie in [0, 100]")
    if os_percent == 0.0 and unk_percent == 0.0:
        warnings.warn("OS and Unk both zero; HOS defined as 0", RuntimeWarning)
        return 0.0
    return 2.0 * os_percent * unk_percent / (os_percent + unk_percent)


@dataclass
class MetricsReport:
    conf: np.ndarray
    class_accuracy: np.ndarray
    os_percent: float
    unk_percent: float
    hos_percent: float
    tau: float

    @property
    def num_classes(self) -> int:
        return self.conf.shape[0] - 1

    def validate(self) -> None:
        k = self.num_classes
        if self.conf.shape != (k + 1, k + 1):
            raise ValueError("confusion matrix must be square with an unknown row")
        for name, v in (("OS", self.os_percent), ("Unk", self.unk_percent), ("HOS", self.hos_percent)):
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} out of [0, 100]")

    def to_csv(self) -> str:
        k = self.num_classes
        lines = ["metric,value"]
        for name, v in (
            ("os_percent", self.os_percent),
            ("unk_percent", self.unk_percent),
            ("hos_percent", self.hos_percent),
            ("tau", self.tau),
        ):
            lines.append(f"{name},{v!r}")
        lines.append("class,accuracy_percent")
        for i, acc in enumerate(self.class_accuracy, start=1):
            lines.append(f"{i},{float(acc)!r}")
        header = ",".join(["true\\pred"] + [str(i) for i in range(1, k + 1)] + ["unknown"])
        lines.append(header)
        row_names = [str(i) for i in range(1, k + 1)] + ["unknown"]
        for name, row in zip(row_names, self.conf):
            lines.append(",".join([name] + [str(int(c)) for c in row]))
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        lines = [
            f"OS  {self.os_percent:7.2f} %",
            f"Unk {self.unk_percent:7.2f} %",
            f"HOS {self.hos_percent:7.2f} %",
            f"tau {self.tau:9.4f}",
            "per-class accuracy (%): " + "  ".join(f"{a:.1f}" for a in self.class_accuracy),
        ]
        return "\n".join(lines)


def report_from_predictions(predictions, labels, num_classes: int, tau: float) -> MetricsReport:
    conf = confusion(predictions, labels, num_classes)
    acc = per_class_accuracy(conf)
    os_p = float(acc.mean())
    unk_p = unk_rate(conf)
    report = MetricsReport(
        conf=conf,
        class_accuracy=acc,
        os_percent=os_p,
        unk_percent=unk_p,
        hos_percent=hos(os_p, unk_p),
        tau=tau,
    )
    report.validate()
    return report


def class_palette(num_classes: int) -> List[tuple]:
    """Fixed colors: black background, saturated hue wheel, white unknown."""
    colors = [(0, 0, 0)]
    for k in range(num_classes):
        r, g, b = colorsys.hsv_to_rgb(k / num_classes, 0.75, 0.95)
        colors.append((int(255 * r), int(255 * g), int(255 * b)))
    colors.append((255, 255, 255))
    return colors


def map_to_rgb(grid: np.ndarray, num_classes: int) -> np.ndarray:
    palette = class_palette(num_classes)
    rgb = np.zeros(grid.shape + (3,), dtype=np.uint8)
    rgb[grid == BACKGROUND_LABEL] = palette[0]
    for k in range(1, num_classes + 1):
        rgb[grid == k] = palette[k]
    rgb[grid == UNKNOWN_LABEL] = palette[-1]
    return rgb


def write_bmp(path, rgb: np.ndarray) -> None:
    """Uncompressed 24-bit bottom-up BMP."""
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("expected a (H, W, 3) uint8 image")
    h, w = rgb.shape[:2]
    row_bytes = w * 3
    pad = (4 - row_bytes % 4) % 4
    image_size = (row_bytes + pad) * h
    header = struct.pack("<2sIHHI", b"BM", 54 + image_size, 0, 0, 54)
    info = struct.pack("<IiiHHIIiiII", 40, w, h, 1, 24, 0, image_size, 2835, 2835, 0, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(info)
        padding = b"\x00" * pad
        for y in range(h - 1, -1, -1):
            fh.write(rgb[y, :, ::-1].tobytes())
            fh.write(padding)


def classification_map(predict_fn: Callable[[np.ndarray], np.ndarray], cube: HSICube,
                       path=None) -> np.ndarray:
    """Predict every labeled pixel; background stays 0.

    predict_fn maps a (N, 7, 7, C) window batch to (N,) labels in
    {1..K, unknown}. When a path is given an indexed-color bitmap is written.
    """
    coords, _ = labeled_coords(cube, include_unknown=True)
    grid = np.zeros(cube.labels.shape, dtype=np.int64)
    if coords.shape[0]:
        windows = extract_patch_batch(cube.data, coords)
        preds = np.asarray(predict_fn(windows)).astype(np.int64)
        _check_domain(preds, cube.num_classes, "predictions", allow_background=False)
        grid[coords[:, 0], coords[:, 1]] = preds
    if path is not None:
        write_bmp(path, map_to_rgb(grid, cube.num_classes))
    return grid
