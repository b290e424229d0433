"""Small SVG writers for the report tables.

No plotting dependency: charts are assembled as plain SVG text. Grouped bar
charts cover the pathway-selection and per-class uncertainty tables; scatter
plots cover the evidence-strength and pathway-uncertainty relations.
"""

import csv
import os
from typing import Dict, List, Optional, Sequence

PALETTE = ("#4878a8", "#e49444", "#5ba053", "#c85c5c", "#8268b0", "#967662")

_MARGIN_L = 62
_MARGIN_R = 18
_MARGIN_T = 42
_MARGIN_B = 52


def _esc(text) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _num(v: float) -> str:
    return f"{v:.2f}"


def _axis_ticks(vmax: float, count: int = 5) -> List[float]:
    if vmax <= 0:
        vmax = 1.0
    return [vmax * i / (count - 1) for i in range(count)]


def _frame(width: int, height: int, title: str) -> List[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{_esc(title)}</text>',
    ]


def render_bar_chart(groups: Sequence[str], series: Dict[str, Sequence[float]], title: str,
                     ylabel: str, width: int = 640, height: int = 400) -> str:
    """Grouped vertical bars: one slot per group, one bar per series."""
    if not groups:
        raise ValueError("no groups to draw")
    if not series:
        raise ValueError("no series to draw")
    for name, values in series.items():
        if len(values) != len(groups):
            raise ValueError(f"series {name!r} has {len(values)} values for {len(groups)} groups")
        if any(v < 0 for v in values):
            raise ValueError(f"series {name!r} contains negative values")

    plot_w = width - _MARGIN_L - _MARGIN_R
    plot_h = height - _MARGIN_T - _MARGIN_B
    vmax = max(max(values) for values in series.values())
    vmax = vmax * 1.05 if vmax > 0 else 1.0
    names = list(series)

    parts = _frame(width, height, title)
    for tick in _axis_ticks(vmax):
        y = _MARGIN_T + plot_h * (1.0 - tick / vmax)
        parts.append(f'<line x1="{_MARGIN_L}" y1="{y:.1f}" x2="{width - _MARGIN_R}" y2="{y:.1f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{_MARGIN_L - 6}" y="{y + 4:.1f}" text-anchor="end">{_num(tick)}</text>')

    slot = plot_w / len(groups)
    bar_w = slot * 0.8 / len(names)
    for gi, group in enumerate(groups):
        x0 = _MARGIN_L + slot * gi + slot * 0.1
        for si, name in enumerate(names):
            v = series[name][gi]
            h = plot_h * v / vmax
            x = x0 + si * bar_w
            y = _MARGIN_T + plot_h - h
            color = PALETTE[si % len(PALETTE)]
            parts.append(
                f'<rect class="bar" x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{h:.1f}" fill="{color}"/>'
            )
        parts.append(
            f'<text x="{x0 + slot * 0.4:.1f}" y="{height - _MARGIN_B + 18}" text-anchor="middle">{_esc(group)}</text>'
        )

    parts.append(
        f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T + plot_h}" x2="{width - _MARGIN_R}" y2="{_MARGIN_T + plot_h}" stroke="black"/>'
    )
    parts.append(f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" y2="{_MARGIN_T + plot_h}" stroke="black"/>')
    parts.append(
        f'<text x="16" y="{_MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MARGIN_T + plot_h / 2:.1f})">{_esc(ylabel)}</text>'
    )
    for si, name in enumerate(names):
        lx = width - _MARGIN_R - 120
        ly = _MARGIN_T + 6 + si * 18
        parts.append(f'<rect x="{lx}" y="{ly}" width="12" height="12" fill="{PALETTE[si % len(PALETTE)]}"/>')
        parts.append(f'<text x="{lx + 16}" y="{ly + 10}">{_esc(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_scatter(x: Sequence[float], y: Sequence[float], title: str, xlabel: str, ylabel: str,
                   labels: Optional[Sequence[str]] = None, width: int = 640, height: int = 400) -> str:
    """Scatter of (x, y) points, optionally colored by a per-point category."""
    if len(x) != len(y):
        raise ValueError("x and y lengths differ")
    if len(x) == 0:
        raise ValueError("no points to draw")
    if labels is not None and len(labels) != len(x):
        raise ValueError("labels length differs from points")

    plot_w = width - _MARGIN_L - _MARGIN_R
    plot_h = height - _MARGIN_T - _MARGIN_B
    x_lo, x_hi = min(x), max(x)
    y_lo, y_hi = min(y), max(y)
    x_pad = (x_hi - x_lo) * 0.05 or 0.5
    y_pad = (y_hi - y_lo) * 0.05 or 0.5
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def sx(v: float) -> float:
        return _MARGIN_L + plot_w * (v - x_lo) / (x_hi - x_lo)

    def sy(v: float) -> float:
        return _MARGIN_T + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo))

    categories = sorted(set(labels)) if labels is not None else []
    color_of = {c: PALETTE[i % len(PALETTE)] for i, c in enumerate(categories)}

    parts = _frame(width, height, title)
    for i in range(5):
        xv = x_lo + (x_hi - x_lo) * i / 4
        yv = y_lo + (y_hi - y_lo) * i / 4
        parts.append(f'<text x="{sx(xv):.1f}" y="{height - _MARGIN_B + 18}" text-anchor="middle">{_num(xv)}</text>')
        parts.append(f'<text x="{_MARGIN_L - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{_num(yv)}</text>')
    parts.append(
        f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T + plot_h}" x2="{width - _MARGIN_R}" y2="{_MARGIN_T + plot_h}" stroke="black"/>'
    )
    parts.append(f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" x2="{_MARGIN_L}" y2="{_MARGIN_T + plot_h}" stroke="black"/>')

    for i in range(len(x)):
        color = color_of[labels[i]] if labels is not None else PALETTE[0]
        parts.append(f'<circle class="pt" cx="{sx(x[i]):.1f}" cy="{sy(y[i]):.1f}" r="3" fill="{color}" fill-opacity="0.6"/>')

    parts.append(
        f'<text x="{_MARGIN_L + plot_w / 2:.1f}" y="{height - 12}" text-anchor="middle">{_esc(xlabel)}</text>'
    )
    parts.append(
        f'<text x="16" y="{_MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MARGIN_T + plot_h / 2:.1f})">{_esc(ylabel)}</text>'
    )
    for i, cat in enumerate(categories):
        lx = width - _MARGIN_R - 120
        ly = _MARGIN_T + 6 + i * 18
        parts.append(f'<circle cx="{lx + 6}" cy="{ly + 6}" r="5" fill="{color_of[cat]}"/>')
        parts.append(f'<text x="{lx + 16}" y="{ly + 10}">{_esc(cat)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


# ---------------------------------------------------------------------------
# table-driven wrappers for the five report CSVs


def _read_rows(csv_path) -> List[Dict[str, str]]:
    with open(csv_path, "r", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def plot_branch_frequency(csv_path, out_path) -> None:
    rows = _read_rows(csv_path)
    branches = []
    series: Dict[str, List[float]] = {}
    for row in rows:
        if row["branch"] not in branches:
            branches.append(row["branch"])
    for row in rows:
        series.setdefault(row["group"], [0.0] * len(branches))
        series[row["group"]][branches.index(row["branch"])] = float(row["frequency"])
    write_svg(out_path, render_bar_chart(branches, series, "Pathway selection frequency", "frequency"))


def plot_class_uncertainty(csv_path, out_path) -> None:
    rows = _read_rows(csv_path)
    classes = [row["class"] for row in rows]
    means = {"mean uncertainty": [float(row["mean_uncertainty"]) for row in rows]}
    write_svg(out_path, render_bar_chart(classes, means, "Uncertainty by true class", "uncertainty"))


def plot_evidence_uncertainty(csv_path, out_path) -> None:
    rows = _read_rows(csv_path)
    s = [float(row["strength"]) for row in rows]
    u = [float(row["uncertainty"]) for row in rows]
    write_svg(out_path, render_scatter(s, u, "Evidence strength vs uncertainty", "total strength", "uncertainty"))


def plot_pathway_uncertainty(csv_path, out_path) -> None:
    rows = _read_rows(csv_path)
    us = [float(row["u_spec"]) for row in rows]
    up = [float(row["u_spat"]) for row in rows]
    branch = [row["branch"] for row in rows]
    write_svg(out_path, render_scatter(us, up, "Pathway uncertainties", "spectral uncertainty",
                                       "spatial uncertainty", labels=branch))


def render_report_plots(table_paths: Dict[str, str], out_dir) -> Dict[str, str]:
    """SVG companion for each plottable report table; returns name -> path."""
    os.makedirs(out_dir, exist_ok=True)
    jobs = (
        ("branch_frequency", plot_branch_frequency),
        ("class_uncertainty", plot_class_uncertainty),
        ("evidence_uncertainty", plot_evidence_uncertainty),
        ("pathway_uncertainty", plot_pathway_uncertainty),
    )
    out: Dict[str, str] = {}
    for name, fn in jobs:
        svg_path = os.path.join(out_dir, f"{name}.svg")
        fn(table_paths[name], svg_path)
        out[f"{name}_plot"] = svg_path
    return out
