"""Static SVG line plots of sweep tables.

Output is plain text assembled in a fixed order with fixed number formatting,
so equal tables give byte-identical files. Each series is one ``<polyline>``;
axes and ticks use ``<line>`` elements only.
"""
import csv
import math
import os
from xml.sax.saxutils import escape

from ..errors import PlotError

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=190, top=30, bottom=55)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")

# kind -> (x column, y column, series key columns, x label, y label)
KINDS = {
    "nmse_vs_snr": ("snr_db", "nmse_db", ("estimator", "d", "alpha"), "SNR (dB)", "NMSE (dB)"),
    "nmse_vs_alpha": ("alpha", "nmse_db", ("estimator", "d", "snr_db"), "pilot density alpha", "NMSE (dB)"),
    "se_vs_snr": ("snr_db", "spectral_efficiency", ("estimator", "d", "alpha"), "SNR (dB)",
                  "spectral efficiency (bps/Hz)"),
    "timing": ("alpha", "time_per_iteration_ms", ("estimator", "d", "snr_db"), "pilot density alpha",
               "time per iteration (ms)"),
}


def _num(v):
    return f"{v:.2f}"


def _label(key_cols, key):
    parts = []
    for col, val in zip(key_cols, key):
        if col == "estimator":
            parts.append(str(val))
        elif col == "d":
            if val:
                parts.append(f"d={val}")
        elif col == "alpha":
            parts.append(f"a={val:g}")
        else:
            parts.append(f"{val:g} dB")
    return " ".join(parts)


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _range(values):
    lo, hi = min(values), max(values)
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def collect_series(table, kind, y=None):
    """``{series key: [(x, y), ...]}`` sorted by key and x, skipping NaN points.

    Parameters
    ----------
    table : ResultTable
    kind : str
        One of ``KINDS``.
    y : str, optional
        Override the y column, e.g. ``"scaled_nmse_db"`` for one-bit sweeps.
    """
    if kind not in KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; choose from {sorted(KINDS)}")
    x_col, y_col, key_cols, _, _ = KINDS[kind]
    y_col = y or y_col
    if not table.rows:
        raise PlotError(f"table has no rows for column {y_col!r}")
    for col in (x_col, y_col) + key_cols:
        if not hasattr(table.rows[0], col):
            raise PlotError(f"table has no column {col!r}")
    series = {}
    for row in table.rows:
        xv, yv = float(getattr(row, x_col)), float(getattr(row, y_col))
        if math.isnan(xv) or math.isnan(yv):
            continue
        key = tuple(getattr(row, c) for c in key_cols)
        series.setdefault(key, []).append((xv, yv))
    if not series:
        raise PlotError(f"column {y_col!r} has no finite values")
    return {k: sorted(v) for k, v in sorted(series.items())}


def render_svg(series, key_cols, x_label, y_label, title=""):
    """SVG text for ``{key: [(x, y), ...]}``."""
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    x_lo, x_hi = _range(xs)
    y_lo, y_hi = _range(ys)
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return left + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        return top + ph - (v - y_lo) / (y_hi - y_lo) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>')
    bottom = top + ph
    out.append(f'<line x1="{left}" y1="{bottom}" x2="{left + pw}" y2="{bottom}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>')
    for t in _ticks(x_lo, x_hi):
        x = sx(t)
        out.append(f'<line x1="{_num(x)}" y1="{bottom}" x2="{_num(x)}" y2="{bottom + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(x)}" y="{bottom + 18}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y_lo, y_hi):
        y = sy(t)
        out.append(f'<line x1="{left - 5}" y1="{_num(y)}" x2="{left}" y2="{_num(y)}" stroke="black"/>')
        out.append(f'<line x1="{left}" y1="{_num(y)}" x2="{left + pw}" y2="{_num(y)}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 8}" y="{_num(y + 4)}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2:.1f})">{escape(y_label)}</text>')
    for i, (key, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{_num(sx(x))}" cy="{_num(sy(y))}" r="2.5" fill="{color}"/>')
        ly = top + 12 + 16 * i
        lx = left + pw + 15
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(_label(key_cols, key))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plots(table, kind, out_dir, y=None, title=""):
    """Write ``<kind>.svg`` and the plotted points as ``<kind>.csv``.

    Parameters
    ----------
    table : ResultTable
    kind : {"nmse_vs_alpha", "nmse_vs_snr", "se_vs_snr", "timing"}
    out_dir : str
    y : str, optional
        Alternative y column.
    title : str

    Returns
    -------
    tuple of str
        Paths of the SVG and CSV files.

    Raises
    ------
    PlotError
        If the kind is unknown or the needed column holds no data.
    """
    series = collect_series(table, kind, y)
    x_col, y_col, key_cols, x_label, y_label = KINDS[kind]
    y_col = y or y_col
    if y:
        y_label = y
    os.makedirs(out_dir, exist_ok=True)
    svg_path = os.path.join(out_dir, f"{kind}.svg")
    csv_path = os.path.join(out_dir, f"{kind}.csv")
    with open(svg_path, "w", newline="\n") as fh:
        fh.write(render_svg(series, key_cols, x_label, y_label, title))
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(key_cols + (x_col, y_col))
        for key, pts in series.items():
            for xv, yv in pts:
                w.writerow([str(k) for k in key] + [f"{xv:.6f}", f"{yv:.6f}"])
    return svg_path, csv_path
