"""Dependency-free SVG line charts of metric CSVs.

Output is a pure function of the inputs: fixed number formatting, series
in argument order, no timestamps or random ids.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 70, "right": 150, "top": 30, "bottom": 50}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def read_series(path: str | Path, metric: str, x_col: str = "slot") -> list[tuple[float, float]]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if not cols:
            raise ValueError(f"{path}: empty CSV")
        for c in (x_col, metric):
            if c not in cols:
                raise ValueError(f"{path}: missing column {c!r} (have {', '.join(cols)})")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty CSV (header only)")
    pts = []
    for row in rows:
        try:
            x, y = float(row[x_col]), float(row[metric])
        except ValueError:
            continue
        if math.isfinite(x) and math.isfinite(y):
            pts.append((x, y))
    return pts


def nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    """Round tick values covering [lo, hi]."""
    if hi <= lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / max(1, count)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + step * 1e-9:
        ticks.append(round(v, 12))
        v += step
    if ticks[-1] < hi:
        ticks.append(round(v, 12))
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:.6g}"


def render_chart(csv_paths: Sequence[str | Path], metric: str, out: str | Path, x_col: str = "slot") -> Path:
    """Write one SVG with a polyline per CSV (legend = file stem)."""
    if not csv_paths:
        raise ValueError("no input CSVs")
    series = [(Path(p).stem, read_series(p, metric, x_col)) for p in csv_paths]
    xs = [x for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts]
    if not xs:
        raise ValueError(f"no finite values for {metric!r} in any input")
    xt = nice_ticks(min(xs), max(xs))
    yt = nice_ticks(min(ys), max(ys))
    x0, x1, y0, y1 = xt[0], xt[-1], yt[0], yt[-1]
    pl, pr, pt, pb = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def sx(x: float) -> float:
        return pl + (x - x0) / (x1 - x0) * (pr - pl)

    def sy(y: float) -> float:
        return pb - (y - y0) / (y1 - y0) * (pb - pt)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{pl}" y1="{pb}" x2="{pr}" y2="{pb}" stroke="black"/>',
        f'<line x1="{pl}" y1="{pt}" x2="{pl}" y2="{pb}" stroke="black"/>',
    ]
    for v in xt:
        x = _fmt(sx(v))
        parts.append(f'<line x1="{x}" y1="{pb}" x2="{x}" y2="{pb + 5}" stroke="black"/>')
        parts.append(f'<text x="{x}" y="{pb + 18}" text-anchor="middle">{_label(v)}</text>')
    for v in yt:
        y = _fmt(sy(v))
        parts.append(f'<line x1="{pl - 5}" y1="{y}" x2="{pl}" y2="{y}" stroke="black"/>')
        parts.append(f'<text x="{pl - 8}" y="{y}" text-anchor="end" dominant-baseline="middle">{_label(v)}</text>')
    parts.append(f'<text x="{(pl + pr) / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_col)}</text>')
    parts.append(
        f'<text x="16" y="{(pt + pb) / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(pt + pb) / 2:.2f})">{escape(metric)}</text>'
    )
    for i, (name, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        if len(pts) == 1:
            cx, cy = coords.split(",")
            parts.append(f'<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>')
        elif pts:
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = pt + 14 * i + 6
        parts.append(f'<line x1="{pr + 10}" y1="{ly}" x2="{pr + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{pr + 35}" y="{ly}" dominant-baseline="middle">{escape(name)}</text>')
    parts.append("</svg>")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(parts) + "\n")
    return out
