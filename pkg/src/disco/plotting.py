"""Minimal SVG line and bar charts (loss curves, PCK-vs-alpha curves, ablation bars)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=64, right=150, top=36, bottom=48)


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.floor(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-9 * step:
        if v >= lo - 1e-9 * step:
            out.append(round(v, 12))
        v += step
    return out


def _frame(title, xlabel, ylabel):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{MARGIN["left"] + (WIDTH - MARGIN["left"] - MARGIN["right"]) / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" transform="rotate(-90 16 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]
    return parts


def line_chart(series, title="", xlabel="", ylabel="", logy=False):
    """series: {name: (xs, ys)}. Non-finite points are skipped."""
    pts = {}
    for name, (xs, ys) in series.items():
        keep = [(float(x), float(y)) for x, y in zip(xs, ys)
                if y is not None and math.isfinite(float(y)) and (not logy or float(y) > 0)]
        pts[name] = [(x, math.log10(y) if logy else y) for x, y in keep]
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    sx = lambda x: MARGIN["left"] + (x - x0) / (x1 - x0) * pw
    sy = lambda y: MARGIN["top"] + ph - (y - y0) / (y1 - y0) * ph
    parts = _frame(title, xlabel, ylabel + (" (log10)" if logy else ""))
    parts.append(f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for t in _ticks(x0, x1):
        parts.append(f'<text x="{sx(t):.1f}" y="{MARGIN["top"] + ph + 16}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        parts.append(f'<line x1="{MARGIN["left"]}" x2="{MARGIN["left"] + pw}" y1="{sy(t):.1f}" y2="{sy(t):.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{MARGIN["left"] - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
    for i, (name, p) in enumerate(pts.items()):
        color = PALETTE[i % len(PALETTE)]
        if p:
            path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in p)
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = MARGIN["top"] + 14 + 18 * i
        lx = WIDTH - MARGIN["right"] + 10
        parts.append(f'<line x1="{lx}" x2="{lx + 18}" y1="{ly - 4}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly}">{escape(str(name))}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def bar_chart(labels, values, title="", ylabel="", ymax=None):
    values = [float(v) for v in values]
    top = ymax if ymax is not None else max(values + [1e-12]) * 1.1
    pw = WIDTH - MARGIN["left"] - 40
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    parts = _frame(title, "", ylabel)
    n = max(len(values), 1)
    slot = pw / n
    for t in _ticks(0.0, top):
        y = MARGIN["top"] + ph - t / top * ph
        parts.append(f'<line x1="{MARGIN["left"]}" x2="{MARGIN["left"] + pw}" y1="{y:.1f}" y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{MARGIN["left"] - 6}" y="{y + 4:.1f}" text-anchor="end">{t:g}</text>')
    for i, (label, v) in enumerate(zip(labels, values)):
        h = max(v, 0.0) / top * ph
        x = MARGIN["left"] + i * slot + 0.15 * slot
        parts.append(f'<rect x="{x:.1f}" y="{MARGIN["top"] + ph - h:.1f}" width="{0.7 * slot:.1f}" height="{h:.1f}" fill="{PALETTE[i % len(PALETTE)]}"/>')
        parts.append(f'<text x="{x + 0.35 * slot:.1f}" y="{MARGIN["top"] + ph + 16}" text-anchor="middle">{escape(str(label))}</text>')
        parts.append(f'<text x="{x + 0.35 * slot:.1f}" y="{MARGIN["top"] + ph - h - 4:.1f}" text-anchor="middle">{v:.3g}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
