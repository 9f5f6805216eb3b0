"""Deterministic SVG line charts of metric traces."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .experiments import LOG_FLOOR
from .model import ConfigurationError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")
LABELS = {
    "exact_ll": "exact log likelihood",
    "bias": "log mean |p - p_true|",
    "param_diff": "log mean |W - W_exact|",
}
WIDTH, HEIGHT = 720, 440
LEFT, RIGHT, TOP, BOTTOM = 80, 190, 30, 60


def series_from_rows(rows, metric: str) -> dict:
    """``{method: [(iteration, value), ...]}`` in first-appearance order.

    Floor-sentinel and non-finite values are dropped so log-scale metrics at
    exact agreement do not flatten the chart.
    """
    if not rows:
        raise ConfigurationError("no trace rows to plot")
    for col in ("iteration", "method", metric):
        if col not in rows[0]:
            raise ConfigurationError(f"results are missing column {col!r}")
    out: dict = {}
    for r in rows:
        pts = out.setdefault(r["method"], [])
        try:
            x, y = float(r["iteration"]), float(r[metric])
        except (TypeError, ValueError):
            raise ConfigurationError(f"non-numeric value in column {metric!r}") from None
        if math.isfinite(y) and y > LOG_FLOOR:
            pts.append((x, y))
    return {m: p for m, p in out.items() if p}


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(series: dict, metric: str, title: str = "") -> str:
    if not series:
        raise ConfigurationError(f"no plottable values for {metric!r}")
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = max(abs(y0) * 0.05, 0.5)
        y0, y1 = y0 - pad, y1 + pad
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{LEFT + pw / 2:.2f}" y="18" text-anchor="middle">'
                   f'{escape(title)}</text>')
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" '
               'stroke="black"/>')
    for t in _ticks(x0, x1):
        px = sx(t)
        out.append(f'<line x1="{_fmt(px)}" y1="{TOP + ph}" x2="{_fmt(px)}" y2="{TOP + ph + 5}" '
                   'stroke="black"/>')
        out.append(f'<text x="{_fmt(px)}" y="{TOP + ph + 18}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        py = sy(t)
        out.append(f'<line x1="{LEFT - 5}" y1="{_fmt(py)}" x2="{LEFT}" y2="{_fmt(py)}" '
                   'stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{_fmt(py + 4)}" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle">'
               'iteration</text>')
    ylab = escape(LABELS.get(metric, metric))
    out.append(f'<text x="18" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2:.2f})">{ylab}</text>')
    for i, (method, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{coords}"><title>{escape(method)}</title></polyline>')
        ly = TOP + 10 + 18 * i
        lx = LEFT + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" '
                   'stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(method)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
