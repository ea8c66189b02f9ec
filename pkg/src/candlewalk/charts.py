"""Self-contained SVG line and bar charts for the report bundle.

Plain hand-built markup, no plotting dependency: the reports must open
anywhere and diff cleanly between runs. Coordinates are fixed-precision so
output is byte-stable. NaN points split a line into separate segments.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .timeutil import format_iso

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_MARGIN_LEFT = 64
_MARGIN_RIGHT = 16
_MARGIN_TOP = 34
_MARGIN_BOTTOM = 46


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round tick positions at a 1/2/5 step covering [lo, hi]."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / max(target, 1)
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 5, 10):
        step = mult * mag
        if raw <= step:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + step * 1e-9:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _tick_label(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:g}"


def _time_label(ts: float) -> str:
    return format_iso(int(ts))[:10]


class _Canvas:
    def __init__(self, width: int, height: int, title: str):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14">'
            f"{escape(title)}</text>",
        ]
        self.x0 = _MARGIN_LEFT
        self.x1 = width - _MARGIN_RIGHT
        self.y0 = height - _MARGIN_BOTTOM
        self.y1 = _MARGIN_TOP

    def add(self, fragment: str):
        self.parts.append(fragment)

    def finish(self) -> str:
        self.parts.append("</svg>")
        return "\n".join(self.parts) + "\n"


def _axes(canvas: _Canvas, x_lo, x_hi, y_lo, y_hi, time_axis: bool):
    sx = lambda x: canvas.x0 + (x - x_lo) / (x_hi - x_lo) * (canvas.x1 - canvas.x0)
    sy = lambda y: canvas.y0 - (y - y_lo) / (y_hi - y_lo) * (canvas.y0 - canvas.y1)
    canvas.add(
        f'<line x1="{canvas.x0}" y1="{canvas.y0}" x2="{canvas.x1}" y2="{canvas.y0}" '
        'stroke="#333" stroke-width="1"/>'
    )
    canvas.add(
        f'<line x1="{canvas.x0}" y1="{canvas.y0}" x2="{canvas.x0}" y2="{canvas.y1}" '
        'stroke="#333" stroke-width="1"/>'
    )
    for t in _nice_ticks(y_lo, y_hi):
        py = sy(t)
        canvas.add(
            f'<line x1="{canvas.x0 - 4}" y1="{_fmt(py)}" x2="{canvas.x1}" y2="{_fmt(py)}" '
            'stroke="#ddd" stroke-width="1"/>'
        )
        canvas.add(
            f'<text x="{canvas.x0 - 8}" y="{_fmt(py + 4)}" text-anchor="end" font-size="11">'
            f"{escape(_tick_label(t))}</text>"
        )
    xticks = _nice_ticks(x_lo, x_hi, target=6)
    if time_axis and len(xticks) > 6:
        xticks = xticks[:: max(1, len(xticks) // 6)]
    for t in xticks:
        px = sx(t)
        label = _time_label(t) if time_axis else _tick_label(t)
        canvas.add(
            f'<text x="{_fmt(px)}" y="{canvas.y0 + 18}" text-anchor="middle" font-size="11">'
            f"{escape(label)}</text>"
        )
    return sx, sy


def _legend(canvas: _Canvas, names):
    x = canvas.x0 + 10
    for i, name in enumerate(names):
        color = PALETTE[i % len(PALETTE)]
        y = canvas.y1 + 6 + 16 * i
        canvas.add(f'<rect x="{x}" y="{y}" width="12" height="12" fill="{color}"/>')
        canvas.add(
            f'<text x="{x + 18}" y="{y + 10}" font-size="11">{escape(str(name))}</text>'
        )


def line_chart(
    series: list[tuple[str, np.ndarray, np.ndarray]],
    title: str,
    width: int = 900,
    height: int = 420,
    time_axis: bool = True,
) -> str:
    """Multi-line chart; each entry is (name, x values, y values)."""
    if not series:
        raise ValueError("no series to plot")
    xs_all = np.concatenate([np.asarray(xs, dtype=np.float64) for _, xs, _ in series])
    ys_all = np.concatenate([np.asarray(ys, dtype=np.float64) for _, _, ys in series])
    finite = np.isfinite(ys_all)
    if not finite.any():
        raise ValueError("no finite points to plot")
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    y_lo, y_hi = float(ys_all[finite].min()), float(ys_all[finite].max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    canvas = _Canvas(width, height, title)
    sx, sy = _axes(canvas, x_lo, x_hi, y_lo, y_hi, time_axis)
    for i, (name, xs, ys) in enumerate(series):
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if len(xs) != len(ys):
            raise ValueError(f"series {name!r}: x and y lengths differ")
        color = PALETTE[i % len(PALETTE)]
        points: list[str] = []

        def flush():
            # a run of one finite point has no line to draw; mark it instead
            if len(points) > 1:
                canvas.add(
                    f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                    f'points="{" ".join(points)}"/>'
                )
            elif len(points) == 1:
                cx, cy = points[0].split(",")
                canvas.add(f'<circle cx="{cx}" cy="{cy}" r="2" fill="{color}"/>')
            points.clear()

        for x, y in zip(xs, ys):
            if not math.isfinite(y):
                flush()
                continue
            points.append(f"{_fmt(sx(x))},{_fmt(sy(y))}")
        flush()
    _legend(canvas, [name for name, _, _ in series])
    return canvas.finish()


def bar_chart(
    labels: list[str],
    groups: list[tuple[str, np.ndarray]],
    title: str,
    width: int = 900,
    height: int = 420,
) -> str:
    """Grouped vertical bars; each group is (name, one value per label)."""
    if not groups or not labels:
        raise ValueError("nothing to plot")
    values = np.stack([np.asarray(v, dtype=np.float64) for _, v in groups])
    if values.shape[1] != len(labels):
        raise ValueError("group length does not match label count")
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise ValueError("no finite bars to plot")
    y_lo = min(0.0, float(finite.min()))
    y_hi = max(0.0, float(finite.max()))
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo = y_lo - (pad if y_lo < 0 else 0.0)
    y_hi = y_hi + pad

    canvas = _Canvas(width, height, title)
    _, sy = _axes(canvas, 0.0, 1.0, y_lo, y_hi, time_axis=False)
    plot_w = canvas.x1 - canvas.x0
    slot = plot_w / len(labels)
    bar_w = slot * 0.8 / len(groups)
    zero_y = sy(0.0)
    for j, label in enumerate(labels):
        for i, (_, vals) in enumerate(groups):
            v = float(vals[j])
            if not math.isfinite(v):
                continue
            x = canvas.x0 + slot * j + slot * 0.1 + bar_w * i
            top = sy(max(v, 0.0))
            h = abs(sy(v) - zero_y)
            canvas.add(
                f'<rect x="{_fmt(x)}" y="{_fmt(top)}" width="{_fmt(bar_w)}" '
                f'height="{_fmt(h)}" fill="{PALETTE[i % len(PALETTE)]}"/>'
            )
        cx = canvas.x0 + slot * (j + 0.5)
        canvas.add(
            f'<text x="{_fmt(cx)}" y="{canvas.y0 + 18}" text-anchor="middle" font-size="10">'
            f"{escape(str(label))}</text>"
        )
    canvas.add(
        f'<line x1="{canvas.x0}" y1="{_fmt(zero_y)}" x2="{canvas.x1}" y2="{_fmt(zero_y)}" '
        'stroke="#333" stroke-width="1"/>'
    )
    _legend(canvas, [name for name, _ in groups])
    return canvas.finish()
