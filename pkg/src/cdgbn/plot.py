"""Static SVG charts of ARMSE against sampling period.

The output is plain text built from fixed-precision numbers, so the same
rows always give byte-identical files.
"""

from __future__ import annotations

import math
from html import escape

from .bench import ALL_FILTERS

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 72, 150, 36, 52
COLORS = {
    "CD_EKF": "#1f77b4",
    "CD_UKF": "#d62728",
    "CD_CKF": "#2ca02c",
    "CD_GBN_EKF": "#ff7f0e",
}


def nice_ticks(lo: float, hi: float, max_ticks: int = 10) -> list:
    """Ticks on a 1-2-5 progression covering ``[lo, hi]``, at most ``max_ticks``."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("tick range must be finite")
    if hi < lo:
        lo, hi = hi, lo
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    exp = math.floor(math.log10((hi - lo) / max_ticks))
    while True:
        for mult in (1, 2, 5):
            step = mult * 10.0**exp
            first = math.floor(lo / step + 1e-9)
            last = math.ceil(hi / step - 1e-9)
            if last - first + 1 <= max_ticks:
                return [_clean(k * step, step) for k in range(first, last + 1)]
        exp += 1


def _clean(v, step):
    digits = max(0, -math.floor(math.log10(step)) + 1)
    v = round(v, digits)
    return 0.0 if v == 0 else v


def log_ticks(lo: float, hi: float, max_ticks: int = 10) -> list:
    """Decade ticks ``10^k`` covering ``[lo, hi]`` (``lo > 0``), thinned to ``max_ticks``."""
    a = math.floor(math.log10(lo) + 1e-12)
    b = math.ceil(math.log10(hi) - 1e-12)
    if b == a:
        b += 1
    stride = 1
    while True:
        first = math.floor(a / stride) * stride
        last = math.ceil(b / stride) * stride
        if (last - first) // stride + 1 <= max_ticks:
            break
        stride += 1
    a, b = first, last
    return [10.0**k for k in range(a, b + 1, stride)]


def _fmt_tick(v: float, log: bool) -> str:
    if log:
        return f"1e{round(math.log10(v))}"
    return f"{v:g}"


def _c(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def render_svg(rows, title: str) -> str:
    """One chart: x = delta, y = ARMSE, one polyline run per filter.

    Cells with no ARMSE split a filter's line into separate polylines. The
    y axis is logarithmic when the values span more than two decades.
    """
    series = {}
    for r in rows:
        series.setdefault(r.filter, []).append((r.delta, r.armse))
    kinds = sorted(series, key=ALL_FILTERS.index)
    xs = [d for k in kinds for d, _ in series[k]]
    ys = [a for k in kinds for _, a in series[k] if a is not None]
    if not xs:
        raise ValueError("no rows to plot")

    xt = nice_ticks(min(xs), max(xs))
    x0, x1 = xt[0], xt[-1]
    positive = [y for y in ys if y > 0]
    log = bool(positive) and len(positive) == len(ys) and max(ys) / min(ys) > 100.0
    if log:
        yt = log_ticks(min(ys), max(ys))
        fy = math.log10
    else:
        yt = nice_ticks(min(ys, default=0.0), max(ys, default=1.0))
        fy = float
    y0, y1 = fy(yt[0]), fy(yt[-1])

    pw = WIDTH - LEFT - RIGHT
    ph = HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + ph - (fy(y) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{_c(LEFT + pw / 2)}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in xt:
        X = _c(px(t))
        out.append(f'<line x1="{X}" y1="{TOP + ph}" x2="{X}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X}" y="{TOP + ph + 18}" text-anchor="middle">{_fmt_tick(t, False)}</text>')
    for t in yt:
        Y = _c(py(t))
        out.append(f'<line x1="{LEFT - 5}" y1="{Y}" x2="{LEFT}" y2="{Y}" stroke="black"/>')
        out.append(f'<line x1="{LEFT}" y1="{Y}" x2="{LEFT + pw}" y2="{Y}" stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle">{_fmt_tick(t, log)}</text>')
    out.append(f'<text x="{_c(LEFT + pw / 2)}" y="{HEIGHT - 12}" text-anchor="middle">sampling period delta</text>')
    out.append(f'<text x="16" y="{_c(TOP + ph / 2)}" text-anchor="middle" transform="rotate(-90 16 {_c(TOP + ph / 2)})">ARMSE{" (log)" if log else ""}</text>')

    for i, k in enumerate(kinds):
        color = COLORS.get(k.value, "black")
        pts = sorted(series[k], key=lambda p: p[0])
        segment = []
        segments = []
        for d, a in pts:
            if a is None:
                if segment:
                    segments.append(segment)
                segment = []
            else:
                segment.append((d, a))
        if segment:
            segments.append(segment)
        for seg in segments:
            coords = " ".join(f"{_c(px(d))},{_c(py(a))}" for d, a in seg)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5" data-filter="{k.value}"/>')
            for d, a in seg:
                out.append(f'<circle cx="{_c(px(d))}" cy="{_c(py(a))}" r="2.5" fill="{color}"/>')
        ly = TOP + 14 + 18 * i
        lx = LEFT + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle">{k.value.replace("_", "-")}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def group_rows(rows) -> dict:
    """Rows keyed by scenario label, in first-seen order."""
    groups = {}
    for r in rows:
        groups.setdefault(r.scenario, []).append(r)
    return groups
