"""Tiny SVG line-chart writer for the experiment outputs.

Just enough for log-log convergence plots and time-series panels; no
external plotting dependency.
"""

import math

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#7f7f7f"]
_W, _H = 640, 440
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _ticks(lo, hi, log):
    if log:
        lo_e = math.floor(math.log10(lo))
        hi_e = math.ceil(math.log10(hi))
        return [10.0**e for e in range(lo_e, hi_e + 1)]
    span = hi - lo or 1.0
    step = 10 ** math.floor(math.log10(span))
    if span / step > 5:
        step *= 2
    elif span / step < 2:
        step /= 2
    t0 = math.ceil(lo / step) * step
    out = []
    t = t0
    while t <= hi + 1e-12 * span:
        out.append(t)
        t += step
    return out


def _fmt(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.0e}"
    return f"{v:g}"


def write_line_chart(path, series, title="", xlabel="", ylabel="",
                     logx=False, logy=False):
    """Write a chart of named (x, y) series to an SVG file.

    ``series`` is a list of (label, xs, ys). Nonpositive values are
    dropped on logarithmic axes.
    """
    pts = []
    for _, xs, ys in series:
        for x, y in zip(xs, ys):
            if (logx and x <= 0) or (logy and y <= 0):
                continue
            pts.append((float(x), float(y)))
    if not pts:
        raise ValueError("nothing to plot")
    xlo = min(p[0] for p in pts)
    xhi = max(p[0] for p in pts)
    ylo = min(p[1] for p in pts)
    yhi = max(p[1] for p in pts)
    if xhi == xlo:
        xhi, xlo = (10.0 * xlo, xlo / 10.0) if logx else (xlo + 1.0, xlo)
    if yhi == ylo:
        yhi, ylo = (10.0 * ylo, ylo / 10.0) if logy else (ylo + 1.0, ylo)

    def sx(x):
        if logx:
            f = (math.log10(x) - math.log10(xlo)) / (math.log10(xhi) - math.log10(xlo))
        else:
            f = (x - xlo) / (xhi - xlo)
        return _ML + f * (_W - _ML - _MR)

    def sy(y):
        if logy:
            f = (math.log10(y) - math.log10(ylo)) / (math.log10(yhi) - math.log10(ylo))
        else:
            f = (y - ylo) / (yhi - ylo)
        return _H - _MB - f * (_H - _MT - _MB)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for tx in _ticks(xlo, xhi, logx):
        if tx < xlo * (1 - 1e-12) or tx > xhi * (1 + 1e-12):
            continue
        px = sx(tx)
        lines.append(
            f'<line x1="{px:.1f}" y1="{_MT}" x2="{px:.1f}" y2="{_H - _MB}" '
            f'stroke="#dddddd"/>'
        )
        lines.append(
            f'<text x="{px:.1f}" y="{_H - _MB + 16}" text-anchor="middle" '
            f'font-size="11">{_fmt(tx)}</text>'
        )
    for ty in _ticks(ylo, yhi, logy):
        if ty < ylo * (1 - 1e-12) or ty > yhi * (1 + 1e-12):
            continue
        py = sy(ty)
        lines.append(
            f'<line x1="{_ML}" y1="{py:.1f}" x2="{_W - _MR}" y2="{py:.1f}" '
            f'stroke="#dddddd"/>'
        )
        lines.append(
            f'<text x="{_ML - 6}" y="{py + 4:.1f}" text-anchor="end" '
            f'font-size="11">{_fmt(ty)}</text>'
        )
    lines.append(
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
        f'height="{_H - _MT - _MB}" fill="none" stroke="black"/>'
    )
    lines.append(
        f'<text x="{_W / 2}" y="{_H - 12}" text-anchor="middle" font-size="12">'
        f"{xlabel}</text>"
    )
    lines.append(
        f'<text x="16" y="{_H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {_H / 2})">{ylabel}</text>'
    )
    for k, (label, xs, ys) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        coords = [
            f"{sx(x):.1f},{sy(y):.1f}"
            for x, y in zip(xs, ys)
            if not ((logx and x <= 0) or (logy and y <= 0))
        ]
        if not coords:
            continue
        lines.append(
            f'<polyline points="{" ".join(coords)}" fill="none" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        ly = _MT + 16 + 14 * k
        lines.append(
            f'<line x1="{_W - _MR - 90}" y1="{ly - 4}" x2="{_W - _MR - 70}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>'
        )
        lines.append(
            f'<text x="{_W - _MR - 65}" y="{ly}" font-size="11">{label}</text>'
        )
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
