"""Minimal deterministic SVG line/scatter plots (one row of panels)."""

from dataclasses import dataclass, field

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    style: str = "line"  # "line", "dash" or "dots"


@dataclass
class Panel:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)
    xlim: tuple = None
    ylim: tuple = None


def _limits(values, given):
    if given is not None:
        return given
    finite = np.concatenate([np.asarray(v, dtype=float).ravel() for v in values])
    finite = finite[np.isfinite(finite)]
    if finite.size == 0:
        return (0.0, 1.0)
    lo, hi = float(finite.min()), float(finite.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return (lo - pad, hi + pad)


def render(panels, width=360, height=300, max_points=2000):
    margin = (50, 20, 30, 45)  # left, right, top, bottom
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width * len(panels)}" '
           f'height="{height}" font-family="sans-serif" font-size="11">']
    for pi, panel in enumerate(panels):
        x0 = pi * width + margin[0]
        y0 = margin[2]
        pw = width - margin[0] - margin[1]
        ph = height - margin[2] - margin[3]
        xl = _limits([s.x for s in panel.series], panel.xlim)
        yl = _limits([s.y for s in panel.series], panel.ylim)

        def sx(v):
            return x0 + (v - xl[0]) / (xl[1] - xl[0]) * pw

        def sy(v):
            return y0 + ph - (v - yl[0]) / (yl[1] - yl[0]) * ph

        out.append(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
        out.append(f'<text x="{x0 + pw / 2:.1f}" y="{y0 - 10}" text-anchor="middle">{panel.title}</text>')
        out.append(f'<text x="{x0 + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{panel.xlabel}</text>')
        out.append(f'<text x="{pi * width + 12}" y="{y0 + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 {pi * width + 12} {y0 + ph / 2:.1f})">{panel.ylabel}</text>')
        for v, anchor in ((xl[0], "start"), (xl[1], "end")):
            out.append(f'<text x="{sx(v):.1f}" y="{y0 + ph + 14}" text-anchor="{anchor}">{v:.3g}</text>')
        for v in yl:
            out.append(f'<text x="{x0 - 4}" y="{sy(v):.1f}" text-anchor="end">{v:.3g}</text>')
        for si, s in enumerate(panel.series):
            color = COLORS[si % len(COLORS)]
            x = np.asarray(s.x, dtype=float)
            y = np.asarray(s.y, dtype=float)
            if x.size > max_points:
                keep = np.linspace(0, x.size - 1, max_points).astype(int)
                x, y = x[keep], y[keep]
            if s.style == "dots":
                for a, b in zip(x, y):
                    out.append(f'<circle cx="{sx(a):.1f}" cy="{sy(b):.1f}" r="1.5" fill="{color}"/>')
            else:
                pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x, y))
                dash = ' stroke-dasharray="4 3"' if s.style == "dash" else ""
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}"{dash}/>')
            if s.label:
                ly = y0 + 12 + 13 * si
                out.append(f'<text x="{x0 + pw - 4}" y="{ly}" text-anchor="end" fill="{color}">{s.label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, panels, **kwargs):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render(panels, **kwargs))
