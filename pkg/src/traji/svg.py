"""Plain SVG line plots for trajectories.

Output is deterministic text so plots can be diffed like any other artifact.
"""
from __future__ import annotations

import numpy as np

PALETTE = ("#1f77b4", "#2ca02c", "#d62728", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class Series:
    def __init__(self, points, color: str = "#7f7f7f", width: float = 1.0, label: str | None = None,
                 dash: str | None = None, opacity: float = 1.0):
        self.points = np.asarray(points, dtype=float)[:, :2]
        self.color, self.width, self.label, self.dash, self.opacity = color, width, label, dash, opacity


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def plot(series, title: str = "", size=(480, 480), pad: int = 30) -> str:
    """Render polylines in a shared, aspect-preserving frame."""
    series = [s for s in series if len(s.points)]
    w, h = size
    allpts = np.concatenate([s.points for s in series]) if series else np.zeros((1, 2))
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    scale = min((w - 2 * pad) / span[0], (h - 2 * pad) / span[1])
    off = np.array([(w - scale * span[0]) / 2, (h - scale * span[1]) / 2])

    def xy(p):
        x = off[0] + (p[:, 0] - lo[0]) * scale
        y = h - (off[1] + (p[:, 1] - lo[1]) * scale)
        return x, y

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
           f'<rect width="{w}" height="{h}" fill="white"/>']
    if title:
        out.append(f'<text x="{pad}" y="{pad // 2 + 5}" font-family="sans-serif" font-size="12">{_escape(title)}</text>')
    legend_y = pad + 12
    for s in series:
        x, y = xy(s.points)
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(x, y))
        extra = f' stroke-dasharray="{s.dash}"' if s.dash else ""
        if s.opacity != 1.0:
            extra += f' stroke-opacity="{s.opacity:g}"'
        out.append(f'<polyline fill="none" stroke="{s.color}" stroke-width="{s.width:g}"{extra} points="{pts}"/>')
        if s.label:
            out.append(f'<text x="{w - pad - 110}" y="{legend_y}" font-family="sans-serif" font-size="10" '
                       f'fill="{s.color}">{_escape(s.label)}</text>')
            legend_y += 12
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def save(path, series, title: str = "", **kw) -> None:
    with open(path, "w") as fh:
        fh.write(plot(series, title, **kw))
