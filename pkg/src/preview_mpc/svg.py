"""Minimal deterministic SVG plotting for planar sets and trajectories."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


@dataclass
class Layer:
    kind: str                      # "polygon", "polyline", "points"
    data: np.ndarray
    color: str = "#000000"
    label: Optional[str] = None
    fill_opacity: float = 0.15
    width: float = 1.5


@dataclass
class Figure:
    lo: Sequence[float]
    hi: Sequence[float]
    title: str = ""
    size: int = 520
    margin: int = 50
    layers: List[Layer] = field(default_factory=list)

    def polygon(self, V, color, label=None, fill_opacity=0.15):
        self.layers.append(Layer("polygon", np.asarray(V, float), color, label, fill_opacity))

    def polyline(self, P, color, label=None, width=1.5):
        self.layers.append(Layer("polyline", np.asarray(P, float), color, label, width=width))

    def points(self, P, color, label=None):
        self.layers.append(Layer("points", np.asarray(P, float).reshape(-1, 2), color, label))

    def _map(self, P):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        span = self.size - 2 * self.margin
        x = self.margin + (P[:, 0] - lo[0]) / (hi[0] - lo[0]) * span
        y = self.size - self.margin - (P[:, 1] - lo[1]) / (hi[1] - lo[1]) * span
        return x, y

    def _pts(self, P) -> str:
        x, y = self._map(np.atleast_2d(P))
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))

    def render(self) -> str:
        s, m = self.size, self.margin
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{s + 160}" height="{s}" viewBox="0 0 {s + 160} {s}">',
            f'<rect x="0" y="0" width="{s + 160}" height="{s}" fill="white"/>',
            f'<rect x="{m}" y="{m}" width="{s - 2 * m}" height="{s - 2 * m}" fill="none" stroke="#444"/>',
        ]
        if self.title:
            out.append(f'<text x="{s / 2:.1f}" y="{m / 2:.1f}" text-anchor="middle" font-size="14">{escape(self.title)}</text>')
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        for t in np.linspace(lo[0], hi[0], 5):
            x, _ = self._map(np.array([[t, lo[1]]]))
            out.append(f'<line x1="{x[0]:.2f}" y1="{s - m}" x2="{x[0]:.2f}" y2="{s - m + 5}" stroke="#444"/>')
            out.append(f'<text x="{x[0]:.2f}" y="{s - m + 18}" text-anchor="middle" font-size="10">{t:.3g}</text>')
        for t in np.linspace(lo[1], hi[1], 5):
            _, y = self._map(np.array([[lo[0], t]]))
            out.append(f'<line x1="{m - 5}" y1="{y[0]:.2f}" x2="{m}" y2="{y[0]:.2f}" stroke="#444"/>')
            out.append(f'<text x="{m - 8}" y="{y[0] + 3:.2f}" text-anchor="end" font-size="10">{t:.3g}</text>')
        legend = []
        for L in self.layers:
            if L.data.size == 0:
                continue
            if L.kind == "polygon":
                out.append(f'<polygon points="{self._pts(L.data)}" fill="{L.color}" fill-opacity="{L.fill_opacity}" '
                           f'stroke="{L.color}" stroke-width="1"/>')
            elif L.kind == "polyline":
                out.append(f'<polyline points="{self._pts(L.data)}" fill="none" stroke="{L.color}" stroke-width="{L.width}"/>')
            else:
                x, y = self._map(L.data)
                out.extend(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{L.color}"/>' for a, b in zip(x, y))
            if L.label and (L.label, L.color) not in legend:
                legend.append((L.label, L.color))
        for i, (label, color) in enumerate(legend):
            y = m + 14 * i
            out.append(f'<rect x="{s - m + 20}" y="{y}" width="10" height="10" fill="{color}"/>')
            out.append(f'<text x="{s - m + 35}" y="{y + 9}" font-size="10">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.render())
