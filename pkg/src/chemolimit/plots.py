"""Minimal SVG plots written as text (log-log rates, interface overlays, profiles)."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
W, H, PAD = 480, 360, 48


class _Axes:
    def __init__(self, xlim, ylim, logx=False, logy=False, equal=False):
        self.logx, self.logy = logx, logy
        x0, x1 = (math.log10(v) for v in xlim) if logx else xlim
        y0, y1 = (math.log10(v) for v in ylim) if logy else ylim
        if x1 == x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        self.sx = (W - 2 * PAD) / (x1 - x0)
        self.sy = (H - 2 * PAD) / (y1 - y0)
        if equal:
            self.sx = self.sy = min(self.sx, self.sy)
        self.x0, self.y0, self.x1, self.y1 = x0, y0, x1, y1
        self.parts: list[str] = []

    def px(self, x, y):
        x = np.log10(x) if self.logx else np.asarray(x, dtype=float)
        y = np.log10(y) if self.logy else np.asarray(y, dtype=float)
        return PAD + (x - self.x0) * self.sx, H - PAD - (y - self.y0) * self.sy

    def polyline(self, x, y, color, width=1.5, dash=None, closed=False):
        X, Y = self.px(x, y)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(np.atleast_1d(X), np.atleast_1d(Y)))
        tag = "polygon" if closed else "polyline"
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<{tag} points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>')

    def markers(self, x, y, color):
        X, Y = self.px(x, y)
        for a, b in zip(np.atleast_1d(X), np.atleast_1d(Y)):
            self.parts.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3.5" fill="{color}"/>')

    def text(self, x, y, s, size=12, anchor="start"):
        self.parts.append(f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" text-anchor="{anchor}" '
                          f'font-family="sans-serif">{escape(s)}</text>')

    def render(self, title, xlabel, ylabel, legend=()):
        frame = (f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" '
                 f'fill="none" stroke="#444"/>')
        head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
                '<rect width="100%" height="100%" fill="white"/>', frame]
        self.text(W / 2, PAD / 2, title, 14, "middle")
        self.text(W / 2, H - 10, xlabel, 12, "middle")
        self.parts.append(f'<text x="14" y="{H / 2:.1f}" font-size="12" font-family="sans-serif" '
                          f'text-anchor="middle" transform="rotate(-90 14 {H / 2:.1f})">{escape(ylabel)}</text>')
        for k, (label, color) in enumerate(legend):
            y = PAD + 16 + 16 * k
            self.parts.append(f'<line x1="{W - PAD - 120}" y1="{y - 4}" x2="{W - PAD - 100}" y2="{y - 4}" '
                              f'stroke="{color}" stroke-width="2"/>')
            self.text(W - PAD - 96, y, label, 11)
        self._ticks()
        return "\n".join(head + self.parts + ["</svg>"]) + "\n"

    def _ticks(self):
        for k in range(5):
            fx = self.x0 + (self.x1 - self.x0) * k / 4
            fy = self.y0 + (self.y1 - self.y0) * k / 4
            vx = 10**fx if self.logx else fx
            vy = 10**fy if self.logy else fy
            X = PAD + (fx - self.x0) * self.sx
            Y = H - PAD - (fy - self.y0) * self.sy
            self.text(X, H - PAD + 14, f"{vx:.3g}", 10, "middle")
            self.text(PAD - 4, Y + 3, f"{vy:.3g}", 10, "end")


def rate_plot(series, title="convergence") -> str:
    """``series``: list of ``(label, samples, fit)`` with samples ``[(eps, metric)]``
    and ``fit`` a ConvergenceFit or None.  Log-log axes, fitted line dashed."""
    eps = [e for _, s, _ in series for e, _ in s]
    met = [m for _, s, _ in series for _, m in s if m > 0]
    if not eps or not met:
        raise ValueError("nothing to plot")
    ax = _Axes((min(eps) / 1.2, max(eps) * 1.2), (min(met) / 1.5, max(met) * 1.5), logx=True, logy=True)
    legend = []
    for k, (label, samples, fit) in enumerate(series):
        c = COLORS[k % len(COLORS)]
        pos = [(e, m) for e, m in samples if m > 0]
        if not pos:
            continue
        ax.markers([e for e, _ in pos], [m for _, m in pos], c)
        if fit is not None:
            xs = np.array([min(e for e, _ in pos), max(e for e, _ in pos)])
            ax.polyline(xs, fit.predict(xs), c, dash="5,3")
            label = f"{label} (slope {fit.slope:.3f})"
        legend.append((label, c))
    return ax.render(title, "eps", "metric", legend)


def overlay_plot(frames, bbox, title="interfaces") -> str:
    """``frames``: list of ``(label, polylines)``; ``bbox = (lx, ly)``."""
    ax = _Axes((0.0, bbox[0]), (0.0, bbox[1]), equal=True)
    legend = []
    for k, (label, lines) in enumerate(frames):
        c = COLORS[k % len(COLORS)]
        for ln in lines:
            ax.polyline(ln.points[:, 0], ln.points[:, 1], c, 1.2, closed=ln.closed)
        legend.append((label, c))
    return ax.render(title, "x", "y", legend)


def profile_plot(s, curves, title="layer profile") -> str:
    """``curves``: list of ``(label, values)`` sampled at positions ``s``."""
    s = np.asarray(s, dtype=float)
    vals = np.concatenate([np.asarray(v, dtype=float) for _, v in curves])
    ax = _Axes((float(s.min()), float(s.max())), (min(-0.05, float(vals.min())), max(1.05, float(vals.max()))))
    legend = []
    for k, (label, v) in enumerate(curves):
        c = COLORS[k % len(COLORS)]
        ax.polyline(s, v, c, dash=None if k == 0 else "4,3")
        legend.append((label, c))
    return ax.render(title, "distance along the normal", "u", legend)
