"""Minimal SVG figure writer: line panels, histograms, ROC/DET curves.

Output is plain text with fixed number formatting, so identical inputs give
identical files.
"""

from __future__ import annotations

from html import escape

import numpy as np
from scipy.stats import norm

from .errors import InvalidRange

PANEL_W, PANEL_H = 300, 170
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 58, 12, 26, 34
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _f(x):
    return f"{x:.2f}"


def _nice_range(lo, hi):
    if not np.isfinite(lo) or not np.isfinite(hi):
        return -1.0, 1.0
    if hi <= lo:
        pad = max(abs(lo) * 0.05, 1e-9)
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


class Panel:
    """One axes box inside a figure, mapping data coordinates to pixels."""

    def __init__(self, x0, y0, w=PANEL_W, h=PANEL_H):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.items = []

    def set_limits(self, xlim, ylim):
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        a, b = self.xlim
        return self.x0 + MARGIN_L + (np.asarray(x) - a) / (b - a) * (self.w - MARGIN_L - MARGIN_R)

    def py(self, y):
        a, b = self.ylim
        return self.y0 + self.h - MARGIN_B - (np.asarray(y) - a) / (b - a) * (self.h - MARGIN_T - MARGIN_B)

    def polyline(self, x, y, color=COLORS[0], width=1.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        # NaN breaks the line into runs
        ok = np.isfinite(x) & np.isfinite(y)
        runs, start = [], None
        for i, good in enumerate(ok):
            if good and start is None:
                start = i
            elif not good and start is not None:
                runs.append((start, i))
                start = None
        if start is not None:
            runs.append((start, len(ok)))
        for a, b in runs:
            pts = " ".join(f"{_f(u)},{_f(v)}" for u, v in zip(self.px(x[a:b]), self.py(y[a:b])))
            self.items.append(f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>')

    def bars(self, edges, heights, color=COLORS[0], opacity=0.5):
        for lo, hi, h in zip(edges[:-1], edges[1:], heights):
            if h <= 0:
                continue
            x, w = self.px(lo), self.px(hi) - self.px(lo)
            y = self.py(h)
            self.items.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(self.py(0) - y)}" '
                              f'fill="{color}" fill-opacity="{opacity}"/>')

    def frame(self, title="", xlabel="", ylabel="", xticks=None, yticks=None):
        x1, y1 = self.x0 + MARGIN_L, self.y0 + MARGIN_T
        x2, y2 = self.x0 + self.w - MARGIN_R, self.y0 + self.h - MARGIN_B
        out = [f'<rect x="{x1}" y="{y1}" width="{x2 - x1}" height="{y2 - y1}" fill="none" stroke="#000"/>']
        if title:
            out.append(f'<text x="{_f((x1 + x2) / 2)}" y="{y1 - 8}" text-anchor="middle" font-size="12">{escape(title)}</text>')
        if xlabel:
            out.append(f'<text x="{_f((x1 + x2) / 2)}" y="{y2 + 28}" text-anchor="middle" font-size="10">{escape(xlabel)}</text>')
        if ylabel:
            cy = (y1 + y2) / 2
            out.append(f'<text x="{self.x0 + 12}" y="{_f(cy)}" text-anchor="middle" font-size="10" '
                       f'transform="rotate(-90 {self.x0 + 12} {_f(cy)})">{escape(ylabel)}</text>')
        for ticks, axis in ((xticks, "x"), (yticks, "y")):
            if ticks is None:
                lim = self.xlim if axis == "x" else self.ylim
                vals = np.linspace(lim[0], lim[1], 5)
                ticks = [(v, f"{v:.3g}") for v in vals]
            for v, label in ticks:
                if axis == "x":
                    p = self.px(v)
                    out.append(f'<line x1="{_f(p)}" y1="{y2}" x2="{_f(p)}" y2="{y2 + 4}" stroke="#000"/>')
                    out.append(f'<text x="{_f(p)}" y="{y2 + 15}" text-anchor="middle" font-size="9">{escape(label)}</text>')
                else:
                    p = self.py(v)
                    out.append(f'<line x1="{x1 - 4}" y1="{_f(p)}" x2="{x1}" y2="{_f(p)}" stroke="#000"/>')
                    out.append(f'<text x="{x1 - 6}" y="{_f(p + 3)}" text-anchor="end" font-size="9">{escape(label)}</text>')
        self.items = out + self.items


def _document(width, height, panels):
    body = "\n".join(item for p in panels for item in p.items)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
            f'<rect width="100%" height="100%" fill="#fff"/>\n{body}\n</svg>\n')


def _decimate(y, max_points=1500):
    step = max(1, len(y) // max_points)
    return slice(None, None, step)


def render_exemplars(rows, start_s, stop_s, channel="h"):
    """Grid of raw / signal / noise traces, one row per subject.

    ``rows`` is a sequence of (label, raw_recording, BandPair).  Each panel
    has its own y-range since the noise band is orders of magnitude smaller.
    """
    if not stop_s > start_s:
        raise InvalidRange(f"empty time range [{start_s}, {stop_s}]")
    panels = []
    for r, (label, raw, pair) in enumerate(rows):
        fs = raw.sample_rate_hz
        a = max(int(round(start_s * fs)), 0)
        b = min(int(round(stop_s * fs)), len(raw))
        if b <= a:
            raise InvalidRange(f"time range [{start_s}, {stop_s}] s lies outside the recording")
        t = np.arange(a, b) / fs
        for c, (name, rec) in enumerate((("raw", raw), ("signal", pair.signal), ("noise", pair.noise))):
            y = getattr(rec, channel)[a:b]
            p = Panel(c * PANEL_W, r * PANEL_H)
            fin = y[np.isfinite(y)]
            p.set_limits((t[0], t[-1]), _nice_range(fin.min(), fin.max()) if len(fin) else (-1, 1))
            sl = _decimate(y)
            p.polyline(t[sl], y[sl], COLORS[c % len(COLORS)], 0.8)
            p.frame(title=f"{label} {name}", xlabel="time (s)", ylabel="position (dva)")
            panels.append(p)
    return _document(3 * PANEL_W, max(len(rows), 1) * PANEL_H, panels)


def render_score_histogram(scores, title="", bins=30):
    g, i = scores.genuine, scores.impostor
    allv = np.concatenate([g, i])
    edges = np.linspace(allv.min(), allv.max() if allv.max() > allv.min() else allv.min() + 1e-9, bins + 1)
    hg, _ = np.histogram(g, edges, density=True)
    hi, _ = np.histogram(i, edges, density=True)
    p = Panel(0, 0, 420, 260)
    p.set_limits((edges[0], edges[-1]), (0, max(hg.max(), hi.max()) * 1.05 or 1.0))
    p.bars(edges, hi, COLORS[1])
    p.bars(edges, hg, COLORS[0])
    p.frame(title=title or "genuine (blue) vs impostor (red)", xlabel="cosine similarity", ylabel="density")
    return _document(420, 260, [p])


def render_roc_det(roc, title=""):
    """ROC (FAR vs 1-FRR) and DET (probit FAR vs probit FRR) side by side."""
    roc_p = Panel(0, 0, 360, 300)
    roc_p.set_limits((0, 1), (0, 1))
    roc_p.polyline(roc.far, 1 - roc.frr, COLORS[0], 1.2)
    roc_p.polyline([0, 1], [0, 1], "#999", 0.6)
    roc_p.frame(title=title or "ROC", xlabel="FAR", ylabel="1 - FRR")

    lo, hi = 1e-3, 0.5
    det_p = Panel(360, 0, 360, 300)
    ticks_v = [0.001, 0.01, 0.05, 0.2, 0.5]
    det_p.set_limits((norm.ppf(lo), norm.ppf(hi)), (norm.ppf(lo), norm.ppf(hi)))
    far = np.clip(roc.far, lo, hi)
    frr = np.clip(roc.frr, lo, hi)
    det_p.polyline(norm.ppf(far), norm.ppf(frr), COLORS[1], 1.2)
    ticks = [(norm.ppf(v), f"{100 * v:g}%") for v in ticks_v]
    det_p.frame(title="DET", xlabel="FAR", ylabel="FRR", xticks=ticks, yticks=ticks)
    return _document(720, 300, [roc_p, det_p])
