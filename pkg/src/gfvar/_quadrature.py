"""Composite Gauss-Legendre rules shared by the numerical modules."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def gauss_legendre(n):
    """Nodes and weights of the n-point rule on [-1, 1] (cached, read-only)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(breaks, order=32):
    """Nodes and weights of a composite rule with panels between ``breaks``."""
    breaks = np.asarray(breaks, dtype=float)
    x, w = gauss_legendre(order)
    a, b = breaks[:-1, None], breaks[1:, None]
    half = 0.5 * (b - a)
    nodes = (a + b) * 0.5 + half * x[None, :]
    weights = half * w[None, :]
    return nodes.ravel(), weights.ravel()


def uniform_rule(a, b, n_panels, order=32):
    return panel_rule(np.linspace(a, b, n_panels + 1), order)


def graded_breaks(a, b, edges, band, fine, coarse):
    """Panel breaks on [a, b]: spacing ``coarse`` overall, refined to ``fine``
    within ``band`` of each point in ``edges``."""
    pts = [np.linspace(a, b, max(2, int(np.ceil((b - a) / coarse)) + 1))]
    for e in edges:
        lo, hi = max(a, e - band), min(b, e + band)
        if hi > lo:
            pts.append(np.linspace(lo, hi, max(2, int(np.ceil((hi - lo) / fine)) + 1)))
    pts = np.unique(np.concatenate(pts))
    keep = np.concatenate([[True], np.diff(pts) > 1e-13 * max(1.0, abs(b - a))])
    return pts[keep]
