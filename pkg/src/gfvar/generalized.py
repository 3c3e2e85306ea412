"""Regularized functions: convolution with mollifiers, smoothed indicator
windows, Riemann-sum decompositions and convergence-order fits."""

import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np

from ._quadrature import panel_rule, uniform_rule
from .mollifiers import Mollifier, MollifierError, QuadratureError, build_family


class TruncationWarning(UserWarning):
    """The integrand may not be negligible at the truncated kernel support."""


class QuadratureWarning(UserWarning):
    """Refined and coarse quadrature disagree beyond tolerance."""


def _order(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


class GenFunction:
    """One representative of a generalized-function class.

    ``func`` is evaluated pointwise (vectorized over numpy arrays);
    ``derivatives`` optionally lists callables for the 1st, 2nd, ... derivative.
    ``order`` is the declared moment order q (``None`` for exact, unregularized
    functions).
    """

    def __init__(self, func, derivatives=(), order=None, provenance="raw", mollifier=None, domain=None):
        self._f = func
        self._d = tuple(derivatives)
        self.order = order
        self.provenance = provenance
        self.mollifier = mollifier
        self.domain = domain

    def __call__(self, x):
        return self._f(x)

    @property
    def n_derivatives(self):
        return len(self._d)

    def derivative(self, k=1):
        if k == 0:
            return self
        if k > len(self._d):
            raise ValueError(f"derivative of order {k} not available ({len(self._d)} supplied)")
        return GenFunction(self._d[k - 1], self._d[k:], self.order, "derived", self.mollifier, self.domain)

    def _all(self):
        return (self._f,) + self._d

    def _wrap(self, other):
        if isinstance(other, GenFunction):
            return other
        c = other
        return GenFunction(lambda x: c + 0.0 * np.asarray(x, dtype=float),
                           [lambda x: 0.0 * np.asarray(x, dtype=float)] * len(self._d))

    def __add__(self, other):
        other = self._wrap(other)
        fs, gs = self._all(), other._all()
        n = min(len(fs), len(gs))
        parts = [(lambda x, f=f, g=g: f(x) + g(x)) for f, g in zip(fs[:n], gs[:n])]
        return GenFunction(parts[0], parts[1:], _order(self.order, other.order), "derived", self.mollifier, self.domain)

    __radd__ = __add__

    def __neg__(self):
        parts = [(lambda x, f=f: -f(x)) for f in self._all()]
        return GenFunction(parts[0], parts[1:], self.order, "derived", self.mollifier, self.domain)

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, GenFunction):
            c = other
            parts = [(lambda x, f=f: c * f(x)) for f in self._all()]
            return GenFunction(parts[0], parts[1:], self.order, "derived", self.mollifier, self.domain)
        fs, gs = self._all(), other._all()
        n = min(len(fs), len(gs))

        def leibniz(k):
            return lambda x: sum(comb(k, j) * fs[j](x) * gs[k - j](x) for j in range(k + 1))

        parts = [leibniz(k) for k in range(n)]
        return GenFunction(parts[0], parts[1:], _order(self.order, other.order), "derived", self.mollifier, self.domain)

    __rmul__ = __mul__


def convolve(f, m, n_panels=None, order=64, check=True):
    """Regularize ``f`` with mollifier ``m``: ``f~(x) = int f(x + eps z) eta(z) dz``.

    Each derivative of the result is computed with the corresponding kernel
    derivative, not by differentiating ``f``.  The quadrature uses 64-point
    Gauss-Legendre panels over the mollifier support and is compared against
    a rule with half as many panels.
    """
    fam = m.family
    R = fam.radius
    if n_panels is None:
        n_panels = 8 if fam.compact else 16
    z, w = uniform_rule(-R, R, n_panels, order)
    zc, wc = uniform_rule(-R, R, max(1, n_panels // 2), order)
    eps = m.epsilon

    def kernel_sum(x, k, nodes, weights):
        x = np.asarray(x, dtype=float)
        kern = weights * fam.eta(nodes, m.q, k)
        vals = f(x[..., None] + eps * nodes)
        return (-1) ** k * eps ** (-k) * (vals @ kern if vals.ndim else vals * kern)

    def make(k):
        def g(x):
            out = kernel_sum(x, k, z, w)
            if check:
                coarse = kernel_sum(x, k, zc, wc)
                diff = np.max(np.abs(out - coarse)) if np.size(out) else 0.0
                if diff > 1e-8 * max(1.0, float(np.max(np.abs(out)))):
                    warnings.warn(f"convolution with {m.id}: panel refinement changed result by {diff:.2e}",
                                  QuadratureWarning, stacklevel=2)
                if not fam.compact and k == 0:
                    xa = np.asarray(x, dtype=float)
                    tail = np.maximum(np.abs(f(xa - eps * R)), np.abs(f(xa + eps * R))) * fam.mother(R)
                    if np.any(tail > 1e-12 * np.maximum(1.0, np.abs(out))):
                        warnings.warn(f"integrand not negligible at the {R:g}-sigma truncation",
                                      TruncationWarning, stacklevel=2)
            return out
        return g

    return GenFunction(make(0), [make(k) for k in range(1, m.max_k + 1)], m.q, "convolved", m)


def kernel_rule(m, n=None):
    """Nodes ``z_j`` and weights ``W_j`` with ``int g(z) eta_q(z) dz ~ sum_j W_j g(z_j)``
    for the unscaled mollifier.

    Gaussian families use Gauss-Hermite nodes (the kernel is a polynomial
    times the weight), compact families composite Gauss-Legendre panels.
    """
    fam = m.family
    if fam.kind == "gaussian":
        n = n or 24
        t, w = np.polynomial.hermite_e.hermegauss(n)
        sigma = fam.params["sigma"]
        z = sigma * t
        poly = fam.eta(z, m.q) / fam.mother(z)
        return z, w / np.sqrt(2 * np.pi) * poly
    n = n or 48
    panels = max(1, n // 24)
    z, w = uniform_rule(-fam.radius, fam.radius, panels, n // panels)
    return z, w * fam.eta(z, m.q)


# -- windows ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Window:
    """Regularized indicator of a union of disjoint intervals (ends may be
    infinite)."""

    intervals: tuple
    mollifier: Mollifier

    def _cdf(self, x):
        m = self.mollifier
        lim = m.family.radius + 1.0
        s = np.clip(np.asarray(x, dtype=float) / m.epsilon, -lim, lim)
        return m.family.cdf(s, m.q)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for a, b in self.intervals:
            out = out + self._cdf(b - x) - self._cdf(a - x)
        return out

    def derivative(self, x, k=1):
        """k-th derivative from the exact identity
        ``I'(x) = eta_eps(a - x) - eta_eps(b - x)`` (summed over intervals)."""
        if k == 0:
            return self(x)
        m = self.mollifier
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for a, b in self.intervals:
            if np.isfinite(a):
                out = out + m.derivative(a - x, k - 1)
            if np.isfinite(b):
                out = out - m.derivative(b - x, k - 1)
        return (-1) ** (k - 1) * out

    @property
    def edges(self):
        return tuple(e for ab in self.intervals for e in ab if np.isfinite(e))

    @property
    def support(self):
        """Closed interval outside which the window vanishes identically."""
        r = self.mollifier.radius
        lo = min(a for a, _ in self.intervals) - r
        hi = max(b for _, b in self.intervals) + r
        return lo, hi

    def complement(self):
        pts = [-np.inf] + [e for ab in sorted(self.intervals) for e in ab] + [np.inf]
        gaps = [(pts[i], pts[i + 1]) for i in range(0, len(pts), 2) if pts[i] < pts[i + 1]]
        return Window(tuple(gaps), self.mollifier)

    def as_genfunction(self, n_derivatives=2):
        ds = [(lambda x, k=k: self.derivative(x, k)) for k in range(1, n_derivatives + 1)]
        return GenFunction(self, ds, self.mollifier.q, "window", self.mollifier)


def window(a, b, m):
    if not a < b:
        raise MollifierError(f"window needs a < b, got [{a}, {b}]")
    return Window(((float(a), float(b)),), m)


@dataclass(frozen=True, eq=False)
class BoxWindow:
    """Tensor product of 1D windows, one per axis."""

    axes: tuple

    def __call__(self, *coords):
        out = 1.0
        for w, c in zip(self.axes, coords):
            out = out * w(c)
        return out


# -- Riemann decomposition ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class RiemannDecomposition:
    grid: np.ndarray
    coefficients: np.ndarray
    mollifier: Mollifier
    simplified: bool

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        m = self.mollifier
        d = self.grid - x[..., None]
        if self.simplified:
            kern = m.family.eta(d / m.epsilon, m.q)
        else:
            kern = m(d)
        return kern @ self.coefficients


def approx_decompose(f, grid, m, simplified=None):
    """Coefficients ``f_k = f(y_k) dy_k`` of the sum ``sum_k f_k eta_eps(y_k - x)``.

    With ``simplified`` (default when the grid spacing equals epsilon) the
    coefficients are the bare samples ``f(y_k)`` and the kernel is
    ``eta(./eps)``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("approx_decompose needs a non-empty grid")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if grid.size == 1:
        dy = np.array([m.epsilon])
    else:
        dy = np.diff(grid)
        dy = np.append(dy, dy[-1])
    if simplified is None:
        simplified = bool(np.allclose(dy, m.epsilon, rtol=1e-9))
    samples = np.asarray(f(grid), dtype=float)
    coeffs = samples if simplified else samples * dy
    return RiemannDecomposition(grid, coeffs, m, simplified)


def mollifier_inner(m1, m2, x, y, k1=0, k2=0, order=64, n_panels=8):
    """``int eta1_eps^(k1)(z - x) * eta2_eps'^(k2)(z - y) dz`` by quadrature on
    the overlap of the two supports."""
    lo = max(x - m1.radius, y - m2.radius)
    hi = min(x + m1.radius, y + m2.radius)
    if hi <= lo:
        return 0.0
    nodes, weights = uniform_rule(lo, hi, n_panels, order)
    return float(np.dot(weights, m1.derivative(nodes - x, k1) * m2.derivative(nodes - y, k2)))


# -- convergence orders -------------------------------------------------------

@dataclass
class OrderEstimate:
    slope: float
    eps: np.ndarray
    errors: np.ndarray
    floor_reached: bool = False
    reliable: bool = True
    notes: list = field(default_factory=list)


def fit_order(eps, errors, floor=1e-12):
    """Least-squares slope of log(error) against log(eps), ignoring points at
    the numerical floor."""
    eps = np.asarray(eps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    ok = errors > floor
    floor_reached = not np.all(ok)
    if ok.sum() < 3:
        return OrderEstimate(float("nan"), eps, errors, floor_reached, False,
                             ["fewer than three errors above the numerical floor"])
    slope = np.polyfit(np.log(eps[ok]), np.log(errors[ok]), 1)[0]
    return OrderEstimate(float(slope), eps, errors, floor_reached, True)


def order_estimate(f, family, q, eps_list=(0.4, 0.2, 0.1, 0.05), probe=(-1.0, 1.0), n_probe=101, floor=1e-12):
    """Fit the decay rate of ``max |f~ - f|`` on the probe interval."""
    eps_list = np.asarray(eps_list, dtype=float)
    if eps_list.size < 3 or np.any(np.diff(eps_list) >= 0):
        raise ValueError("eps_list needs at least three strictly decreasing values")
    if isinstance(family, str):
        family = build_family(family, None, q)
    xs = np.linspace(*probe, n_probe)
    exact = f(xs)
    errors = []
    for e in eps_list:
        ft = convolve(f, Mollifier(family, q, float(e)), check=False)
        errors.append(float(np.max(np.abs(ft(xs) - exact))))
    return fit_order(eps_list, errors, floor)


__all__ = [
    "GenFunction", "convolve", "Window", "window", "BoxWindow", "RiemannDecomposition", "approx_decompose",
    "mollifier_inner", "kernel_rule", "OrderEstimate", "fit_order", "order_estimate", "QuadratureError", "TruncationWarning",
    "QuadratureWarning", "panel_rule",
]
