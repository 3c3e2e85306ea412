"""Mollifier families of arbitrary moment order.

A family is built from an even (or user supplied) mother function ``eta0``.
Higher orders are obtained by adding derivatives of the mother,

    eta_q = eta_{q-1} + alpha_q * d^q eta0,

with ``alpha_q`` chosen so that the q-th moment of ``eta_q`` vanishes.  The
moments of ``d^n eta0`` follow from those of ``eta0`` by integration by parts,
so only the mother moments need quadrature.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial, pi, sqrt
from typing import Callable

import mpmath
import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial.hermite_e import hermeval
from scipy import integrate, special
from scipy.interpolate import CubicHermiteSpline

from ._quadrature import uniform_rule

KINDS = ("bump", "gaussian", "cosine-squared", "custom")
GAUSSIAN_TRUNCATION = 12.0
MOMENT_TOL = 1e-9


class MollifierError(ValueError):
    """Invalid mollifier parameters."""


class UnsupportedOrderError(MollifierError):
    """Requested derivative or moment order is not available."""


class QuadratureError(RuntimeError):
    """An integral did not converge to the requested tolerance."""


# -- mother functions -------------------------------------------------------

def _bump_numerators(p, kmax):
    """Numerators N_k with d^k exp(1/D) = N_k / D^(2k) exp(1/D), D = x^p - 1."""
    D = Polynomial([-1.0] + [0.0] * (p - 1) + [1.0])
    dD = D.deriv()
    nums = [Polynomial([1.0])]
    for k in range(kmax):
        n = nums[-1]
        nums.append(n.deriv() * D * D - dD * n * (2 * k * D + 1))
    return nums


def _bump_mother(p):
    nums = [Polynomial([1.0])]

    def numerator(k):
        if len(nums) <= k:
            nums[:] = _bump_numerators(p, k + 4)
        return nums[k]

    with mpmath.workdps(30):
        raw = mpmath.quad(lambda t: mpmath.exp(1 / (t**p - 1)), [-1, 0, 1])
        scale_mp = 1 / raw
    scale = float(scale_mp)

    def mother(x, k=0):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inside = np.abs(x) < 1.0
        xi = x[inside]
        d = xi**p - 1.0
        with np.errstate(under="ignore"):
            out[inside] = scale * numerator(k)(xi) * np.exp(1.0 / d - 2 * k * np.log(-d))
        return out

    def mother_mp(t, k=0):
        if abs(t) >= 1:
            return mpmath.mpf(0)
        coeffs = [int(round(c)) for c in numerator(k).coef]
        d = t**p - 1
        return scale_mp * mpmath.polyval(coeffs[::-1], t) * mpmath.exp(1 / d) / d ** (2 * k)

    return mother, mother_mp


def _gaussian_mother(sigma):
    norm = 1.0 / (sigma * sqrt(2 * pi))

    def mother(x, k=0):
        x = np.asarray(x, dtype=float)
        s = x / sigma
        coeffs = np.zeros(k + 1)
        coeffs[k] = 1.0
        with np.errstate(under="ignore"):
            return (-1) ** k * sigma ** (-k) * hermeval(s, coeffs) * norm * np.exp(-0.5 * s * s)

    def mother_mp(t, k=0):
        s = t / sigma
        he = [mpmath.mpf(1), s]
        for j in range(1, k):
            he.append(s * he[j] - j * he[j - 1])
        return (-1) ** k * mpmath.mpf(sigma) ** (-k) * he[k] * mpmath.exp(-s * s / 2) / (sigma * mpmath.sqrt(2 * mpmath.pi))

    return mother, mother_mp


def _cos2_mother(x, k=0):
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) <= 1.0
    if k == 0:
        val = 0.5 * (1.0 + np.cos(pi * x))
    else:
        val = 0.5 * pi**k * np.cos(pi * x + k * pi / 2)
    return np.where(inside, val, 0.0)


def _cos2_mother_mp(t, k=0):
    if abs(t) > 1:
        return mpmath.mpf(0)
    if k == 0:
        return (1 + mpmath.cos(mpmath.pi * t)) / 2
    return mpmath.pi**k * mpmath.cos(mpmath.pi * t + k * mpmath.pi / 2) / 2


def _cos2_cdf(s):
    s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
    return 0.5 * (s + 1.0) + np.sin(pi * s) / (2 * pi)


# -- family -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MollifierFamily:
    """Mother function plus moment-cancellation coefficients up to ``q_max``.

    ``radius`` is the half-width of the (possibly truncated) support of the
    unscaled mother; the Gaussian is truncated at 12 sigma.
    """

    kind: str
    params: dict
    q_max: int
    alphas: tuple
    radius: float
    max_derivative: int
    symmetric: bool
    compact: bool
    mother_moments: tuple
    _mother: Callable = field(repr=False)
    _cdf0: Callable = field(repr=False)
    _mother_mp: Callable = field(repr=False, default=None)

    @property
    def support(self):
        if self.compact:
            return (-self.radius, self.radius)
        return "unbounded (Schwartz decay)"

    @property
    def name(self):
        if self.kind == "bump":
            return f"bump(p={self.params['p']})"
        if self.kind == "gaussian":
            return f"gaussian(sigma={self.params['sigma']:g})"
        return self.kind

    def mother(self, x, k=0):
        """k-th derivative of the unscaled mother function."""
        if k > self.max_derivative:
            raise UnsupportedOrderError(f"{self.name}: derivative order {k} > {self.max_derivative}")
        return self._mother(x, k)

    def eta(self, x, q, k=0):
        """k-th derivative of the unscaled order-q mollifier."""
        if q > self.q_max:
            raise UnsupportedOrderError(f"{self.name}: order {q} > q_max={self.q_max}")
        out = self.mother(x, k)
        for n in range(1, q + 1):
            if self.alphas[n] != 0.0:
                out = out + self.alphas[n] * self.mother(x, n + k)
        return out

    def eta_mp(self, t, q, k=0):
        """Extended-precision evaluation (mpmath scalar), when the family has one."""
        if self._mother_mp is None:
            raise UnsupportedOrderError(f"{self.name}: no extended-precision evaluator")
        out = self._mother_mp(t, k)
        for n in range(1, q + 1):
            if self.alphas[n] != 0.0:
                out += self.alphas[n] * self._mother_mp(t, n + k)
        return out

    def cdf(self, s, q):
        """Cumulative integral of the unscaled order-q mollifier up to ``s``."""
        out = self._cdf0(s)
        for n in range(1, q + 1):
            if self.alphas[n] != 0.0:
                out = out + self.alphas[n] * self.mother(s, n - 1)
        return out

    def derivative_moment(self, n, k):
        """Integral of x^n * d^k eta0, by parts from the mother moments."""
        if k > n:
            return 0.0
        return (-1) ** k * factorial(n) / factorial(n - k) * self.mother_moments[n - k]


def _tabulated_cdf(mother, radius, n=4096):
    x = np.linspace(-radius, radius, n + 1)
    nodes, weights = uniform_rule(-radius, radius, n, order=8)
    cell = (weights * mother(nodes, 0)).reshape(n, 8).sum(axis=1)
    values = np.concatenate([[0.0], np.cumsum(cell)])
    spline = CubicHermiteSpline(x, values, mother(x, 0))
    total = values[-1]

    def cdf(s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= -radius, 0.0, np.where(s >= radius, total, spline(np.clip(s, -radius, radius))))

    return cdf


def _mother_moments(kind, mother, mother_mp, lo, hi, jmax):
    out = []
    for j in range(jmax + 1):
        if mother_mp is not None:
            with mpmath.workdps(30):
                pts = [lo, 0, hi] if lo < 0 < hi else [lo, hi]
                val, err = mpmath.quad(lambda t: t**j * mother_mp(t), pts, error=True)
                val, err = float(val), float(err)
        else:
            val, err = integrate.quad(lambda x: x**j * mother(x, 0), lo, hi, points=[0.0] if lo < 0 < hi else None,
                                      epsabs=1e-13, epsrel=1e-13, limit=400)
        if not np.isfinite(val) or err > 1e-11:
            raise QuadratureError(f"{kind}: moment integral of x^{j}*eta0 did not converge (error estimate {err:.2e})")
        out.append(val)
    return tuple(out)


def build_family(kind, params=None, q_max=0, max_derivative=None):
    """Construct a mollifier family and its coefficients alpha_0..alpha_{q_max}.

    ``params``: ``{"p": even int >= 2}`` for bump, ``{"sigma": > 0}`` for
    gaussian, nothing for cosine-squared, and for ``custom`` a mapping with
    ``mother`` (callable ``(x, k)``), ``radius`` and optionally ``symmetric``.
    """
    params = dict(params or {})
    if kind not in KINDS:
        raise MollifierError(f"unknown mollifier kind {kind!r}; expected one of {KINDS}")
    if not isinstance(q_max, (int, np.integer)) or q_max < 0:
        raise MollifierError(f"q_max must be a non-negative integer, got {q_max!r}")
    if max_derivative is None:
        max_derivative = q_max + 4
    if max_derivative < q_max + 2:
        raise MollifierError("max_derivative must allow at least two derivatives of eta_q")

    symmetric, compact = True, True
    if kind == "bump":
        p = params.setdefault("p", 2)
        if not isinstance(p, (int, np.integer)) or p < 2 or p % 2:
            raise MollifierError(f"bump exponent p must be an even integer >= 2, got {p!r}")
        (mother, mother_mp), radius = _bump_mother(int(p)), 1.0
        cdf0 = None
    elif kind == "gaussian":
        sigma = float(params.setdefault("sigma", 1.0))
        if not sigma > 0:
            raise MollifierError(f"gaussian sigma must be positive, got {sigma!r}")
        (mother, mother_mp), radius, compact = _gaussian_mother(sigma), GAUSSIAN_TRUNCATION * sigma, False
        cdf0 = lambda s: special.ndtr(np.asarray(s, dtype=float) / sigma)  # noqa: E731
    elif kind == "cosine-squared":
        if q_max > 1:
            raise MollifierError("the cosine-squared family only exists up to order q=1")
        mother, mother_mp, radius, cdf0 = _cos2_mother, _cos2_mother_mp, 1.0, _cos2_cdf
    else:
        if not callable(params.get("mother")) or not params.get("radius", 0) > 0:
            raise MollifierError("custom family needs a callable 'mother(x, k)' and a positive 'radius'")
        mother, mother_mp, radius = params["mother"], None, float(params["radius"])
        symmetric = bool(params.get("symmetric", False))
        compact = bool(params.get("compact", True))
        cdf0 = None

    moms = _mother_moments(kind, mother, mother_mp, -radius, radius, q_max)
    if kind == "custom" and abs(moms[0] - 1.0) > MOMENT_TOL:
        raise MollifierError(f"custom mother must integrate to 1 (got {moms[0]!r})")
    if kind == "cosine-squared" and abs(moms[0] - 1.0) > 1e-12:
        raise QuadratureError("cosine-squared normalization check failed")
    if cdf0 is None:
        cdf0 = _tabulated_cdf(mother, radius)

    alphas = [1.0]
    for q in range(1, q_max + 1):
        # moment q of eta_{q-1}, via integration by parts on each derivative term
        m_q = sum(a * (-1) ** n * factorial(q) / factorial(q - n) * moms[q - n] for n, a in enumerate(alphas))
        alpha = -((-1) ** q) * m_q / factorial(q)
        if symmetric and q % 2:
            alpha = 0.0
        alphas.append(alpha)

    fam = MollifierFamily(kind, params, int(q_max), tuple(alphas), radius, int(max_derivative),
                          symmetric, compact, moms, mother, cdf0, mother_mp)
    for q in range(q_max + 1):
        for n in range(q + 1):
            val = sum(fam.alphas[k] * fam.derivative_moment(n, k) for k in range(q + 1))
            target = 1.0 if n == 0 else 0.0
            if abs(val - target) > MOMENT_TOL:
                raise QuadratureError(f"{fam.name}: moment {n} of eta_{q} is {val!r} (target {target})")
    return fam


# -- scaled mollifier -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Mollifier:
    """Order-q member of a family rescaled to width epsilon:
    ``eta_eps(x) = eta_q(x / eps) / eps``."""

    family: MollifierFamily
    q: int
    epsilon: float

    def __post_init__(self):
        if not 0 <= self.q <= self.family.q_max:
            raise MollifierError(f"order q={self.q} outside 0..{self.family.q_max} for {self.family.name}")
        if not 0 < self.epsilon <= 1:
            raise MollifierError(f"epsilon must lie in (0, 1], got {self.epsilon!r}")

    @property
    def id(self):
        return f"{self.family.name}:q={self.q}:eps={self.epsilon:g}"

    @property
    def radius(self):
        return self.family.radius * self.epsilon

    @property
    def max_k(self):
        return self.family.max_derivative - self.q

    @property
    def symmetric(self):
        return self.family.symmetric

    def with_epsilon(self, epsilon):
        return Mollifier(self.family, self.q, epsilon)

    def __call__(self, x):
        return self.derivative(x, 0)

    def derivative(self, x, k=1):
        if k > self.max_k:
            raise UnsupportedOrderError(f"{self.id}: derivative order {k} > {self.max_k}")
        e = self.epsilon
        return self.family.eta(np.asarray(x, dtype=float) / e, self.q, k) / e ** (k + 1)

    def cdf(self, x):
        """Integral of eta_eps from -inf to x."""
        return self.family.cdf(np.asarray(x, dtype=float) / self.epsilon, self.q)

    def product(self, x):
        """Tensor-product mollifier in N dimensions; ``x`` has shape (..., N)."""
        return np.prod(self(np.asarray(x, dtype=float)), axis=-1)


def mollifier(kind="gaussian", q=0, epsilon=1.0, params=None, q_max=None):
    """Shorthand: build a family (with q_max >= q) and return its scaled member."""
    fam = build_family(kind, params, max(q, q_max or 0))
    return Mollifier(fam, q, epsilon)


def eval_k(m, k, x):
    """k-th derivative of ``eta_eps`` at x."""
    return m.derivative(x, k)


def moments(m, n_max):
    """Moments of the scaled mollifier by adaptive quadrature on its support.

    High orders of the bump family reach |eta_q| ~ 1e8 near the support edges,
    where double precision cannot resolve moments at the 1e-9 level; those are
    integrated in 30-digit arithmetic (tanh-sinh) instead.
    """
    if n_max < 0:
        raise MollifierError("n_max must be >= 0")
    r, e = m.radius, m.epsilon
    probe = np.linspace(-r, r, 4001)
    weight = np.maximum(1.0, np.abs(probe / e)) ** n_max
    dynamic = float(np.max(weight * np.abs(m(probe)))) * e
    use_mp = dynamic > 1e3 and m.family._mother_mp is not None
    if use_mp:
        fam = m.family

        @lru_cache(maxsize=None)
        def eta(t):
            return fam.eta_mp(t, m.q)

        out = []
        with mpmath.workdps(30):
            for n in range(n_max + 1):
                val, err = mpmath.quad(lambda t: t**n * eta(t), [-fam.radius, 0, fam.radius], error=True)
                out.append(float(val) * e**n)
                if float(err) > 1e-10:
                    raise QuadratureError(f"{m.id}: quadrature for moment {n} failed (error estimate {err:.2e})")
        return out
    powers = np.arange(n_max + 1)
    val, err = integrate.quad_vec(lambda x: x**powers * m(x), -r, r, epsabs=1e-14, epsrel=1e-12, points=[0.0],
                                  norm="max")
    if not np.all(np.isfinite(val)) or err > 1e-10 * max(1.0, r**n_max):
        raise QuadratureError(f"{m.id}: quadrature for moments 0..{n_max} failed (error estimate {err:.2e})")
    return [float(v) for v in val]
