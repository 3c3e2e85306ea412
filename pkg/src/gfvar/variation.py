"""Functional derivatives along mollifier perturbations.

A :class:`Functional` is ``I[T] = int W(x) F(x, T, T', ...) dx + sum point terms``
where ``W`` is a regularized window (or 1).  Fields are :class:`GenFunction`
objects returning arrays of shape (M,) or (M, ncomp).

Two independent routes to the first variation are provided: finite
differences of ``I`` along ``T + lam * eta_eps(. - y)`` (:func:`gateaux`) and
the closed form obtained by integrating by parts against the window
(:func:`el_residual`).
"""

import warnings
from dataclasses import dataclass
from math import comb, factorial

import numpy as np
from scipy.linalg import expm

from ._quadrature import graded_breaks, panel_rule
from .generalized import mollifier_inner


class GateauxInstabilityWarning(UserWarning):
    """Central differences did not settle under halving of lambda."""


class PreconditionError(ValueError):
    pass


class SeriesTruncationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class VariationProbe:
    """Perturbation ``lam * eta_eps(x - y)``; lam defaults to eps * 1e-4."""

    y: float
    mollifier: object
    lam: float = None

    def __post_init__(self):
        eps = self.mollifier.epsilon
        if self.lam is None:
            object.__setattr__(self, "lam", eps * 1e-4)
        if not 0 < self.lam <= eps * 1e-3:
            raise ValueError(f"lambda must satisfy 0 < lambda <= eps*1e-3 (got {self.lam!r}, eps={eps!r})")

    def support(self):
        r = self.mollifier.radius
        return self.y - r, self.y + r

    def kernel(self, x, k=0):
        return self.mollifier.derivative(np.asarray(x, dtype=float) - self.y, k)


def as_columns(a, M):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return np.full((M, 1), float(a))
    if a.ndim == 1:
        return a.reshape(M, 1)
    return a


def jet(field, x, n):
    """Field and its first n derivatives at x, each of shape (M, ncomp)."""
    x = np.asarray(x, dtype=float)
    return [as_columns(field.derivative(k)(x), x.size) for k in range(n + 1)]


@dataclass(frozen=True)
class PointTerm:
    """``sign * g(T(x0))`` with gradient ``dg``; both act on the component vector."""

    x0: float
    g: object
    dg: object
    sign: float = 1.0


class Functional:
    """Integral functional with supplied partial derivatives.

    ``F(x, T, dT[, ddT])`` and ``grads(x, T, dT[, ddT])`` receive arrays of shape
    (M, ncomp); ``grads`` returns a list ``[dF/dT, dF/dT', ...]`` of such
    arrays.  ``hess`` (first-order functionals only) returns a dict with keys
    ``(0, 0), (0, 1), (1, 1)`` of (M, ncomp, ncomp) arrays.
    """

    def __init__(self, F, grads, window=None, order=1, ncomp=1, hess=None, point_terms=(), domain=None,
                 name="functional", check=True, rng_seed=0):
        if order not in (0, 1, 2):
            raise ValueError("only functionals up to second derivatives are supported")
        self.F = F
        self.grads = grads
        self.hess = hess
        self.window = window
        self.order = order
        self.ncomp = ncomp
        self.point_terms = tuple(point_terms)
        self.domain = domain
        self.name = name
        if check:
            self.self_check(np.random.default_rng(rng_seed))

    # -- bookkeeping ----------------------------------------------------
    def weight(self, x, k=0):
        if self.window is None:
            return np.ones_like(np.asarray(x, dtype=float)) if k == 0 else np.zeros_like(np.asarray(x, dtype=float))
        return self.window.derivative(x, k)

    def span(self):
        """Integration interval: window support intersected with the domain."""
        lo, hi = (-np.inf, np.inf) if self.window is None else self.window.support
        if self.domain is not None:
            lo, hi = max(lo, self.domain[0]), min(hi, self.domain[1])
        if not np.isfinite(lo) or not np.isfinite(hi):
            raise ValueError(f"{self.name}: unbounded integration range; give a window or a domain")
        return lo, hi

    def _clip(self, lo, hi):
        if self.window is not None:
            wlo, whi = self.window.support
            lo, hi = max(lo, wlo), min(hi, whi)
        if self.domain is not None:
            lo, hi = max(lo, self.domain[0]), min(hi, self.domain[1])
        return lo, hi

    def self_check(self, rng, n=6, tol=1e-6):
        x = rng.uniform(0.0, 1.0, n)
        if self.window is not None:
            a, b = self.window.support
            x = a + (b - a) * x
        args = [rng.normal(size=(n, self.ncomp)) for _ in range(self.order + 1)]
        grads = self.grads(x, *args)
        for k in range(self.order + 1):
            for c in range(self.ncomp):
                h = 1e-6 * np.maximum(1.0, np.abs(args[k][:, c]))
                up = [a.copy() for a in args]
                dn = [a.copy() for a in args]
                up[k][:, c] += h
                dn[k][:, c] -= h
                fd = (self.F(x, *up) - self.F(x, *dn)) / (2 * h)
                ref = np.asarray(grads[k])[:, c]
                scale = np.maximum(1.0, np.abs(fd))
                if np.max(np.abs(fd - ref) / scale) > tol:
                    raise ValueError(f"{self.name}: supplied dF/d(T^({k}))[{c}] disagrees with finite differences")

    # -- evaluation -----------------------------------------------------
    def integrand(self, field, x):
        return self.weight(x) * self.F(x, *jet(field, x, self.order))

    def value(self, field, coarse=0.05, order=16, breaks=None):
        """``I[field]``; ``breaks`` adds panel boundaries (kinks of sampled fields)."""
        lo, hi = self.span()
        r = self.window.mollifier.radius if self.window is not None else coarse
        edges = self.window.edges if self.window is not None else ()
        grid = graded_breaks(lo, hi, edges, 1.2 * r, r / 8, coarse)
        if breaks is not None:
            extra = np.asarray(breaks, dtype=float)
            grid = np.unique(np.concatenate([grid, extra[(extra > lo) & (extra < hi)]]))
        breaks = grid
        x, w = panel_rule(breaks, order)
        total = float(np.dot(w, self.integrand(field, x)))
        for pt in self.point_terms:
            total += pt.sign * float(pt.g(jet(field, np.array([pt.x0]), 0)[0][0]))
        return total


def _local_rule(I, probe, order=24, panels=8):
    lo, hi = I._clip(*probe.support())
    if hi <= lo:
        return np.empty(0), np.empty(0)
    pts = [np.linspace(lo, hi, panels + 1)]
    if I.window is not None:
        r = I.window.mollifier.radius
        for e in I.window.edges:
            pts.append(np.clip([e - r, e, e + r], lo, hi))
    breaks = np.unique(np.concatenate(pts))
    return panel_rule(breaks, order)


def _perturbed(I, field, x, probe, comp, lam):
    base = jet(field, x, I.order)
    bumps = [probe.kernel(x, k) for k in range(I.order + 1)]

    def shifted(s):
        out = [b.copy() for b in base]
        for k in range(I.order + 1):
            out[k][:, comp] += s * lam * bumps[k]
        return out

    return base, shifted


def _gateaux_once(I, field, probe, order, comp, lam):
    x, w = _local_rule(I, probe)
    total = 0.0
    if x.size:
        base, shifted = _perturbed(I, field, x, probe, comp, lam)
        W = I.weight(x)
        fp, fm = I.F(x, *shifted(1.0)), I.F(x, *shifted(-1.0))
        if order == 1:
            diff = (fp - fm) / (2 * lam)
        else:
            diff = (fp - 2 * I.F(x, *base) + fm) / lam**2
        total = float(np.dot(w, W * diff))
    for pt in I.point_terms:
        t0 = jet(field, np.array([pt.x0]), 0)[0][0]
        e = np.zeros_like(t0)
        e[comp] = lam * float(probe.kernel(pt.x0))
        if order == 1:
            d = (pt.g(t0 + e) - pt.g(t0 - e)) / (2 * lam)
        else:
            d = (pt.g(t0 + e) - 2 * pt.g(t0) + pt.g(t0 - e)) / lam**2
        total += pt.sign * float(d)
    return total


def gateaux(I, field, probe, order=1, component=0, check=True, rtol=1e-6, atol=1e-9):
    """First or second Gateaux derivative of ``I`` at ``field`` along
    ``eta_eps(. - y)`` in one component, by central differences in lambda.

    Away from the perturbation support the perturbed and unperturbed
    integrands coincide, so only the support is integrated; this removes the
    cancellation of two full-domain integrals.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    val = _gateaux_once(I, field, probe, order, component, probe.lam)
    if check:
        half = _gateaux_once(I, field, probe, order, component, probe.lam / 2)
        if abs(val - half) > max(rtol * abs(val), atol):
            warnings.warn(f"{I.name}: Gateaux derivative changed by {abs(val - half):.2e} when halving lambda",
                          GateauxInstabilityWarning, stacklevel=2)
    return val


def gateaux_mixed(I, field, probe1, comp1, probe2, comp2):
    """Mixed second derivative d^2 I / d lam1 d lam2 at zero for perturbations
    in two (possibly different) components and locations."""
    l1, l2 = probe1.lam, probe2.lam
    lo1, hi1 = probe1.support()
    lo2, hi2 = probe2.support()
    lo, hi = I._clip(min(lo1, lo2), max(hi1, hi2))
    pts = [np.linspace(lo1, hi1, 9), np.linspace(lo2, hi2, 9)]
    if I.window is not None:
        r = I.window.mollifier.radius
        pts += [np.array([e - r, e, e + r]) for e in I.window.edges]
    breaks = np.unique(np.clip(np.concatenate(pts), lo, hi))
    x, w = panel_rule(breaks, 24) if hi > lo else (np.empty(0), np.empty(0))
    base = jet(field, x, I.order)
    b1 = [probe1.kernel(x, k) for k in range(I.order + 1)]
    b2 = [probe2.kernel(x, k) for k in range(I.order + 1)]

    def at(s1, s2):
        args = [a.copy() for a in base]
        for k in range(I.order + 1):
            args[k][:, comp1] += s1 * l1 * b1[k]
            args[k][:, comp2] += s2 * l2 * b2[k]
        return I.F(x, *args)

    W = I.weight(x)
    total = float(np.dot(w, W * (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)))) / (4 * l1 * l2) if x.size else 0.0
    for pt in I.point_terms:
        t0 = jet(field, np.array([pt.x0]), 0)[0][0]
        e1 = np.zeros_like(t0)
        e2 = np.zeros_like(t0)
        e1[comp1] = l1 * float(probe1.kernel(pt.x0))
        e2[comp2] = l2 * float(probe2.kernel(pt.x0))
        g = pt.g
        total += pt.sign * float(g(t0 + e1 + e2) - g(t0 + e1 - e2) - g(t0 - e1 + e2) + g(t0 - e1 - e2)) / (4 * l1 * l2)
    return total


def _fd_derivative(fun, x, k, h):
    if k == 0:
        return fun(x)
    if k == 1:
        return (fun(x - 2 * h) - 8 * fun(x - h) + 8 * fun(x + h) - fun(x + 2 * h)) / (12 * h)
    if k == 2:
        return (-fun(x - 2 * h) + 16 * fun(x - h) - 30 * fun(x) + 16 * fun(x + h) - fun(x + 2 * h)) / (12 * h * h)
    raise ValueError("only derivatives up to order 2 are needed")


def euler_lagrange_density(I, field, x, component=0, h=None):
    """``sum_k (-1)^k d^k/dx^k [W * dF/dT^(k)]`` along the field (Leibniz-expanded,
    window derivatives from the exact identity, derivatives of the partials by
    five-point differences with step ``h``)."""
    x = np.asarray(x, dtype=float)
    scale = I.window.mollifier.epsilon if I.window is not None else 1.0
    h1 = h or 1e-3 * scale
    h2 = 10 * h1

    def partial(k):
        return lambda s: np.asarray(I.grads(s, *jet(field, s, I.order))[k])[:, component]

    out = np.zeros_like(x)
    for k in range(I.order + 1):
        G = partial(k)
        for j in range(k + 1):
            Wj = I.weight(x, j)
            if not np.any(Wj):
                continue
            hk = h1 if k - j == 1 else h2
            out = out + (-1) ** k * comb(k, j) * Wj * _fd_derivative(G, x, k - j, hk)
    return out


def el_residual(I, field, y, component=0, mode="tested", h=None):
    """Closed-form first variation at ``y``.

    ``mode="pointwise"`` returns the density (window-weighted Euler-Lagrange
    expression plus window-derivative boundary terms) at ``y``;
    ``mode="tested"`` integrates it against ``eta_eps(. - y)``, which is what the
    Gateaux derivative measures.  Point terms contribute
    ``sign * dg * eta_eps(x0 - y)`` in both modes.
    """
    if I.order > 2:
        raise ValueError("el_residual supports derivatives up to order 2")
    if I.window is None and mode == "tested":
        raise ValueError("tested mode needs a window (it fixes the perturbation mollifier)")
    m = I.window.mollifier if I.window is not None else None
    if mode == "pointwise":
        val = float(euler_lagrange_density(I, field, np.array([y]), component, h)[0])
    elif mode == "tested":
        probe = VariationProbe(y, m)
        x, w = _local_rule(I, probe)
        val = float(np.dot(w, euler_lagrange_density(I, field, x, component, h) * probe.kernel(x))) if x.size else 0.0
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for pt in I.point_terms:
        t0 = jet(field, np.array([pt.x0]), 0)[0][0]
        kern = float(m(pt.x0 - y)) if m is not None else 0.0
        val += pt.sign * float(np.asarray(pt.dg(t0))[component]) * kern
    return val


# -- second order --------------------------------------------------------

@dataclass(frozen=True)
class LegendreClebsch:
    value: float
    dominant_sign: int
    exact: bool


def _hessian_at(I, field, y, comp, h=1e-5):
    x = np.array([y])
    args = jet(field, x, 1)
    if I.hess is not None:
        H = I.hess(x, *args)
        return {key: float(np.asarray(v)[0, comp, comp]) for key, v in H.items()}
    out = {}
    for a, b in ((0, 0), (0, 1), (1, 1)):
        up = [t.copy() for t in args]
        dn = [t.copy() for t in args]
        up[b][:, comp] += h
        dn[b][:, comp] -= h
        out[(a, b)] = float((np.asarray(I.grads(x, *up)[a]) - np.asarray(I.grads(x, *dn)[a]))[0, comp] / (2 * h))
    return out


def legendre_clebsch(I, field, y, component=0, exact=False):
    """Two-scale expansion of the second variation at ``y``.

    Default: ``[F_TT - d/dx F_TT'] eta(0)/eps - F_T'T' eta''(0)/eps^3`` (the
    self-overlaps of the perturbation replaced by their point values).  With
    ``exact=True`` the overlaps ``int eta_eps^2`` and ``int (eta_eps')^2`` are
    integrated instead, which is what a Gateaux second difference measures.
    """
    if I.order != 1:
        raise ValueError("legendre_clebsch needs a first-order functional")
    m = I.window.mollifier
    fam, e = m.family, m.epsilon
    eta0 = float(fam.eta(np.array([0.0]), m.q)[0])
    d1 = float(fam.eta(np.array([0.0]), m.q, 1)[0])
    d2 = float(fam.eta(np.array([0.0]), m.q, 2)[0])
    if abs(d1) > 1e-10 * max(1.0, abs(eta0)):
        raise PreconditionError(f"{m.id}: eta'(0) = {d1:.3g} is not zero")
    H = _hessian_at(I, field, y, component)

    def mixed(s):
        return np.array([_hessian_at(I, field, float(t), component)[(0, 1)] for t in np.atleast_1d(s)])

    dmixed = float(_fd_derivative(mixed, np.array([y]), 1, 1e-3 * e)[0])
    W = float(I.weight(np.array([y]))[0])
    a, b = H[(0, 0)] - dmixed, H[(1, 1)]
    if exact:
        value = a * mollifier_inner(m, m, y, y) + b * mollifier_inner(m, m, y, y, 1, 1)
    else:
        value = a * eta0 / e - b * d2 / e**3
    lead = -b * d2 if b != 0 else a * eta0
    return LegendreClebsch(W * value, int(np.sign(lead)), exact)


# -- Lie-group variation ----------------------------------------------------

def lie_coefficient(f, tau, order=30, tol=1e-13):
    """``C = sum_n (-1)^n/(n+1)! ad_f^n(tau)`` with a remainder bound check."""
    f = np.asarray(f)
    tau = np.asarray(tau)
    if f.shape != tau.shape or f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ValueError("f and tau must be square matrices of equal size")
    term = tau.astype(np.result_type(f, tau, float))
    C = term.copy()
    for n in range(1, order + 1):
        term = f @ term - term @ f
        C = C + (-1) ** n / factorial(n + 1) * term
    nf, nt = np.linalg.norm(f, 2), np.linalg.norm(tau, 2)
    bound = sum((2 * nf) ** n / factorial(n + 1) for n in range(order + 1, order + 60)) * nt
    if bound > tol * max(np.linalg.norm(C, 2), tol):
        raise SeriesTruncationError(f"series truncated at order {order} may be off by up to {bound:.3g}"
                                    f" (||f|| = {nf:.3g}); raise the order or reduce ||f||")
    return C


def lie_exp_variation(f, tau, probe, x, order=30):
    """First variation of ``exp(f)`` along ``eta_eps(x - y) * tau``:
    ``eta_eps(x - y) * expm(f) @ C``."""
    return float(probe.kernel(x)) * (expm(np.asarray(f)) @ lie_coefficient(f, tau, order))
