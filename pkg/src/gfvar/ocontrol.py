"""Optimal-control actions over regularized windows.

The action is ``S = h_f(q(t_f)) - h_i(q(t_i)) + int W (p.(qdot - f) + f0) dt``.
States live in R^n, controls in R^m (m may be 0).  Complex problems are
handled by the caller through realification.

Array conventions: ``q`` (M, n), ``u`` (M, m), ``t`` (M,);
``f_q[..., mu, nu] = d f^mu / d q^nu`` and ``f_u[..., mu, i] = d f^mu / d u^i``.
"""

import csv
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from ._quadrature import panel_rule
from .generalized import GenFunction
from .variation import Functional, PointTerm


class OCError(ValueError):
    pass


class InstabilityError(ArithmeticError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


def _zeros_like_rows(M, *shape):
    return np.zeros((M,) + shape)


def _fd_jac(fun, x, h=1e-6):
    """Jacobian of a row-wise map (M, a) -> (M, ...) w.r.t. the last axis of x."""
    cols = []
    for j in range(x.shape[1]):
        e = np.zeros_like(x)
        step = h * np.maximum(1.0, np.abs(x[:, j]))
        e[:, j] = step
        cols.append((fun(x + e) - fun(x - e)) / (2 * step.reshape((-1,) + (1,) * (fun(x).ndim - 1))))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True, eq=False)
class BoundaryCost:
    g: Callable
    grad: Callable
    hess: Optional[Callable] = None

    def hessian(self, q):
        if self.hess is not None:
            return np.asarray(self.hess(q), dtype=float)
        q = np.asarray(q, dtype=float)
        n = q.size
        H = np.zeros((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1e-6
            H[:, j] = (np.asarray(self.grad(q + e)) - np.asarray(self.grad(q - e))) / 2e-6
        return H


class OCProblem:
    """Dynamics ``f``, running cost ``f0``, boundary costs ``h_i``, ``h_f``.

    Second partials default to finite differences of the supplied first
    partials.  Every supplied partial is compared with finite differences at
    construction.
    """

    def __init__(self, n, m, f, f_q, f_u=None, f0=None, f0_q=None, f0_u=None,
                 f_qq=None, f_qu=None, f_uu=None, f0_qq=None, f0_qu=None, f0_uu=None,
                 h_i=None, h_f=None, name="ocp", check=True, rng_seed=1):
        self.n, self.m, self.name = n, m, name
        self.f, self._f_q = f, f_q
        self._f_u = f_u
        self._f0, self._f0_q, self._f0_u = f0, f0_q, f0_u
        self._second = dict(f_qq=f_qq, f_qu=f_qu, f_uu=f_uu, f0_qq=f0_qq, f0_qu=f0_qu, f0_uu=f0_uu)
        self.h_i, self.h_f = h_i, h_f
        if (f0 is None) != (f0_q is None):
            raise OCError("f0 and f0_q must be given together")
        if m and f_u is None:
            raise OCError("problems with controls need f_u")
        if check:
            self.self_check(np.random.default_rng(rng_seed))

    # first partials
    def f_q(self, q, u, t):
        return np.asarray(self._f_q(q, u, t), dtype=float)

    def f_u(self, q, u, t):
        if self.m == 0:
            return _zeros_like_rows(len(t), self.n, 0)
        return np.asarray(self._f_u(q, u, t), dtype=float)

    def f0(self, q, u, t):
        return np.zeros(len(t)) if self._f0 is None else np.asarray(self._f0(q, u, t), dtype=float)

    def f0_q(self, q, u, t):
        return np.zeros((len(t), self.n)) if self._f0_q is None else np.asarray(self._f0_q(q, u, t), dtype=float)

    def f0_u(self, q, u, t):
        if self.m == 0 or self._f0_u is None:
            return np.zeros((len(t), self.m))
        return np.asarray(self._f0_u(q, u, t), dtype=float)

    # second partials (supplied or differenced)
    def second(self, key, q, u, t):
        fn = self._second[key]
        if fn is not None:
            return np.asarray(fn(q, u, t), dtype=float)
        first = {"f_qq": (self.f_q, "q"), "f_qu": (self.f_q, "u"), "f_uu": (self.f_u, "u"),
                 "f0_qq": (self.f0_q, "q"), "f0_qu": (self.f0_q, "u"), "f0_uu": (self.f0_u, "u")}[key]
        fun, var = first
        if var == "q":
            return _fd_jac(lambda z: fun(z, u, t), q)
        if self.m == 0:
            return np.zeros(fun(q, u, t).shape + (0,))
        return _fd_jac(lambda z: fun(q, z, t), u)

    def self_check(self, rng, M=5, tol=1e-6):
        q = rng.normal(size=(M, self.n))
        u = rng.normal(size=(M, self.m))
        t = rng.uniform(0, 1, M)
        pairs = [("f_q", self.f, self.f_q, "q"), ("f0_q", self.f0, self.f0_q, "q")]
        if self.m:
            pairs += [("f_u", self.f, self.f_u, "u"), ("f0_u", self.f0, self.f0_u, "u")]
        for name, fun, jac, var in pairs:
            if var == "q":
                fd = _fd_jac(lambda z: np.asarray(fun(z, u, t), dtype=float), q)
            else:
                fd = _fd_jac(lambda z: np.asarray(fun(q, z, t), dtype=float), u)
            ref = jac(q, u, t)
            if np.max(np.abs(fd - ref) / np.maximum(1.0, np.abs(fd))) > tol:
                raise OCError(f"{self.name}: supplied {name} disagrees with finite differences")
        for key, fn in self._second.items():
            if fn is None:
                continue
            supplied = np.asarray(fn(q, u, t), dtype=float)
            self._second[key] = None
            fd = self.second(key, q, u, t)
            self._second[key] = fn
            if np.max(np.abs(fd - supplied) / np.maximum(1.0, np.abs(fd))) > 1e-5:
                raise OCError(f"{self.name}: supplied {key} disagrees with finite differences")
        for label, h in (("h_i", self.h_i), ("h_f", self.h_f)):
            if h is None:
                continue
            z = rng.normal(size=self.n)
            fd = np.array([(h.g(z + e) - h.g(z - e)) / 2e-6 for e in 1e-6 * np.eye(self.n)])
            if np.max(np.abs(fd - np.asarray(h.grad(z)))) > tol * max(1.0, np.max(np.abs(fd))):
                raise OCError(f"{self.name}: gradient of {label} disagrees with finite differences")


# -- trajectories ------------------------------------------------------------

def _rows(a, M, width):
    a = np.asarray(a, dtype=float)
    if width == 0:
        return np.zeros((M, 0))
    return a.reshape(M, width)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Evaluable (q, p, u) with q-derivative; optionally backed by grid samples.

    Sampled trajectories follow the discretization used by the path integral:
    ``q`` on N nodes (linear spline), ``p`` and ``u`` with N-1 values
    (piecewise constant on [t_n, t_{n+1})).
    """

    n: int
    m: int
    q: Callable
    qdot: Callable
    p: Callable
    u: Callable
    t_span: tuple
    pdot: Optional[Callable] = None
    grid: Optional[np.ndarray] = None
    samples: Optional[dict] = None
    epsilon: Optional[float] = None
    mollifier_id: Optional[str] = None
    domain: Optional[tuple] = None
    info: dict = dc_field(default_factory=dict)

    def q_at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return _rows(self.q(t), t.size, self.n)

    def qdot_at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return _rows(self.qdot(t), t.size, self.n)

    def p_at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return _rows(self.p(t), t.size, self.n)

    def u_at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return _rows(self.u(t), t.size, self.m)

    def pdot_at(self, t, h=1e-5):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.pdot is not None:
            return _rows(self.pdot(t), t.size, self.n)
        return (self.p_at(t - 2 * h) - 8 * self.p_at(t - h) + 8 * self.p_at(t + h) - self.p_at(t + 2 * h)) / (12 * h)

    def as_field(self):
        """z = (q, p, u) as a GenFunction; z' carries qdot and pdot (u' is not
        needed by the action and is reported as 0)."""
        def z(t):
            return np.concatenate([self.q_at(t), self.p_at(t), self.u_at(t)], axis=1)

        def dz(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            return np.concatenate([self.qdot_at(t), self.pdot_at(t), np.zeros((t.size, self.m))], axis=1)

        return GenFunction(z, [dz], provenance="trajectory")

    @classmethod
    def from_functions(cls, n, m, q, qdot, p, u=None, t_span=(0.0, 1.0), pdot=None, **kw):
        u = u if u is not None else (lambda t: np.zeros((np.size(t), 0)))
        return cls(n, m, q, qdot, p, u, tuple(t_span), pdot=pdot, **kw)

    @classmethod
    def from_samples(cls, t, q, p, u=None, mollifier=None):
        """Grid samples; with a mollifier, q is the regularized spline and p, u
        are ``sum_n v_n dt eta_eps(t - t_n)``."""
        t = np.asarray(t, dtype=float)
        N = t.size
        if N < 2 or np.any(np.diff(t) <= 0):
            raise OCError("time grid must be strictly increasing with at least two nodes")
        dt = np.diff(t)
        if not np.allclose(dt, dt[0], rtol=1e-10, atol=0):
            raise OCError("time grid must be uniform")
        q = np.asarray(q, dtype=float).reshape(N, -1)
        n = q.shape[1]
        p = np.zeros((N - 1, n)) if p is None or not np.size(p) else np.asarray(p, dtype=float)
        if p.shape[0] != N - 1 or p.size != (N - 1) * n:
            raise OCError(f"p needs N-1 = {N - 1} samples of dimension {n}, got shape {p.shape}")
        p = p.reshape(N - 1, n)
        u = np.zeros((N - 1, 0)) if u is None else np.asarray(u, dtype=float)
        if u.shape[0] != N - 1:
            raise OCError(f"u needs N-1 = {N - 1} samples, got shape {u.shape}")
        u = u.reshape(N - 1, -1)
        m = u.shape[1]
        samples = dict(q=q, p=p, u=u)

        def cell(s):
            return np.clip(np.searchsorted(t, s, side="right") - 1, 0, N - 2)

        def q_lin(s):
            s = np.atleast_1d(s)
            return np.stack([np.interp(s, t, q[:, j]) for j in range(n)], axis=-1)

        def qd_lin(s):
            s = np.atleast_1d(s)
            return ((q[1:] - q[:-1]) / dt[:, None])[cell(s)]

        def pc(vals):
            return lambda s: vals[cell(np.atleast_1d(s))]

        if mollifier is None:
            return cls(n, m, q_lin, qd_lin, pc(p), pc(u), (t[0], t[-1]), pdot=lambda s: np.zeros((np.size(s), n)),
                       grid=t, samples=samples)
        h = dt[0]

        def spike_sum(vals, k):
            def g(s):
                s = np.atleast_1d(np.asarray(s, dtype=float))
                K = mollifier.derivative(s[:, None] - t[None, :-1], k) * h
                return K @ vals
            return g

        R = mollifier.radius

        def mollified(k):
            # panels split at the spline nodes so the kinks are integrated exactly
            def g(s):
                s = np.atleast_1d(np.asarray(s, dtype=float))
                out = np.empty((s.size, n))
                for i, si in enumerate(s):
                    inner = t[(t > si - R) & (t < si + R)]
                    x, wt = panel_rule(np.concatenate([[si - R], inner, [si + R]]), 24)
                    out[i] = (wt * mollifier.derivative(si - x, k)) @ q_lin(x)
                return out
            return g

        qm, qdm = mollified(0), mollified(1)

        return cls(n, m, qm, qdm, spike_sum(p, 0), spike_sum(u, 0), (t[0], t[-1]), pdot=spike_sum(p, 1), grid=t,
                   samples=samples, epsilon=mollifier.epsilon, mollifier_id=mollifier.id)

    def to_csv(self, path, t=None):
        if t is None:
            t = self.grid if self.grid is not None else np.linspace(*(self.domain or self.t_span), 201)
        rows = np.concatenate([np.asarray(t)[:, None], self.q_at(t), self.p_at(t), self.u_at(t)], axis=1)
        header = ["t"] + [f"q{j}" for j in range(self.n)] + [f"p{j}" for j in range(self.n)] + \
                 [f"u{j}" for j in range(self.m)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) for v in r])


def _check_dims(P, tr):
    if tr.n != P.n or tr.m != P.m:
        raise OCError(f"trajectory has (n, m) = ({tr.n}, {tr.m}) but the problem has ({P.n}, {P.m})")


# -- the action --------------------------------------------------------------

def oc_functional(P, w, domain=None, check=False):
    """The OC action as a :class:`Functional` over z = (q, p, u)."""
    n, m = P.n, P.m

    def split(z):
        return z[:, :n], z[:, n:2 * n], z[:, 2 * n:2 * n + m]

    def F(x, z, dz):
        q, p, u = split(z)
        return np.einsum("ij,ij->i", p, dz[:, :n] - P.f(q, u, x)) + P.f0(q, u, x)

    def grads(x, z, dz):
        q, p, u = split(z)
        gq = P.f0_q(q, u, x) - np.einsum("imn,im->in", P.f_q(q, u, x), p)
        gp = dz[:, :n] - P.f(q, u, x)
        gu = P.f0_u(q, u, x) - np.einsum("imk,im->ik", P.f_u(q, u, x), p)
        g1 = np.zeros_like(z)
        g1[:, :n] = p
        return [np.concatenate([gq, gp, gu], axis=1), g1]

    terms = []
    a, b = w.edges
    for x0, cost, sign in ((b, P.h_f, 1.0), (a, P.h_i, -1.0)):
        if cost is None:
            continue
        terms.append(PointTerm(x0, lambda z, c=cost: float(c.g(z[:n])),
                               lambda z, c=cost: np.concatenate([np.asarray(c.grad(z[:n]), float), np.zeros(n + m)]),
                               sign))
    return Functional(F, grads, w, order=1, ncomp=2 * n + m, point_terms=terms, domain=domain, name=P.name,
                      check=check)


def oc_action(P, tr, w):
    _check_dims(P, tr)
    I = oc_functional(P, w, tr.domain)
    return I.value(tr.as_field(), breaks=tr.grid)


# -- first variation ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PMPResiduals:
    state_res: Callable
    adjoint_res: Callable
    control_res: Callable
    bc_i: np.ndarray
    bc_f: np.ndarray
    variation: Callable

    def max_interior(self, t):
        return max(float(np.max(np.abs(r(t)))) if r(t).size else 0.0
                   for r in (self.state_res, self.adjoint_res, self.control_res))


def pmp_residuals(P, tr, w=None):
    """Pointwise weak-PMP residuals and the window-tested first variation
    assembled from them.

    ``variation(block, index, tau)`` returns dS/dz(tau) for block in
    {"q", "p", "u"}; it needs a window ``w`` and is the quantity the Gateaux
    derivative along ``eta_eps(. - tau)`` measures.
    """
    _check_dims(P, tr)

    def parts(t):
        q, p, u = tr.q_at(t), tr.p_at(t), tr.u_at(t)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return q, p, u, t

    def state_res(t):
        q, p, u, t = parts(t)
        return tr.qdot_at(t) - P.f(q, u, t)

    def adjoint_rhs(t):
        q, p, u, t = parts(t)
        return P.f0_q(q, u, t) - np.einsum("imn,im->in", P.f_q(q, u, t), p)

    def adjoint_res(t):
        return tr.pdot_at(t) - adjoint_rhs(t)

    def control_res(t):
        q, p, u, t = parts(t)
        return P.f0_u(q, u, t) - np.einsum("imk,im->ik", P.f_u(q, u, t), p)

    ti, tf = tr.t_span if w is None else w.edges
    qi, qf = tr.q_at(ti)[0], tr.q_at(tf)[0]
    gi = np.zeros(P.n) if P.h_i is None else np.asarray(P.h_i.grad(qi), float)
    gf = np.zeros(P.n) if P.h_f is None else np.asarray(P.h_f.grad(qf), float)
    bc_i = tr.p_at(ti)[0] + gi
    bc_f = tr.p_at(tf)[0] + gf

    def variation(block, index, tau):
        if w is None:
            raise OCError("the tested variation needs a window")
        m = w.mollifier
        lo, hi = w.support
        if tr.domain is not None:
            lo, hi = max(lo, tr.domain[0]), min(hi, tr.domain[1])
        a, b = max(lo, tau - m.radius), min(hi, tau + m.radius)
        val = 0.0
        if b > a:
            brk = np.unique(np.concatenate([np.linspace(a, b, 9),
                                            np.clip([e + s * m.radius for e in w.edges for s in (-1, 0, 1)], a, b)]))
            x, wt = panel_rule(brk, 24)
            W = w(x)
            if block == "p":
                dens = W * state_res(x)[:, index]
            elif block == "u":
                dens = W * control_res(x)[:, index]
            elif block == "q":
                dens = -W * adjoint_res(x)[:, index] - w.derivative(x, 1) * tr.p_at(x)[:, index]
            else:
                raise ValueError(f"unknown block {block!r}")
            val = float(np.dot(wt, dens * m(x - tau)))
        if block == "q":
            ea, eb = w.edges
            val += float(gf[index] * m(eb - tau)) - float(gi[index] * m(ea - tau))
        return val

    return PMPResiduals(state_res, adjoint_res, control_res, bc_i, bc_f, variation)


def integrate_adjoint(P, tr, p_final, t=None, blowup=1e12):
    """Backward RK4 for ``pdot = f0_q - f_q^T p`` on a grid ending at t_f."""
    t = np.asarray(tr.grid if t is None else t, dtype=float)
    p = np.empty((t.size, P.n), dtype=np.result_type(np.asarray(p_final), float))
    p[-1] = p_final

    def rhs(s, y):
        s = np.array([s])
        q, u = tr.q_at(s), tr.u_at(s)
        return P.f0_q(q, u, s)[0] - P.f_q(q, u, s)[0].T @ y

    for k in range(t.size - 1, 0, -1):
        h = t[k - 1] - t[k]
        y = p[k]
        k1 = rhs(t[k], y)
        k2 = rhs(t[k] + h / 2, y + h / 2 * k1)
        k3 = rhs(t[k] + h / 2, y + h / 2 * k2)
        k4 = rhs(t[k - 1], y + h * k3)
        p[k - 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(p[k - 1])) or np.linalg.norm(p[k - 1]) > blowup:
            raise InstabilityError(f"adjoint norm exceeded {blowup:g} at t = {t[k - 1]:.6g}")
    return t, p


# -- second variation ---------------------------------------------------------

def second_variation_blocks(P, tr, t1, t2, w, associated=False):
    """All second-variation blocks at the probe pair (t1, t2).

    Keys ``qq, uq, up, uu, pq, pp``; the first letter is the field varied at
    t1.  By default the kernel integrals ``int W (...) eta(t - t1) eta(t - t2)``
    are evaluated exactly (the pq block then contains the ``eta'`` term from
    qdot); ``associated=True`` returns the leading pointwise form with
    ``eta_eps(t1 - t2)`` and the coefficients taken at t1.
    """
    _check_dims(P, tr)
    n, m = P.n, P.m
    mol = w.mollifier
    lo, hi = w.support
    for s in (t1, t2):
        if not lo <= s <= hi:
            raise OCError(f"probe time {s} outside the window support [{lo}, {hi}]")
    out = {"pp": np.zeros((n, n))}

    def coeffs(x):
        q, p, u = tr.q_at(x), tr.p_at(x), tr.u_at(x)
        c = {
            "qq": P.second("f0_qq", q, u, x) - np.einsum("is,isab->iab", p, P.second("f_qq", q, u, x)),
            "uq": np.swapaxes(P.second("f0_qu", q, u, x) - np.einsum("is,isab->iab", p, P.second("f_qu", q, u, x)),
                              1, 2),
            "uu": P.second("f0_uu", q, u, x) - np.einsum("is,isab->iab", p, P.second("f_uu", q, u, x)),
            "up": -np.swapaxes(P.f_u(q, u, x), 1, 2),
            "pq": -P.f_q(q, u, x),
        }
        return c

    if associated:
        x = np.array([t1])
        c = coeffs(x)
        k = float(w(x)[0] * mol(t1 - t2))
        for key, v in c.items():
            out[key] = v[0] * k
    else:
        a, b = max(lo, t1 - mol.radius, t2 - mol.radius), min(hi, t1 + mol.radius, t2 + mol.radius)
        if tr.domain is not None:
            a, b = max(a, tr.domain[0]), min(b, tr.domain[1])
        if b <= a:
            for key, shape in (("qq", (n, n)), ("uq", (m, n)), ("uu", (m, m)), ("up", (m, n)), ("pq", (n, n))):
                out[key] = np.zeros(shape)
        else:
            brk = np.unique(np.concatenate([np.linspace(a, b, 9),
                                            np.clip([e + s * mol.radius for e in w.edges for s in (-1, 0, 1)], a, b)]))
            x, wt = panel_rule(brk, 24)
            kern = wt * w(x) * mol(x - t1) * mol(x - t2)
            c = coeffs(x)
            for key, v in c.items():
                out[key] = np.tensordot(kern, v, axes=(0, 0))
            out["pq"] = out["pq"] + np.eye(n) * float(np.dot(wt * w(x) * mol(x - t1), mol.derivative(x - t2, 1)))
    a_, b_ = w.edges
    for x0, cost, sign in ((b_, P.h_f, 1.0), (a_, P.h_i, -1.0)):
        if cost is not None:
            out["qq"] = out["qq"] + sign * cost.hessian(tr.q_at(x0)[0]) * float(mol(x0 - t1) * mol(x0 - t2))
    return out


# -- extremals ---------------------------------------------------------------

def window_domain(w, floor=1e-3):
    """Interval where the window is at least ``floor``."""
    a, b = w.edges
    r = w.mollifier.radius
    g = lambda s: float(w(np.array([s]))[0]) - floor
    lo = brentq(g, a - r, min(a + r, 0.5 * (a + b)), xtol=1e-14)
    hi = brentq(g, max(b - r, 0.5 * (a + b)), b + r, xtol=1e-14)
    return lo, hi


def _solve_ivp_two_sided(rhs, t0, y0, lo, hi, rtol, atol):
    sols = []
    for end in (hi, lo):
        if abs(end - t0) < 1e-15:
            sols.append(None)
            continue
        s = solve_ivp(rhs, (t0, end), y0, method="DOP853", rtol=rtol, atol=atol, dense_output=True)
        if not s.success:
            raise ConvergenceError(f"integration toward t = {end:.6g} failed: {s.message}")
        sols.append(s.sol)
    fwd, bwd = sols

    def y(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, len(y0)))
        right = t >= t0
        if np.any(right):
            out[right] = (fwd(t[right]) if fwd is not None else np.repeat(np.asarray(y0)[:, None], right.sum(), 1)).T
        if np.any(~right):
            out[~right] = (bwd(t[~right]) if bwd is not None else np.repeat(np.asarray(y0)[:, None], (~right).sum(), 1)).T
        return out

    return y


def _newton_rows(res, jac, v0, tol=1e-13, maxit=30):
    v = v0.copy()
    for _ in range(maxit):
        r = res(v)
        if np.max(np.abs(r)) <= tol * max(1.0, np.max(np.abs(v))):
            return v
        J = jac(v)
        v = v - np.linalg.solve(J, r[..., None])[..., 0]
    r = res(v)
    if np.max(np.abs(r)) > 1e-9 * max(1.0, np.max(np.abs(v))):
        raise ConvergenceError("pointwise Newton solve did not converge", float(np.max(np.abs(r))))
    return v


def extremize(P, anchor, w, floor=1e-3, rtol=1e-12, atol=1e-12, max_iter=50):
    """Extremal through an interior anchor.

    For an :class:`OCProblem`, ``anchor = (t_a, q_a, p_a)``; the state equation
    and the windowed adjoint equation ``(W p)' = W (f0_q - f_q^T p)`` (plus
    boundary-cost sources) are integrated both ways from ``t_a`` over the
    interval where ``W >= floor``; controls are eliminated by a Newton solve of
    ``f0_u = f_u^T p``.  For a first-order :class:`Functional`,
    ``anchor = (t_a, T_a, dT_a)`` and the windowed Euler-Lagrange equation is
    integrated the same way.
    """
    if isinstance(P, Functional):
        return _extremize_functional(P, anchor, w, floor, rtol, atol)
    return _extremize_oc(P, anchor, w, floor, rtol, atol, max_iter)


def _control(P, q, p, t, u0):
    if P.m == 0:
        return np.zeros((q.shape[0], 0))

    def res(u):
        return P.f0_u(q, u, t) - np.einsum("imk,im->ik", P.f_u(q, u, t), p)

    def jac(u):
        return P.second("f0_uu", q, u, t) - np.einsum("is,isab->iab", p, P.second("f_uu", q, u, t))

    return _newton_rows(res, jac, u0)


def _extremize_oc(P, anchor, w, floor, rtol, atol, max_iter):
    t_a, q_a, p_a = anchor
    n = P.n
    q_a = np.asarray(q_a, dtype=float).reshape(n)
    p_a = np.asarray(p_a, dtype=float).reshape(n)
    lo, hi = window_domain(w, floor)
    if not lo < t_a < hi:
        raise OCError(f"anchor {t_a} lies outside the extremal domain ({lo:.6g}, {hi:.6g})")
    mol = w.mollifier
    ea, eb = w.edges
    W_a = float(w(np.array([t_a]))[0])
    src = {"f": np.zeros(n), "i": np.zeros(n)}
    u_guess = {"u": np.zeros((1, P.m))}

    def unpack(t, y):
        s = np.array([t])
        q = y[:n][None, :]
        Wt = float(w(s)[0])
        p = y[n:][None, :] / Wt
        u = _control(P, q, p, s, u_guess["u"])
        u_guess["u"] = u
        return s, q, p, u, Wt

    def rhs(t, y):
        s, q, p, u, Wt = unpack(t, y)
        qd = P.f(q, u, s)[0]
        wd = Wt * P.f0_q(q, u, s)[0] - P.f_q(q, u, s)[0].T @ y[n:]
        wd = wd + src["f"] * float(mol(t - eb)) - src["i"] * float(mol(t - ea))
        return np.concatenate([qd, wd])

    y0 = np.concatenate([q_a, W_a * p_a])
    has_src = P.h_f is not None or P.h_i is not None
    for it in range(max_iter if has_src else 1):
        Y = _solve_ivp_two_sided(rhs, t_a, y0, lo, hi, rtol, atol)
        if not has_src:
            break
        new_f = np.zeros(n) if P.h_f is None else np.asarray(P.h_f.grad(Y(min(eb, hi))[0, :n]), float)
        new_i = np.zeros(n) if P.h_i is None else np.asarray(P.h_i.grad(Y(max(ea, lo))[0, :n]), float)
        change = max(np.max(np.abs(new_f - src["f"])), np.max(np.abs(new_i - src["i"])))
        src["f"], src["i"] = new_f, new_i
        if change < 1e-13:
            break
    else:
        raise ConvergenceError(f"boundary-cost fixed point did not settle after {max_iter} sweeps", change)

    def q(t):
        return Y(t)[:, :n]

    def p(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return Y(t)[:, n:] / w(t)[:, None]

    def u(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if P.m == 0:
            return np.zeros((t.size, 0))
        return _control(P, q(t), p(t), t, np.zeros((t.size, P.m)))

    def qdot(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return P.f(q(t), u(t), t)

    def pdot(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        qq, pp, uu, W = q(t), p(t), u(t), w(t)[:, None]
        wd = W * P.f0_q(qq, uu, t) - np.einsum("imn,im->in", P.f_q(qq, uu, t), W * pp)
        wd = wd + np.outer(mol(t - eb), src["f"]) - np.outer(mol(t - ea), src["i"])
        return (wd - w.derivative(t, 1)[:, None] * pp) / W

    tr = Trajectory.from_functions(n, P.m, q, qdot, p, u, w.edges, pdot=pdot, epsilon=mol.epsilon,
                                   mollifier_id=mol.id, domain=(lo, hi), info={"kind": "oc", "anchor": t_a})
    chk = np.linspace(lo, hi, 201)[1:-1]
    res = pmp_residuals(P, tr, w)
    resid = max(float(np.max(np.abs(res.state_res(chk)))),
                float(np.max(np.abs(res.control_res(chk)))) if P.m else 0.0)
    tr.info["residual"] = resid
    if resid > 1e-8:
        raise ConvergenceError(f"extremal residual {resid:.3g} above 1e-8", resid)
    return tr


def _extremize_functional(I, anchor, w, floor, rtol, atol):
    if I.order != 1:
        raise OCError("extremize handles first-order functionals")
    t_a, T_a, dT_a = anchor
    nc = I.ncomp
    T_a = np.asarray(T_a, dtype=float).reshape(nc)
    dT_a = np.asarray(dT_a, dtype=float).reshape(nc)
    lo, hi = window_domain(w, floor)
    if not lo < t_a < hi:
        raise OCError(f"anchor {t_a} lies outside the extremal domain ({lo:.6g}, {hi:.6g})")
    s_a = np.array([t_a])

    def G(s, T, v):
        return I.grads(s, T, v)

    def hess11(s, T, v):
        if I.hess is not None:
            return np.asarray(I.hess(s, T, v)[(1, 1)])
        return _fd_jac(lambda z: np.asarray(G(s, T, z)[1]), v)

    first_order = np.max(np.abs(hess11(s_a, T_a[None], dT_a[None]))) < 1e-12

    if not first_order:
        # state (T, w = W dF/dT'); T' from dF/dT'(T, T') = w / W
        def velocity(s, T, wv, v0):
            Wt = w(s)[:, None]
            return _newton_rows(lambda v: np.asarray(G(s, T, v)[1]) - wv / Wt,
                                lambda v: hess11(s, T, v), v0)

        def rhs(t, y):
            s = np.array([t])
            T, wv = y[None, :nc], y[None, nc:]
            v = velocity(s, T, wv, dT_a[None])
            return np.concatenate([v[0], float(w(s)[0]) * np.asarray(G(s, T, v)[0])[0]])

        W_a = float(w(s_a)[0])
        y0 = np.concatenate([T_a, W_a * np.asarray(G(s_a, T_a[None], dT_a[None])[1])[0]])
        Y = _solve_ivp_two_sided(rhs, t_a, y0, lo, hi, rtol, atol)

        def T(t):
            return Y(t)[:, :nc]

        def dT(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            Yt = Y(t)
            return velocity(t, Yt[:, :nc], Yt[:, nc:], np.zeros((t.size, nc)))
    else:
        # dF/dT' depends on T only: W (G0 - dG1/dT T') - W' G1 = 0, linear in T'
        def velocity(s, T):
            def res(v):
                g0, g1 = (np.asarray(a) for a in G(s, T, v))
                J1 = _fd_jac(lambda z: np.asarray(G(s, z, v)[1]), T)
                return w(s)[:, None] * (g0 - np.einsum("iab,ib->ia", J1, v)) - w.derivative(s, 1)[:, None] * g1

            v0 = np.zeros_like(T)
            J = _fd_jac(res, v0, h=1e-3)
            return v0 - np.linalg.solve(J, res(v0)[..., None])[..., 0]

        def rhs(t, y):
            return velocity(np.array([t]), y[None, :])[0]

        Y = _solve_ivp_two_sided(rhs, t_a, T_a, lo, hi, rtol, atol)

        def T(t):
            return Y(t)

        def dT(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            return velocity(t, Y(t))

    field = GenFunction(lambda t: T(t), [lambda t: dT(t)], provenance="extremal")
    field.domain = (lo, hi)
    field.info = {"kind": I.name, "anchor": t_a, "first_order": bool(first_order)}
    return field
