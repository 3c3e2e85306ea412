"""Time-sliced optimal-control path integrals.

After the adjoint integrations turn into delta constraints, what remains is a
transport of the boundary data along the discrete flow ``q -> q + dt f(q)``;
this module evaluates that reduced form, the delta integrals it rests on, the
harmonic-oscillator coherent propagator and the Gaussian integral of the
quadratic action.
"""

from dataclasses import dataclass, field
from math import pi as PI

import numpy as np
from scipy.optimize import brentq

from ._quadrature import panel_rule
from .oscillator import coherent_overlap


class DivergenceError(ArithmeticError):
    pass


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class DeltaIntegral:
    value: float
    roots: tuple
    no_root: bool


def delta_integrate(G, phi, domain, n_scan=4001, dG=None, min_slope=1e-8):
    """``int delta(G(x)) phi(x) dx = sum_roots phi(x0) / |G'(x0)|`` on ``domain``.

    Roots are bracketed by a sign-change scan and refined with Brent's method;
    a near-zero minimum of |G| without a sign change (a tangential root) and
    any root with ``|G'| < min_slope`` raise :class:`DivergenceError`.
    """
    a, b = domain
    x = np.linspace(a, b, n_scan)
    g = np.asarray(G(x), dtype=float)
    h = (b - a) / (n_scan - 1)

    def slope(x0):
        if dG is not None:
            return float(dG(x0))
        d = 1e-3 * max(1.0, abs(x0))
        g = G(x0 + d * np.array([-2.0, -1.0, 1.0, 2.0]))
        return float((g[0] - 8 * g[1] + 8 * g[2] - g[3]) / (12 * d))

    roots = []
    exact = np.flatnonzero(g == 0.0)
    roots.extend(x[exact].tolist())
    sc = np.flatnonzero((g[:-1] * g[1:] < 0))
    for i in sc:
        roots.append(brentq(lambda s: float(G(np.array([s]))[0]), x[i], x[i + 1], xtol=1e-15, rtol=1e-15))
    # tangential roots: local minima of |G| that come close to zero without a sign change
    ag = np.abs(g)
    scale = max(np.max(ag), 1e-300)
    for i in range(1, n_scan - 1):
        if ag[i] <= ag[i - 1] and ag[i] <= ag[i + 1] and g[i - 1] * g[i + 1] > 0 and ag[i] < 1e-8 * scale:
            if all(abs(x[i] - r) > 2 * h for r in roots):
                raise DivergenceError(f"G touches zero near x = {x[i]:.6g} without crossing (|G'| ~ 0)")
    roots = sorted(set(roots))
    total = 0.0
    for r in roots:
        s = slope(r)
        if abs(s) < min_slope:
            raise DivergenceError(f"root at x = {r:.6g} has |G'| = {abs(s):.3g} < {min_slope:g}")
        total += float(phi(np.array([r]))[0]) / abs(s)
    return DeltaIntegral(total, tuple(roots), not roots)


@dataclass(frozen=True, eq=False)
class FlowMap:
    """One step of the discrete flow; ``mode`` is ``euler`` (q + dt f(q)) or
    ``exact`` (a supplied exact flow over dt)."""

    f: object
    dt: float
    mode: str = "euler"
    exact_flow: object = None

    def step(self, q):
        if self.mode == "euler":
            return q + self.dt * self.f(q)
        if self.mode == "exact":
            if self.exact_flow is None:
                raise ValueError("exact mode needs an exact_flow(q, dt) callable")
            return self.exact_flow(q, self.dt)
        raise ValueError(f"unknown flow mode {self.mode!r}")

    def iterate(self, q, k):
        for _ in range(k):
            q = self.step(q)
        return q


@dataclass
class PathIntegralResult:
    amplitude: complex
    N: int
    dt: float
    eps: float = None
    mollifier_id: str = None
    error: float = None
    extra: dict = field(default_factory=dict)


def discrete_action(P, t, q, p, u=None, s0=None):
    """``h_f - h_i + sum_n p_n.(q_{n+1} - q_n - dt f(q_n)) + S0``.

    ``q`` has N rows, ``p`` and ``u`` N-1; ``s0`` is the running-cost integral
    (by default the panel quadrature of f0 along the linear spline with
    piecewise-constant controls).
    """
    t = np.asarray(t, dtype=float)
    q = np.asarray(q, dtype=float).reshape(t.size, P.n)
    p = np.asarray(p, dtype=float).reshape(t.size - 1, P.n)
    if u is None:
        u = np.zeros((t.size - 1, P.m))
    u = np.asarray(u, dtype=float).reshape(t.size - 1, P.m)
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-10, atol=0):
        raise ValueError("discrete action needs a uniform grid")
    dt = dt[0]
    resid = q[1:] - q[:-1] - dt * P.f(q[:-1], u, t[:-1])
    S = float(np.sum(p * resid))
    if s0 is None:
        x, w = panel_rule(t, 8)
        cell = np.clip(np.searchsorted(t, x, side="right") - 1, 0, t.size - 2)
        qx = np.stack([np.interp(x, t, q[:, j]) for j in range(P.n)], -1)
        s0 = float(np.dot(w, P.f0(qx, u[cell], x)))
    S += s0
    if P.h_f is not None:
        S += float(P.h_f.g(q[-1]))
    if P.h_i is not None:
        S -= float(P.h_i.g(q[0]))
    return S


def oc_propagate(flow, N, psi=None, q1=None, weight=None, nodes=None, weights=None, final=None):
    """Reduced optimal-control path integral.

    The amplitude is ``int psi(q1) final(W^{N-1}(q1)) exp(i weight(q1, qN)) dq1``
    for 1-D states, with ``psi`` sampled on quadrature ``nodes`` (trapezoid
    weights unless ``weights`` are given), or the integrand itself for a point
    mass at ``q1``.  ``weight`` is the phase exponent ``h + S0`` (default 0)
    and ``final`` the conjugated final state (default 1).
    """
    weight = weight or (lambda a, b: 0.0)
    final = final or (lambda b: 1.0)
    if q1 is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            qN = flow.iterate(np.asarray(q1, dtype=float), N - 1)
        if not np.all(np.isfinite(qN)):
            raise DivergenceError("flow blew up")
        amp = complex(np.asarray(final(qN) * np.exp(1j * np.asarray(weight(q1, qN)))).reshape(-1)[0])
        return PathIntegralResult(amp, N, flow.dt, extra={"q_final": qN})
    if psi is None or nodes is None:
        raise ValueError("give either a point mass q1 or a density psi with quadrature nodes")
    x = np.asarray(nodes, dtype=float)
    if weights is None:
        weights = 0.5 * (np.diff(x, prepend=x[0]) + np.diff(x, append=x[-1]))
    with np.errstate(over="ignore", invalid="ignore"):
        qN = flow.iterate(x, N - 1)
    if not np.all(np.isfinite(qN)):
        raise DivergenceError("flow blew up")
    amp = complex(np.dot(weights, psi(x) * final(qN) * np.exp(1j * np.asarray(weight(x, qN)))))
    return PathIntegralResult(amp, N, flow.dt)


def nested_delta_amplitude(flow, psi, final, nodes, weights, N=3, search=(-50.0, 50.0), n_scan=2001):
    """Independent evaluation of the same amplitude by eliminating the delta
    constraints in the other order: the density is pushed forward one slice
    at a time, ``rho_{n+1}(y) = sum_{W(x) = y} rho_n(x) / |W'(x)|`` with roots
    found by :func:`delta_integrate` in x, and the final-state integral is done
    on the given quadrature ``nodes`` for q_N (1-D states)."""

    def rho(n, y):
        if n == 1:
            return psi(np.array([y]))[0]
        res = delta_integrate(lambda x: y - flow.step(x), lambda x: np.array([rho(n - 1, float(x[0]))]),
                              search, n_scan=n_scan)
        return res.value

    vals = np.array([rho(N, float(y)) for y in nodes])
    return complex(np.dot(weights, vals * final(np.asarray(nodes))))


def ho_propagator(beta_i, beta_f, T, N, omega=1.0, mode="euler"):
    """``<beta_f | W(beta_i)>`` with W the (N-1)-fold Euler step or the exact
    flow ``exp(-i omega T)``."""
    if N < 2:
        raise ValueError("N must be at least 2")
    if mode == "euler":
        dt = T / (N - 1)
        flowed = beta_i * (1 - 1j * omega * dt) ** (N - 1)
    elif mode == "exact":
        flowed = beta_i * np.exp(-1j * omega * T)
    else:
        raise ValueError(f"unknown flow mode {mode!r}")
    return complex(coherent_overlap(beta_f, flowed))


def quad_matrix(m, N, dt, mass, k, w, t_i=None):
    """Matrix of the discretized quadratic action for ``q(t) = sum_n q_n dt eta(t - t_n)``:
    ``S = -(dt^2 / 2) q^T A q`` with

        A[n, l] = mass eta''(t_n - t_l) W(t_n) + mass eta'(t_n - t_l) W'(t_n) + k eta(t_n - t_l)

    for the N-1 integration variables at t_n = t_i + n dt, n = 0..N-2.
    """
    t_i = w.edges[0] if t_i is None else t_i
    t = t_i + dt * np.arange(N - 1)
    d = t[:, None] - t[None, :]
    W = w(t)[:, None]
    Wd = w.derivative(t, 1)[:, None]
    return mass * m.derivative(d, 2) * W + mass * m.derivative(d, 1) * Wd + k * m(d), t


def quad_gaussian_pi(m, N, dt, mass, k, w, normalization="gaussian", cond_limit=1e12):
    """Gaussian integral ``int prod dq_n exp(-i dt^2/2 q^T A q)``.

    ``normalization="gaussian"`` returns the value of the integral,
    ``prod_j sqrt(2 pi / (i dt^2 lambda_j))`` over the eigenvalues of the
    symmetric part of A (principal branch per factor, which fixes the phase
    unambiguously).  ``"closed-form"`` returns the textbook-style expression
    ``((-2 i pi)^(N/2) dt^N det(A)^(1/2))^-1`` with principal square root.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    if m.max_k < 2:
        raise ValueError(f"{m.id}: second derivatives are needed")
    A, _ = quad_matrix(m, N, dt, mass, k, w)
    As = 0.5 * (A + A.T)
    cond = np.linalg.cond(As)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMatrixError(f"quadratic form is singular (condition number {cond:.3g})")
    if normalization == "gaussian":
        lam = np.linalg.eigvalsh(As)
        return complex(np.prod(np.sqrt(2 * PI / (1j * dt ** 2 * lam.astype(complex)))))
    if normalization == "closed-form":
        det = np.linalg.det(A).astype(complex) if np.iscomplexobj(A) else complex(np.linalg.det(A))
        return complex(1.0 / ((-2j * PI) ** (N / 2) * dt ** N * np.sqrt(det)))
    raise ValueError(f"unknown normalization {normalization!r}")


def damped_gaussian_oracle(A, dt, deltas=(1e-2, 1e-3), order=32, n_theta=20000):
    """Quadrature value of ``int exp(-i dt^2/2 q^T A q - delta |q|^2) dq``
    extrapolated to delta -> 0 (polynomial Richardson through the given deltas).

    One variable: composite Gauss-Legendre on a box where the damping has
    fallen below e^-30.  Two variables: polar coordinates, with the radial
    Gaussian integral done in closed form and the angular one by the
    trapezoid rule (exponentially accurate for periodic integrands).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    As = 0.5 * (A + A.T)
    d = As.shape[0]
    c = 0.5 * dt ** 2
    vals = []
    for delta in deltas:
        if d == 1:
            a = c * As[0, 0]
            box = np.sqrt(30.0 / delta)
            waves = abs(a) * box ** 2 / (2 * PI)
            x, w = panel_rule(np.linspace(-box, box, int(max(64, 4 * waves)) + 1), order)
            vals.append(complex(np.dot(w, np.exp(-(delta + 1j * a) * x ** 2))))
        elif d == 2:
            # an indefinite form puts near-poles of width ~delta on the circle
            peak = c * np.max(np.abs(np.linalg.eigvalsh(As)))
            n = int(min(max(n_theta, 40 * 2 * PI * peak / delta), 2 ** 24))
            acc = 0.0 + 0.0j
            for start in range(0, n, 2 ** 20):
                th = 2 * PI * np.arange(start, min(n, start + 2 ** 20)) / n
                ct, st = np.cos(th), np.sin(th)
                Q = As[0, 0] * ct ** 2 + 2 * As[0, 1] * ct * st + As[1, 1] * st ** 2
                acc += np.sum(1.0 / (2.0 * (delta + 1j * c * Q)))
            vals.append(complex(acc * 2 * PI / n))
        else:
            raise ValueError("the brute-force oracle supports one or two variables")
    deltas = np.asarray(deltas, dtype=float)
    V = np.vander(deltas, len(deltas), increasing=True).astype(complex)
    coef = np.linalg.solve(V, np.asarray(vals))
    return complex(coef[0]), vals


def slice_constraint(f, m, dt, q_prev, scheme="spline"):
    """Argument G(x) of the delta produced by integrating out one adjoint
    sample, as a function of the next state sample x (1-D state).

    ``spline``: q is the linear spline, G = x - q_prev - dt f(q_prev).
    ``constant``: q is built like p, ``sum_n q_n dt eta(t - t_n)``; then
    ``G = dt int eta(t - t_n) (q'(t) - f(q(t))) dt``, where for dt beyond the
    kernel width the derivative term drops out and a sign-definite f leaves
    no root at all.
    """
    if scheme == "spline":
        return lambda x: np.asarray(x, dtype=float) - q_prev - dt * f(q_prev)
    if scheme != "constant":
        raise ValueError(f"unknown scheme {scheme!r}")
    R = m.radius
    s, ws = panel_rule(np.linspace(-R, R, 9), 24)
    k0, k1 = m(s), m.derivative(s, 1)
    prev0, prev1 = m(s + dt), m.derivative(s + dt, 1)

    def G(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))[:, None]
        q = dt * (q_prev * prev0 + x * k0)
        qd = dt * (q_prev * prev1 + x * k1)
        return dt * ((qd - f(q)) * k0) @ ws

    return G
