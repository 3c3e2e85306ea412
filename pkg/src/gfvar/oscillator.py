"""Harmonic-oscillator actions, their windowed extremals and the variation table.

Complex amplitudes are realified: ``alpha = x + i y`` is stored as ``q = (x, y)``.
For the optimal-control action ``Re[pi (alpha' + i w alpha)] = p.(q' - f)`` holds
with ``f = (w y, -w x)`` and ``p = (Re pi, -Im pi)``.
"""

import csv
from dataclasses import dataclass
from math import pi as PI

import numpy as np

from .generalized import window
from .mollifiers import mollifier
from .ocontrol import BoundaryCost, ConvergenceError, OCProblem, extremize, oc_functional, second_variation_blocks
from .variation import Functional, VariationProbe, gateaux


@dataclass(frozen=True)
class HOConfig:
    mass: float = 1.0
    k: float = 1.0
    t_i: float = None
    t_f: float = None
    anchor: float = None
    eps_list: tuple = (1.0, 0.5, 0.1, 0.01)
    kind: str = "cosine-squared"
    q: int = 1
    floor: float = 1e-3

    def __post_init__(self):
        if self.mass <= 0 or self.k <= 0:
            raise ValueError("mass and spring constant must be positive")
        w = self.omega
        for name, default in (("t_i", 1.0 / w), ("t_f", 10.0 / w), ("anchor", 4.5 / w)):
            if getattr(self, name) is None:
                object.__setattr__(self, name, default)
        if not self.t_i < self.anchor < self.t_f:
            raise ValueError("need t_i < anchor < t_f")
        if not self.eps_list:
            raise ValueError("eps_list is empty")

    @property
    def omega(self):
        return float(np.sqrt(self.k / self.mass))

    def mollifier(self, eps):
        return mollifier(self.kind, self.q, eps)

    def window(self, eps):
        return window(self.t_i, self.t_f, self.mollifier(eps))


def coherent_overlap(a, b):
    """<a|b> for coherent states labelled by complex amplitudes."""
    a, b = np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)
    return np.exp(-0.5 * np.abs(a) ** 2 - 0.5 * np.abs(b) ** 2 + np.conj(a) * b)


def to_alpha(q):
    q = np.atleast_2d(q)
    return q[:, 0] + 1j * q[:, 1]


def to_pi(p):
    p = np.atleast_2d(p)
    return p[:, 0] - 1j * p[:, 1]


def _overlap_cost(beta):
    """Real part of ``-i log <beta|alpha>`` as a function of q = (Re alpha, Im alpha)."""
    b1, b2 = float(np.real(beta)), float(np.imag(beta))
    return BoundaryCost(lambda q: b1 * q[1] - b2 * q[0], lambda q: np.array([-b2, b1]),
                        lambda q: np.zeros((2, 2)))


def build_ho(kind, cfg=None, eps=None, domain=None, beta_i=None, beta_f=None):
    """``quad`` | ``holo`` | ``second`` give a Functional over the window for
    ``eps``; ``oc`` gives an OCProblem (boundary costs only when betas are set)."""
    cfg = cfg or HOConfig()
    m_, k_, w_ = cfg.mass, cfg.k, cfg.omega
    if kind == "oc":
        f = lambda q, u, t: np.stack([w_ * q[:, 1], -w_ * q[:, 0]], -1)
        A = np.array([[0.0, w_], [-w_, 0.0]])
        fq = lambda q, u, t: np.broadcast_to(A, (len(t), 2, 2)).copy()
        zero3 = lambda q, u, t: np.zeros((len(t), 2, 2, 2))
        return OCProblem(2, 0, f, fq, f_qq=zero3,
                         h_i=None if beta_i is None else _overlap_cost(beta_i),
                         h_f=None if beta_f is None else _overlap_cost(beta_f), name="ho-oc")
    if eps is None:
        raise ValueError(f"{kind}: eps is required for functional actions")
    w = cfg.window(eps)
    if kind == "quad":
        F = lambda x, T, dT: 0.5 * m_ * dT[:, 0] ** 2 - 0.5 * k_ * T[:, 0] ** 2
        G = lambda x, T, dT: [-k_ * T, m_ * dT]

        def H(x, T, dT):
            M = len(x)
            return {(0, 0): np.full((M, 1, 1), -k_), (0, 1): np.zeros((M, 1, 1)), (1, 1): np.full((M, 1, 1), m_)}

        return Functional(F, G, w, 1, 1, hess=H, domain=domain, name="ho-quad")
    if kind == "holo":
        def F(x, T, dT):
            X, Y = T[:, 0], T[:, 1]
            return -(X * dT[:, 1] - Y * dT[:, 0]) - w_ * (X ** 2 + Y ** 2)

        def G(x, T, dT):
            X, Y = T[:, 0], T[:, 1]
            g0 = np.stack([-dT[:, 1] - 2 * w_ * X, dT[:, 0] - 2 * w_ * Y], -1)
            return [g0, np.stack([Y, -X], -1)]

        def H(x, T, dT):
            M = len(x)
            return {(0, 0): np.broadcast_to(-2 * w_ * np.eye(2), (M, 2, 2)).copy(),
                    (0, 1): np.broadcast_to(np.array([[0.0, -1.0], [1.0, 0.0]]), (M, 2, 2)).copy(),
                    (1, 1): np.zeros((M, 2, 2))}

        return Functional(F, G, w, 1, 2, hess=H, domain=domain, name="ho-holo")
    if kind == "second":
        # fields (q, pi); F = pi (k q + m q'')
        F = lambda x, T, dT, ddT: T[:, 1] * (k_ * T[:, 0] + m_ * ddT[:, 0])

        def G(x, T, dT, ddT):
            g0 = np.stack([k_ * T[:, 1], k_ * T[:, 0] + m_ * ddT[:, 0]], -1)
            g2 = np.stack([m_ * T[:, 1], np.zeros(len(x))], -1)
            return [g0, np.zeros_like(T), g2]

        return Functional(F, G, w, 2, 2, domain=domain, name="ho-second")
    raise ValueError(f"unknown action kind {kind!r}")


@dataclass
class VariationReport:
    eps: float
    mollifier_id: str
    kind: str
    S: float = float("nan")
    dS: float = float("nan")
    d2S: float = float("nan")
    d2S_half: float = float("nan")
    d2S_oracle: float = float("nan")
    error: str = ""


def d2_quad_oracle(cfg, eps):
    """Closed-form ``int (m eta'^2 - k eta^2)`` for the cosine-squared mollifier
    at an interior probe."""
    if cfg.kind != "cosine-squared":
        return float("nan")
    return cfg.mass * PI ** 2 / (4 * eps ** 3) - 3 * cfg.k / (4 * eps)


def ho_extremal(kind, cfg, eps, beta_i=None, beta_f=None):
    """Windowed extremal through the anchor time: ``quad`` q = 0, q' = 1;
    ``oc`` alpha = i, pi = 1; ``holo`` alpha = i."""
    w = cfg.window(eps)
    t_a = cfg.anchor
    if kind == "quad":
        return extremize(build_ho("quad", cfg, eps), (t_a, [0.0], [1.0]), w, cfg.floor)
    if kind == "holo":
        return extremize(build_ho("holo", cfg, eps), (t_a, [0.0, 1.0], [cfg.omega, 0.0]), w, cfg.floor)
    if kind == "oc":
        return extremize(build_ho("oc", cfg, beta_i=beta_i, beta_f=beta_f), (t_a, [0.0, 1.0], [1.0, 0.0]), w,
                         cfg.floor)
    raise ValueError(f"no extremal solver for kind {kind!r}")


def _row(kind, cfg, eps):
    m = cfg.mollifier(eps)
    rep = VariationReport(eps, m.id, kind)
    t_a = cfg.anchor
    w = cfg.window(eps)
    lam2 = eps * 1e-3
    if kind == "oc":
        P = build_ho("oc", cfg)
        tr = ho_extremal("oc", cfg, eps)
        I = oc_functional(P, w, tr.domain)
        z = tr.as_field()
        rep.S = I.value(z)
        rep.dS = max((gateaux(I, z, VariationProbe(t_a, m), 1, c) for c in range(4)), key=abs)
        rep.d2S = float(second_variation_blocks(P, tr, t_a, t_a, w)["qq"][0, 0])
        rep.d2S_half = 0.5 * rep.d2S
        return rep
    field = ho_extremal(kind, cfg, eps)
    I = build_ho(kind, cfg, eps, domain=field.domain)
    rep.S = I.value(field)
    rep.dS = gateaux(I, field, VariationProbe(t_a, m), 1, 0)
    rep.d2S = gateaux(I, field, VariationProbe(t_a, m, lam2), 2, 0)
    rep.d2S_half = 0.5 * rep.d2S
    if kind == "quad":
        rep.d2S_oracle = d2_quad_oracle(cfg, eps)
    return rep


def ho_table(cfg=None, kinds=("quad", "oc", "holo")):
    """One report per (eps, kind); failures are recorded in the row."""
    cfg = cfg or HOConfig()
    rows = []
    for eps in cfg.eps_list:
        for kind in kinds:
            try:
                rows.append(_row(kind, cfg, float(eps)))
            except (ConvergenceError, ArithmeticError, ValueError) as exc:
                rows.append(VariationReport(float(eps), cfg.mollifier(float(eps)).id, kind,
                                            error=f"{type(exc).__name__}: {exc}"))
    return rows


TABLE_COLUMNS = ("eps", "kind", "mollifier", "S", "dS", "d2S", "d2S_half", "d2S_oracle", "error")


def write_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow([repr(r.eps), r.kind, r.mollifier_id, repr(r.S), repr(r.dS), repr(r.d2S), repr(r.d2S_half),
                        repr(r.d2S_oracle), r.error])


def divergence_signature(cfg, eps=0.5, n=2001):
    """Peak |q| of the quadratic-action extremal relative to its anchor
    amplitude, and the range of |alpha| along the OC extremal."""
    quad = ho_extremal("quad", cfg, eps)
    t = np.linspace(*quad.domain, n)
    q = np.abs(quad(t)[:, 0])
    amp_anchor = float(np.hypot(quad(np.array([cfg.anchor]))[0, 0],
                                quad.derivative(1)(np.array([cfg.anchor]))[0, 0] / cfg.omega))
    oc = ho_extremal("oc", cfg, eps)
    ta = np.linspace(*oc.domain, n)
    a = np.abs(to_alpha(oc.q_at(ta)))
    return {"quad_growth": float(q.max() / amp_anchor), "oc_alpha_min": float(a.min()), "oc_alpha_max": float(a.max())}
