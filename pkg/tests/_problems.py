"""Random nonlinear optimal-control problems and smooth trial trajectories."""

import numpy as np

from gfvar.ocontrol import BoundaryCost, OCProblem, Trajectory


def random_problem(rng, boundary=True):
    A = rng.normal(size=(2, 2))
    B = rng.normal(size=(2, 1))
    c = rng.normal(size=2)
    Q = rng.normal(size=(2, 2))
    Q = Q @ Q.T
    r = abs(rng.normal()) + 0.5
    f = lambda q, u, t: q @ A.T + u @ B.T + c * np.sin(q)
    fq = lambda q, u, t: A[None] + np.einsum("i,mi,ij->mij", c, np.cos(q), np.eye(2))
    fu = lambda q, u, t: np.broadcast_to(B, (len(t), 2, 1)).copy()
    f0 = lambda q, u, t: 0.5 * np.einsum("mi,ij,mj->m", q, Q, q) + 0.5 * r * u[:, 0] ** 2 + np.cos(t) * q[:, 0]
    f0q = lambda q, u, t: q @ Q + np.stack([np.cos(t), 0 * t], -1)
    f0u = lambda q, u, t: r * u
    hi = hf = None
    if boundary:
        g, g2 = rng.normal(size=2), rng.normal(size=2)
        hi = BoundaryCost(lambda q: g @ q + 0.5 * q @ q, lambda q: g + q)
        hf = BoundaryCost(lambda q: np.sin(g2 @ q), lambda q: np.cos(g2 @ q) * g2)
    return OCProblem(2, 1, f, fq, fu, f0, f0q, f0u, h_i=hi, h_f=hf, name="random")


def _vec(fn):
    return lambda t: fn(np.atleast_1d(np.asarray(t, dtype=float)))


def random_trajectory(rng, t_span=(-1.0, 3.0)):
    a = rng.normal(size=(3, 2))
    b = rng.normal(size=(3, 2))
    c = rng.normal(size=3)
    q = lambda t: np.stack([a[0, j] + a[1, j] * np.sin(a[2, j] * t + 1) for j in range(2)], -1)
    qd = lambda t: np.stack([a[1, j] * a[2, j] * np.cos(a[2, j] * t + 1) for j in range(2)], -1)
    p = lambda t: np.stack([b[0, j] + b[1, j] * np.cos(b[2, j] * t) for j in range(2)], -1)
    pd = lambda t: np.stack([-b[1, j] * b[2, j] * np.sin(b[2, j] * t) for j in range(2)], -1)
    u = lambda t: (c[0] + c[1] * t + c[2] * t ** 2)[:, None]
    return Trajectory.from_functions(2, 1, _vec(q), _vec(qd), _vec(p), _vec(u), t_span, pdot=_vec(pd))


BLOCKS = (("q", 0, 0), ("q", 1, 1), ("p", 0, 2), ("p", 1, 3), ("u", 0, 4))
