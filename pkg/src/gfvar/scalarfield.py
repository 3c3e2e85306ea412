"""Real scalar field in 1+1 dimensions: the OC action on a lattice, the
coherent-overlap boundary cost and the boundary-matching checks.

Metric signature (-, +); index 0 is time, 1 is space.  ``P`` and ``pi`` are
stored as arrays of shape (2, N_t, N_x); ``P`` carries a lower index, ``pi``
an upper one.
"""

from dataclasses import dataclass

import numpy as np

from ._quadrature import gauss_legendre

METRIC = np.array([-1.0, 1.0])


@dataclass(frozen=True, eq=False)
class ScalarLattice:
    t: np.ndarray
    x: np.ndarray
    psi: np.ndarray
    P: np.ndarray
    phi: np.ndarray
    pi: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        shape = (self.t.size, self.x.size)
        if self.t.size < 3 or self.x.size < 3:
            raise ValueError("lattice needs at least 3 nodes per axis")
        for name in ("psi", "phi"):
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"{name} must have shape {shape}")
        for name in ("P", "pi"):
            if np.shape(getattr(self, name)) != (2,) + shape:
                raise ValueError(f"{name} must have shape {(2,) + shape}")
        for ax in (self.t, self.x):
            d = np.diff(ax)
            if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-10, atol=0):
                raise ValueError("grids must be uniform and increasing")

    @property
    def spacing(self):
        return self.t[1] - self.t[0], self.x[1] - self.x[0]

    def grad(self, f):
        """Lower-index gradient (d_t f, d_x f), second order including edges."""
        dt, dx = self.spacing
        return np.stack([np.gradient(f, dt, axis=0, edge_order=2), np.gradient(f, dx, axis=1, edge_order=2)])

    def div_lower(self, V):
        """d^mu V_mu for a lower-index field."""
        g = [self.grad(V[0])[0], self.grad(V[1])[1]]
        return METRIC[0] * g[0] + METRIC[1] * g[1]

    def div_upper(self, V):
        """d_mu V^mu for an upper-index field."""
        return self.grad(V[0])[0] + self.grad(V[1])[1]

    def boundary(self):
        """Boundary nodes as a counter-clockwise loop with outward unit normals
        (upper components) and trapezoid weights along the loop.  Corner nodes
        carry the normal of their t = const edge."""
        Nt, Nx = self.t.size, self.x.size
        it = np.concatenate([np.zeros(Nx, int), np.arange(1, Nt - 1), np.full(Nx, Nt - 1), np.arange(Nt - 2, 0, -1)])
        ix = np.concatenate([np.arange(Nx), np.full(Nt - 2, Nx - 1), np.arange(Nx - 1, -1, -1), np.zeros(Nt - 2, int)])
        normals = np.concatenate([np.tile([-1.0, 0.0], (Nx, 1)), np.tile([0.0, 1.0], (Nt - 2, 1)),
                                  np.tile([1.0, 0.0], (Nx, 1)), np.tile([0.0, -1.0], (Nt - 2, 1))])
        pts = np.stack([self.t[it], self.x[ix]], -1)
        seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        weights = 0.5 * (seg + np.roll(seg, 1))
        return it, ix, normals, weights


def plane_wave_extremal(N=64, omega_k=1.0, mass=1.0, t_span=(0.0, 1.0), x_span=(0.0, 1.0)):
    """Lattice at the extremal built from psi = cos(w t - k x), w^2 = k^2 + m^2:
    P = d psi, phi = psi, pi^mu = -d^mu psi; returns the lattice and zeta = chi."""
    k = omega_k
    w = np.sqrt(k ** 2 + mass ** 2)
    t = np.linspace(*t_span, N)
    x = np.linspace(*x_span, N)
    T, X = np.meshgrid(t, x, indexing="ij")
    ph = w * T - k * X
    psi = np.cos(ph)
    P = np.stack([-w * np.sin(ph), k * np.sin(ph)])
    pi_up = -METRIC[:, None, None] * P
    lat = ScalarLattice(t, x, psi, P, psi.copy(), pi_up, mass)
    return lat, chi(lat)


def chi(lat):
    """psi + i n^mu P_mu on the boundary loop."""
    it, ix, n, _ = lat.boundary()
    nP = n[:, 0] * lat.P[0][it, ix] + n[:, 1] * lat.P[1][it, ix]
    return lat.psi[it, ix] + 1j * nP


def _trap_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def scalar_boundary_cost(zeta, lat, sign=-1.0):
    """``h = i log <zeta|chi>`` with the log written out as the boundary integral
    ``int (sign/2 |zeta - chi|^2 + i Im(zeta* chi))``.  ``sign=-1`` makes the
    overlap decay with mismatch; ``+1`` is the growing variant."""
    c = chi(lat)
    zeta = np.asarray(zeta, dtype=complex)
    if zeta.shape != c.shape:
        raise ValueError(f"zeta must have one value per boundary node ({c.shape[0]})")
    _, _, _, w = lat.boundary()
    log_overlap = np.dot(w, sign * 0.5 * np.abs(zeta - c) ** 2 + 1j * np.imag(np.conj(zeta) * c))
    return 1j * log_overlap


def boundary_overlap(zeta, lat, sign=-1.0):
    return np.exp(-1j * scalar_boundary_cost(zeta, lat, sign))


def antisymmetric_form(lat, psi_b, P_b):
    """``int n^mu (psi P'_mu - psi' P_mu)`` for primed boundary data (psi_b, P_b)
    given per boundary node (P_b of shape (2, K))."""
    it, ix, n, w = lat.boundary()
    psi = lat.psi[it, ix]
    P = lat.P[:, it, ix]
    nPp = n[:, 0] * P_b[0] + n[:, 1] * P_b[1]
    nP = n[:, 0] * P[0] + n[:, 1] * P[1]
    return float(np.dot(w, psi * nPp - psi_b * nP))


def _density(lat):
    state = lat.div_lower(lat.P) - lat.mass ** 2 * lat.psi
    dpsi = lat.grad(lat.psi)
    return lat.phi * state + np.sum(lat.pi * (dpsi - lat.P), axis=0)


def scalar_oc_action(lat, w=None, zeta=None, sign=-1.0):
    """Bulk OC action by the 2-D trapezoid rule (window ``w(t, x)`` optional),
    plus the boundary cost when ``zeta`` is given."""
    dens = _density(lat)
    if w is not None:
        T, X = np.meshgrid(lat.t, lat.x, indexing="ij")
        dens = dens * w(T, X)
    dt, dx = lat.spacing
    S = float(_trap_weights(lat.t.size, dt) @ dens @ _trap_weights(lat.x.size, dx))
    if zeta is not None:
        return S + scalar_boundary_cost(zeta, lat, sign)
    return S


def bilinear_oracle(lat, w=None, order=4):
    """Independent bulk integral: Gauss-Legendre on every cell of the bilinear
    interpolant of the nodal density."""
    dens = _density(lat)
    if w is not None:
        T, X = np.meshgrid(lat.t, lat.x, indexing="ij")
        dens = dens * w(T, X)
    g, gw = gauss_legendre(order)
    s = 0.5 * (g + 1)
    dt, dx = lat.spacing
    c00, c10, c01, c11 = dens[:-1, :-1], dens[1:, :-1], dens[:-1, 1:], dens[1:, 1:]
    total = 0.0
    for a, wa in zip(s, gw):
        for b, wb in zip(s, gw):
            val = c00 * (1 - a) * (1 - b) + c10 * a * (1 - b) + c01 * (1 - a) * b + c11 * a * b
            total += 0.25 * wa * wb * np.sum(val)
    return float(total * dt * dx)


@dataclass(frozen=True)
class ScalarPMPReport:
    phi_minus_psi: float
    pi_n_minus_P_n: float
    pi_n_plus_P_n: float
    zeta_minus_chi: float
    state_res: float
    adjoint_res: float

    def as_dict(self):
        return dict(self.__dict__)


def scalar_pmp_check(lat, zeta):
    """Boundary-matching and interior residuals (max norms).

    ``pi_n_minus_P_n`` is ``pi^mu n_mu - P_mu n^mu``; with the adjoint equation
    ``pi^mu = -d^mu phi`` and ``phi = psi`` the consistent boundary relation is
    ``pi^mu n_mu = -P_mu n^mu``, reported as ``pi_n_plus_P_n``.
    """
    it, ix, n, _ = lat.boundary()
    n_low = n * METRIC
    pi_n = n_low[:, 0] * lat.pi[0][it, ix] + n_low[:, 1] * lat.pi[1][it, ix]
    P_n = n[:, 0] * lat.P[0][it, ix] + n[:, 1] * lat.P[1][it, ix]
    dpsi = lat.grad(lat.psi)
    dphi_up = METRIC[:, None, None] * lat.grad(lat.phi)
    state = max(np.max(np.abs(dpsi - lat.P)), np.max(np.abs(lat.div_lower(lat.P) - lat.mass ** 2 * lat.psi)))
    adjoint = max(np.max(np.abs(lat.pi + dphi_up)), np.max(np.abs(lat.div_upper(lat.pi) + lat.mass ** 2 * lat.phi)))
    return ScalarPMPReport(
        float(np.max(np.abs(lat.phi[it, ix] - lat.psi[it, ix]))),
        float(np.max(np.abs(pi_n - P_n))),
        float(np.max(np.abs(pi_n + P_n))),
        float(np.max(np.abs(np.asarray(zeta) - chi(lat)))),
        float(state), float(adjoint))
