"""Coordinate-dependent regularization of tensor components and the
diffeomorphism operator that carries a regularized tensor to new coordinates.

Tensor components are represented by one vectorized callable: given points of
shape (M, n) it returns an array of shape (M,) + (n,) * (r + s), upper indices
first.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .generalized import fit_order, kernel_rule
from .mollifiers import Mollifier, build_family

COND_LIMIT = 1e8


class DegeneracyError(ValueError):
    """The coordinate map is (numerically) singular where it is needed."""


@dataclass(frozen=True, eq=False)
class TensorFieldRep:
    rank: tuple
    dim: int
    components: Callable
    coords: str = "x"
    mollifier: Mollifier = None

    @property
    def n_components(self):
        return self.dim ** sum(self.rank)

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.dim:
            raise ValueError(f"points must have trailing dimension {self.dim}")
        return self.components(pts)


@dataclass(frozen=True, eq=False)
class CoordMap:
    """x = forward(X), X = inverse(x); ``jacobian(X)[..., a, b] = dx^a/dX^b``."""

    forward: Callable
    inverse: Callable
    jacobian: Callable
    name: str = "map"

    def det(self, X):
        return np.linalg.det(self.jacobian(X))

    def check(self, X, tol=1e-10):
        """Round trip and non-degeneracy on probe points."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        back = self.inverse(self.forward(X))
        if np.max(np.abs(self.forward(back) - self.forward(X))) > tol:
            raise DegeneracyError(f"{self.name}: forward(inverse(x)) differs from x beyond {tol}")
        _check_conditioning(self, self.jacobian(X))
        return True


def _check_conditioning(cmap, J):
    cond = np.linalg.cond(J)
    if np.any(~np.isfinite(cond)) or np.max(cond) > COND_LIMIT:
        raise DegeneracyError(f"{cmap.name}: Jacobian condition number {np.max(cond):.3g} exceeds {COND_LIMIT:g}")


def identity_map(n):
    eye = np.eye(n)
    return CoordMap(lambda X: np.asarray(X, float), lambda x: np.asarray(x, float),
                    lambda X: np.broadcast_to(eye, np.shape(X)[:-1] + (n, n)).copy(), "identity")


def rotation_map(theta):
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, -s], [s, c]])
    return CoordMap(lambda X: np.asarray(X, float) @ R.T, lambda x: np.asarray(x, float) @ R,
                    lambda X: np.broadcast_to(R, np.shape(X)[:-1] + (2, 2)).copy(), f"rotation({theta:g})")


def polar_map():
    """X = (r, theta) -> x = (r cos theta, r sin theta)."""

    def fwd(X):
        X = np.asarray(X, float)
        r, t = X[..., 0], X[..., 1]
        return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)

    def inv(x):
        x = np.asarray(x, float)
        return np.stack([np.hypot(x[..., 0], x[..., 1]), np.arctan2(x[..., 1], x[..., 0])], axis=-1)

    def jac(X):
        X = np.asarray(X, float)
        r, t = X[..., 0], X[..., 1]
        c, s = np.cos(t), np.sin(t)
        return np.stack([np.stack([c, -r * s], -1), np.stack([s, r * c], -1)], -2)

    return CoordMap(fwd, inv, jac, "polar")


def compose(outer, inner):
    """Map for applying ``outer`` first and ``inner`` second: with
    x = outer.forward(X) and X = inner.forward(Z), returns x = F(Z)."""
    return CoordMap(lambda Z: outer.forward(inner.forward(Z)),
                    lambda x: inner.inverse(outer.inverse(x)),
                    lambda Z: outer.jacobian(inner.forward(Z)) @ inner.jacobian(Z),
                    f"{outer.name}*{inner.name}")


def _product_rule(m, dim, n):
    z, w = kernel_rule(m, n)
    grids = np.meshgrid(*([z] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes * m.epsilon, weights


def regularize_tensor(T, m, nodes_per_axis=None):
    """Convolve every component with the tensor-product mollifier in the
    current coordinates (plain Lebesgue measure, no volume factor)."""
    offsets, weights = _product_rule(m, T.dim, nodes_per_axis)

    def comps(x):
        M = x.shape[0]
        pts = (x[:, None, :] + offsets[None, :, :]).reshape(-1, T.dim)
        vals = T.components(pts).reshape((M, len(weights)) + (T.dim,) * sum(T.rank))
        return np.tensordot(weights, vals, axes=([0], [1]))

    return TensorFieldRep(T.rank, T.dim, comps, T.coords, m)


def transform_components(vals, J, r, s):
    """Apply the tensor transformation rule to components in old coordinates.

    ``J`` holds dx/dX.  Upper indices pick up dX/dx = J^{-1}, lower indices J.
    ``vals`` has shape (..., n, ..., n) with the r + s index axes last.
    """
    n = J.shape[-1]
    Jinv = np.linalg.inv(J)
    lead = vals.ndim - (r + s)
    out = vals
    for a in range(r + s):
        axis = lead + a
        moved = np.moveaxis(out, axis, -1)[..., None]
        # broadcast the (lead + n x n) matrix against the remaining index axes
        shape = J.shape[:-2] + (1,) * (r + s - 1) + (n, n)
        if a < r:
            mat = Jinv.reshape(shape)
            res = (mat @ moved)[..., 0]
        else:
            mat = np.swapaxes(J, -1, -2).reshape(shape)
            res = (mat @ moved)[..., 0]
        out = np.moveaxis(res, -1, axis)
    return out


def diffeo_apply(T_reg, cmap, m_new=None, nodes_per_axis=None, chunk=16):
    """Diffeomorphism operator on a regularized tensor.

    The integral over old coordinates x is taken in the new coordinates Y with
    x = f(Y); the Jacobian determinant of the substitution cancels the inverse
    determinant of the operator (orientation is ignored), leaving

        D[T~](X) = int T~(f(Y)) Lambda(Y) eta'_eps(Y - X) dY,

    where Lambda is the tensor transformation factor.
    """
    if T_reg.mollifier is None and m_new is None:
        raise ValueError("diffeo_apply needs a regularized field or an explicit new mollifier")
    m_new = m_new or T_reg.mollifier
    r, s = T_reg.rank
    n = T_reg.dim
    offsets, weights = _product_rule(m_new, n, nodes_per_axis)
    significant = np.abs(weights) > 1e-16 * np.max(np.abs(weights))

    def comps(X):
        out = []
        for start in range(0, X.shape[0], chunk):
            Xc = X[start:start + chunk]
            Y = Xc[:, None, :] + offsets[None, :, :]
            J = cmap.jacobian(Y)
            _check_conditioning(cmap, J[:, significant])
            x = cmap.forward(Y).reshape(-1, n)
            vals = T_reg.components(x).reshape(Y.shape[:2] + (n,) * (r + s))
            vals = transform_components(vals, J, r, s)
            out.append(np.tensordot(weights, vals, axes=([0], [1])))
        return np.concatenate(out, axis=0)

    return TensorFieldRep(T_reg.rank, n, comps, cmap.name, m_new)


def pushforward(T, cmap):
    """Exact (unregularized) components of T in the new coordinates."""
    r, s = T.rank

    def comps(X):
        J = cmap.jacobian(X)
        return transform_components(T.components(cmap.forward(X)), J, r, s)

    return TensorFieldRep(T.rank, T.dim, comps, cmap.name)


def diffeo_order_check(T, cmap, family, q, eps_list, probes, nodes_per_axis=None, floor=1e-11):
    """Fit the decay of ``max |D[T~] - T'|`` over the probe points, where T' are
    the exactly transformed components."""
    if isinstance(family, str):
        family = build_family(family, None, q)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    exact = pushforward(T, cmap)(probes)
    errors = []
    for e in eps_list:
        m = Mollifier(family, q, float(e))
        approx = diffeo_apply(regularize_tensor(T, m, nodes_per_axis), cmap, m, nodes_per_axis)(probes)
        errors.append(float(np.max(np.abs(approx - exact))))
    return fit_order(eps_list, errors, floor)
