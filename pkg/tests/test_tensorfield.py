import math

import numpy as np
import pytest

from gfvar.generalized import convolve
from gfvar.mollifiers import Mollifier, build_family
from gfvar.tensorfield import (CoordMap, DegeneracyError, TensorFieldRep, compose, diffeo_apply, diffeo_order_check,
                               identity_map, polar_map, pushforward, regularize_tensor, rotation_map,
                               transform_components)

FAM = build_family("gaussian", {"sigma": 1.0}, 3)
PROBES = np.array([[1.2, 0.4], [1.7, 2.5], [1.4, -1.0]])


def vec(fn):
    return TensorFieldRep((1, 0), 2, fn)


def test_component_count():
    assert TensorFieldRep((1, 1), 3, lambda x: None).n_components == 9
    assert TensorFieldRep((0, 0), 2, lambda x: None).n_components == 1


def test_constant_and_linear_fields_unchanged():
    m = Mollifier(FAM, 1, 0.3)
    const = vec(lambda x: np.broadcast_to([1.0, -2.0], x.shape).copy())
    np.testing.assert_allclose(regularize_tensor(const, m)(PROBES), const(PROBES), atol=1e-9)
    lin = vec(lambda x: x.copy())
    np.testing.assert_allclose(regularize_tensor(lin, m)(PROBES), PROBES, atol=1e-9)


def test_sine_component_matches_one_dimensional_oracle():
    m = Mollifier(FAM, 1, 0.1)
    T = vec(lambda x: np.stack([np.sin(x[:, 0]), np.zeros(len(x))], -1))
    got = regularize_tensor(T, m)(PROBES)[:, 0]
    np.testing.assert_allclose(got, math.exp(-0.005) * np.sin(PROBES[:, 0]), atol=1e-10)


def test_rotation_of_constant_field():
    theta = 0.7
    m = Mollifier(FAM, 1, 0.3)
    C = vec(lambda x: np.broadcast_to([1.0, 2.0], x.shape).copy())
    out = diffeo_apply(regularize_tensor(C, m), rotation_map(theta), m)(PROBES)
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    np.testing.assert_allclose(out, np.tile(np.linalg.solve(R, [1.0, 2.0]), (3, 1)), atol=1e-9)


def test_identity_map_is_transparent():
    m = Mollifier(FAM, 3, 0.05)
    T = vec(lambda x: np.stack([np.cos(x[:, 1]), np.sin(x[:, 0])], -1))
    T_reg = regularize_tensor(T, m)
    out = diffeo_apply(T_reg, identity_map(2), m)(PROBES)
    np.testing.assert_allclose(out, T(PROBES), atol=10 * 0.05 ** 4)


def test_polar_components_of_position_field():
    cmap = polar_map()
    v = vec(lambda x: x.copy())
    exact = pushforward(v, cmap)(PROBES)
    np.testing.assert_allclose(exact, np.stack([PROBES[:, 0], np.zeros(3)], -1), atol=1e-12)
    est = diffeo_order_check(v, cmap, FAM, 1, [0.1, 0.05, 0.025, 0.0125], PROBES, nodes_per_axis=20)
    assert est.errors[-1] < 1e-3


def test_covector_pushforward_is_chain_rule():
    # gradient of phi = x^2 y transforms like the gradient of phi(f(X))
    g = TensorFieldRep((0, 1), 2, lambda x: np.stack([2 * x[:, 0] * x[:, 1], x[:, 0] ** 2], -1))
    cmap = polar_map()
    X = PROBES[1]
    phi = lambda X: (lambda x: x[0, 0] ** 2 * x[0, 1])(cmap.forward(X[None]))
    h = 1e-6
    fd = [(phi(X + h * e) - phi(X - h * e)) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(pushforward(g, cmap)(X[None])[0], fd, rtol=1e-7)


def test_mixed_tensor_transformation():
    rng = np.random.default_rng(3)
    J = rng.normal(size=(2, 2)) + 2 * np.eye(2)
    A = rng.normal(size=(2, 2))
    got = transform_components(A[None], J[None], 1, 1)[0]
    np.testing.assert_allclose(got, np.linalg.inv(J) @ A @ J, atol=1e-12)


@pytest.mark.parametrize("q,lo,hi", [(1, 1.7, 2.3), (3, 3.6, 4.4)])
def test_polar_order(q, lo, hi):
    T = vec(lambda x: np.stack([np.cos(x[:, 1]), np.sin(x[:, 0])], -1))
    est = diffeo_order_check(T, polar_map(), FAM, q, [0.1, 0.05, 0.025, 0.0125], PROBES, nodes_per_axis=20)
    assert lo <= est.slope <= hi


def test_rotation_error_at_floor():
    T = vec(lambda x: np.broadcast_to([0.5, -1.5], x.shape).copy())
    est = diffeo_order_check(T, rotation_map(1.1), FAM, 1, [0.1, 0.05, 0.025], PROBES)
    assert np.all(est.errors < 1e-9) and not est.reliable


def test_scalar_case_reduces_to_convolution_of_pullback():
    m = Mollifier(FAM, 1, 0.1)
    f = TensorFieldRep((0, 0), 2, lambda x: np.sin(x[:, 0]) * np.cos(x[:, 1]))
    out = diffeo_apply(f, rotation_map(0.0), m)(PROBES)
    # separable integrand: product of two 1-D convolutions
    sx = convolve(np.sin, m)(PROBES[:, 0])
    cy = convolve(np.cos, m)(PROBES[:, 1])
    np.testing.assert_allclose(out, sx * cy, atol=1e-10)


def test_composition_consistency():
    m = Mollifier(FAM, 1, 0.1)
    n = 12
    T = vec(lambda x: np.stack([np.cos(x[:, 1]), np.sin(x[:, 0])], -1))
    rot, pol = rotation_map(0.4), polar_map()
    T_reg = regularize_tensor(T, m, n)
    first = diffeo_apply(T_reg, rot, m, n)
    two_step = diffeo_apply(first, pol, m, n)(PROBES)
    one_step = diffeo_apply(T_reg, compose(rot, pol), m, n)(PROBES)
    exact = pushforward(T, compose(rot, pol))(PROBES)
    e1 = np.max(np.abs(first(PROBES) - pushforward(T, rot)(PROBES)))
    e2 = np.max(np.abs(one_step - exact))
    assert np.max(np.abs(two_step - one_step)) <= 2 * (e1 + e2)


def test_degenerate_map_rejected():
    squash = CoordMap(lambda X: X * np.array([1.0, 1e-12]), lambda x: x / np.array([1.0, 1e-12]),
                      lambda X: np.broadcast_to(np.diag([1.0, 1e-12]), X.shape[:-1] + (2, 2)), "squash")
    m = Mollifier(FAM, 1, 0.2)
    with pytest.raises(DegeneracyError):
        diffeo_apply(regularize_tensor(vec(lambda x: x.copy()), m), squash, m)(PROBES)


def test_polar_map_round_trip():
    pol = polar_map()
    pol.check(PROBES)
    assert np.all(pol.det(PROBES) == pytest.approx(PROBES[:, 0]))
