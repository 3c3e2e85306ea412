import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gfvar._quadrature import panel_rule
from gfvar.generalized import window
from gfvar.mollifiers import mollifier
from gfvar.ocontrol import BoundaryCost, OCProblem
from gfvar.oscillator import coherent_overlap
from gfvar.pathintegral import (DivergenceError, FlowMap, SingularMatrixError, damped_gaussian_oracle,
                                delta_integrate, discrete_action, ho_propagator, nested_delta_amplitude,
                                oc_propagate, quad_gaussian_pi, quad_matrix, slice_constraint)

ONE = lambda x: np.ones_like(x)


def logistic():
    return OCProblem(1, 0, lambda q, u, t: q * (1 - q), lambda q, u, t: (1 - 2 * q)[:, :, None],
                     f0=lambda q, u, t: q[:, 0] ** 2, f0_q=lambda q, u, t: 2 * q,
                     h_i=BoundaryCost(lambda q: 2 * q[0], lambda q: np.array([2.0])),
                     h_f=BoundaryCost(lambda q: math.sin(q[0]), lambda q: np.array([math.cos(q[0])])))


def test_delta_integrate_examples():
    assert delta_integrate(lambda x: 2 * x, ONE, (-1, 1)).value == pytest.approx(0.5, abs=1e-14)
    r = delta_integrate(lambda x: x ** 2 - 1, lambda x: x ** 2, (-3, 3))
    assert r.value == pytest.approx(1.0, abs=1e-12) and len(r.roots) == 2
    r = delta_integrate(lambda x: x ** 2 + 1, ONE, (-3, 3))
    assert r.value == 0.0 and r.no_root


def test_delta_integrate_decreasing_root_uses_absolute_slope():
    assert delta_integrate(lambda x: 1 - 4 * x, ONE, (-2, 2)).value == pytest.approx(0.25, abs=1e-14)


def test_delta_integrate_tangential_root():
    with pytest.raises(DivergenceError):
        delta_integrate(lambda x: x ** 2, ONE, (-1, 1.3))


@given(a=st.floats(0.1, 5), b=st.floats(-1, 1))
def test_delta_integrate_linear(a, b):
    r = delta_integrate(lambda x: a * x - b, lambda x: np.cos(x), (-20, 20), dG=lambda x: a)
    assert r.value == pytest.approx(math.cos(b / a) / a, rel=1e-10)


def test_discrete_action_on_euler_orbit():
    P = OCProblem(1, 0, lambda q, u, t: q * (1 - q), lambda q, u, t: (1 - 2 * q)[:, :, None])
    t = np.linspace(0, 1, 11)
    q = [0.2]
    for _ in range(10):
        q.append(q[-1] + 0.1 * q[-1] * (1 - q[-1]))
    p = np.random.default_rng(0).normal(size=10)
    assert abs(discrete_action(P, t, np.array(q), p)) < 1e-15


def test_discrete_action_boundary_terms_only():
    P = logistic()
    P0 = OCProblem(1, 0, P.f, P._f_q, h_i=P.h_i, h_f=P.h_f)
    t = np.linspace(0, 2, 5)
    q = np.array([0.3, 0.1, -0.4, 0.9, 1.2])
    assert discrete_action(P0, t, q, np.zeros(4)) == pytest.approx(math.sin(1.2) - 0.6, abs=1e-15)


def _continuum_action(P, t, q, p):
    """Direct re-evaluation: int p (q' - f(q)) + f0 along the linear spline, piecewise-constant p."""
    x, w = panel_rule(t, 16)
    cell = np.clip(np.searchsorted(t, x, side="right") - 1, 0, t.size - 2)
    qx = np.interp(x, t, q)[:, None]
    qd = (np.diff(q) / np.diff(t))[cell]
    u = np.zeros((x.size, 0))
    dens = p[cell] * (qd - P.f(qx, u, x)[:, 0]) + P.f0(qx, u, x)
    return float(np.dot(w, dens)) + P.h_f.g(q[-1:]) - P.h_i.g(q[:1])


def test_discrete_action_converges_to_continuum():
    P = logistic()
    errs, dts = [], []
    for N in (41, 81, 161, 321):
        t = np.linspace(0, 2, N)
        q = 0.5 + 0.4 * np.sin(2 * t)
        p = np.cos(t[:-1])
        errs.append(abs(discrete_action(P, t, q, p) - _continuum_action(P, t, q, p)))
        dts.append(t[1] - t[0])
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.15)


def test_point_mass_transport():
    flow = FlowMap(lambda x: np.sin(x), 0.1)
    res = oc_propagate(flow, 5, q1=0.4)
    assert res.amplitude == 1.0
    assert res.extra["q_final"] == pytest.approx(flow.iterate(0.4, 4))


@pytest.mark.parametrize("N", [2, 3, 4])
def test_flow_reduction_equals_nested_delta(N):
    flow = FlowMap(lambda x: np.sin(x), 0.1)
    psi = lambda x: np.exp(-x ** 2)
    final = lambda y: np.exp(1j * y)
    x, w = panel_rule(np.linspace(-8, 8, 33), 32)
    reduced = oc_propagate(flow, N, psi, nodes=x, weights=w, final=final).amplitude
    lo, hi = flow.iterate(np.array([-8.0, 8.0]), N - 1)
    y, wy = panel_rule(np.linspace(lo, hi, 33), 32)
    nested = nested_delta_amplitude(flow, psi, final, y, wy, N, search=(-9.0, 9.0), n_scan=401)
    assert abs(reduced - nested) <= 1e-10


def test_flow_exact_mode():
    flow = FlowMap(lambda x: -x, 0.5, "exact", exact_flow=lambda q, dt: q * math.exp(-dt))
    assert flow.iterate(2.0, 3) == pytest.approx(2.0 * math.exp(-1.5))
    with pytest.raises(ValueError):
        FlowMap(lambda x: x, 0.1, "exact").step(1.0)


def test_propagator_divergence():
    with pytest.raises(DivergenceError):
        oc_propagate(FlowMap(lambda x: x ** 3, 1.0), 30, q1=3.0)


def test_ho_propagator_examples():
    T = 2.0
    assert ho_propagator(1.0, np.exp(-1j * T), T, 10, mode="exact") == pytest.approx(1.0)
    assert ho_propagator(1j, 1j, 2 * math.pi, 2, mode="exact") == pytest.approx(1.0)
    b_i, b_f = 1.0, 0.5 + 0.3j
    expect = coherent_overlap(b_f, b_i * np.exp(-1j))
    assert abs(ho_propagator(b_i, b_f, 1.0, 2, mode="exact") - expect) < 1e-15


def test_euler_mode_first_order():
    b_i, b_f = 1.0, 0.5 + 0.3j
    exact = ho_propagator(b_i, b_f, 1.0, 2, mode="exact")
    dts = np.array([1e-2, 1e-3, 1e-4])
    errs = [abs(ho_propagator(b_i, b_f, 1.0, int(round(1 / dt)) + 1) - exact) for dt in dts]
    assert np.polyfit(np.log(dts), np.log(errs), 1)[0] == pytest.approx(1.0, abs=0.1)


@given(bi=st.complex_numbers(max_magnitude=3), bf=st.complex_numbers(max_magnitude=3), T=st.floats(0.1, 10),
       N=st.integers(2, 200), mode=st.sampled_from(["euler", "exact"]))
def test_unitarity_bound(bi, bf, T, N, mode):
    assert abs(ho_propagator(bi, bf, T, N, mode=mode)) <= 1.0 + 1e-12


def _acceptance_setup():
    m = mollifier("gaussian", 0, 0.3)
    return m, window(0.0, 2.0, m)


@pytest.mark.parametrize("N,deltas,tol", [(2, (1e-2, 1e-3), 1e-4), (3, (2e-3, 1e-3, 5e-4), 1e-4)])
def test_gaussian_path_integral_against_brute_force(N, deltas, tol):
    m, w = _acceptance_setup()
    A, _ = quad_matrix(m, N, 0.4, 1.0, 1.0, w)
    value = quad_gaussian_pi(m, N, 0.4, 1.0, 1.0, w)
    oracle, _ = damped_gaussian_oracle(A, 0.4, deltas)
    assert abs(value - oracle) / abs(oracle) <= tol


def test_quad_matrix_symmetry_for_interior_nodes():
    m = mollifier("cosine-squared", 1, 0.5)
    w = window(-5.0, 5.0, m)
    A, t = quad_matrix(m, 6, 0.3, 1.3, 0.7, w, t_i=-0.6)
    np.testing.assert_allclose(A, A.T, atol=1e-12)


def test_quad_matrix_is_minus_second_variation_kernel():
    m = mollifier("cosine-squared", 1, 0.3)
    w = window(0.0, 2.0, m)
    # cos^2 is only C^1 at its support edge, so keep node separations off multiples of eps
    mass, k, dt = 1.3, 0.7, 0.07
    A, t = quad_matrix(m, 5, dt, mass, k, w)
    h = 1e-4

    def flux(t1, t2):
        return mass * w(t1) * m.derivative(t1 - t2, 1)

    for i, t1 in enumerate(t):
        for j, t2 in enumerate(t):
            d_flux = (flux(t1 - 2 * h, t2) - 8 * flux(t1 - h, t2) + 8 * flux(t1 + h, t2) - flux(t1 + 2 * h, t2)) / (
                12 * h)
            kernel = -d_flux - k * float(m(t1 - t2))
            assert -A[i, j] == pytest.approx(kernel, abs=1e-8 * max(1.0, abs(kernel)))
    # the discretized action -(dt^2/2) q^T A q is the quadratic form of that kernel
    qv = np.random.default_rng(1).normal(size=t.size)
    K = -A
    assert -0.5 * dt ** 2 * qv @ A @ qv == pytest.approx(0.5 * dt ** 2 * qv @ K @ qv)


def test_closed_form_normalization_is_reported_separately():
    m, w = _acceptance_setup()
    g = quad_gaussian_pi(m, 2, 0.4, 1.0, 1.0, w)
    c = quad_gaussian_pi(m, 2, 0.4, 1.0, 1.0, w, "closed-form")
    assert np.isfinite(c) and abs(c - g) > 1e-3 * abs(g)
    with pytest.raises(ValueError):
        quad_gaussian_pi(m, 2, 0.4, 1.0, 1.0, w, "other")


def test_singular_quadratic_form():
    m = mollifier("cosine-squared", 1, 0.1)
    w = window(0.0, 2.0, m)
    # nodes far from each other and at a point where W vanishes: A has a zero row
    with pytest.raises(SingularMatrixError):
        quad_gaussian_pi(m, 3, 2.5, 1.0, 0.0, w)


def test_grid_sensitivity_of_delta_constraint():
    m = mollifier("cosine-squared", 1, 0.1)
    f = lambda q: 1.0 + q ** 2
    G_spline = slice_constraint(f, m, 0.5, 0.3, "spline")
    G_const = slice_constraint(f, m, 0.5, 0.3, "constant")
    assert not delta_integrate(G_spline, ONE, (-10, 10)).no_root
    assert delta_integrate(G_const, ONE, (-10, 10)).no_root
