import numpy as np
import pytest
from scipy.linalg import expm

from _problems import BLOCKS, random_problem, random_trajectory
from gfvar.generalized import window
from gfvar.mollifiers import mollifier
from gfvar.ocontrol import (BoundaryCost, OCError, OCProblem, Trajectory, extremize, integrate_adjoint, oc_action,
                            oc_functional, pmp_residuals, second_variation_blocks)
from gfvar.oscillator import HOConfig, build_ho, to_alpha, to_pi
from gfvar.variation import VariationProbe, gateaux, gateaux_mixed

OMEGA = 1.0


def ho():
    return build_ho("oc", HOConfig())


def const_rows(vals):
    vals = np.asarray(vals, dtype=float)
    return lambda t: np.tile(vals, (np.size(t), 1))


def test_self_check_rejects_wrong_partials():
    f = lambda q, u, t: q ** 2
    with pytest.raises(OCError):
        OCProblem(1, 0, f, lambda q, u, t: (3 * q)[:, :, None])
    with pytest.raises(OCError):
        OCProblem(1, 1, lambda q, u, t: q + u, lambda q, u, t: np.ones((len(t), 1, 1)))


def test_action_with_zero_adjoint_is_boundary_difference():
    w = window(0.0, 2.0, mollifier("cosine-squared", 1, 0.1))
    P = OCProblem(1, 0, lambda q, u, t: -q, lambda q, u, t: -np.ones((len(t), 1, 1)),
                  h_i=BoundaryCost(lambda q: 3 * q[0], lambda q: np.array([3.0])),
                  h_f=BoundaryCost(lambda q: q[0] ** 2, lambda q: 2 * q))
    tr = Trajectory.from_functions(1, 0, lambda t: np.atleast_1d(t)[:, None] ** 2, lambda t: 2 * np.atleast_1d(t)[:, None],
                                   const_rows([0.0]), t_span=(-1, 3), pdot=const_rows([0.0]))
    assert oc_action(P, tr, w) == pytest.approx(16.0, abs=1e-12)


def test_action_vanishes_on_exact_dynamics():
    w = window(0.0, 2.0, mollifier("cosine-squared", 1, 0.1))
    P = OCProblem(1, 0, lambda q, u, t: -q, lambda q, u, t: -np.ones((len(t), 1, 1)))
    tr = Trajectory.from_functions(1, 0, lambda t: np.exp(-np.atleast_1d(t))[:, None],
                                   lambda t: -np.exp(-np.atleast_1d(t))[:, None],
                                   lambda t: np.cos(np.atleast_1d(t))[:, None], t_span=(-1, 3))
    assert abs(oc_action(P, tr, w)) < 1e-12


def test_ho_extremal_action_and_first_variation():
    cfg = HOConfig()
    eps = 0.5
    m, w = cfg.mollifier(eps), cfg.window(eps)
    P = ho()
    tr = extremize(P, (cfg.anchor, [0.0, 1.0], [1.0, 0.0]), w)
    assert abs(oc_action(P, tr, w)) <= 1e-6
    I = oc_functional(P, w, tr.domain)
    z = tr.as_field()
    for y in (2.0, 4.5, 8.0):
        for c in range(4):
            assert abs(gateaux(I, z, VariationProbe(y, m), 1, c)) <= 1e-6


def test_ho_extremal_closed_form():
    cfg = HOConfig()
    eps = 0.1
    w = cfg.window(eps)
    tr = extremize(ho(), (cfg.anchor, [0.0, 1.0], [1.0, 0.0]), w)
    t = np.linspace(*tr.domain, 301)
    alpha = 1j * np.exp(-1j * OMEGA * (t - cfg.anchor))
    np.testing.assert_allclose(to_alpha(tr.q_at(t)), alpha, atol=1e-8)
    # the windowed adjoint W p obeys the bare adjoint equation
    pi_bare = np.exp(1j * OMEGA * (t - cfg.anchor))
    np.testing.assert_allclose(to_pi(tr.p_at(t)) * w(t), pi_bare * float(w(cfg.anchor)), atol=1e-8)


def test_ho_adjoint_terminal_condition_gives_pi_equal_i_alpha_conj():
    cfg = HOConfig()
    eps = 0.5
    w = cfg.window(eps)
    tr = extremize(ho(), (cfg.anchor, [0.0, 1.0], [1.0, 0.0]), w)
    t_f = cfg.t_f
    beta_f = complex(to_alpha(tr.q_at(t_f))[0])
    P = build_ho("oc", cfg, beta_f=beta_f)
    res = pmp_residuals(P, tr)
    p_final = -np.asarray(P.h_f.grad(tr.q_at(t_f)[0]))
    t, p = integrate_adjoint(P, tr, p_final, np.linspace(cfg.t_i, t_f, 2001))
    alpha = to_alpha(tr.q_at(t))
    np.testing.assert_allclose(to_pi(p), 1j * np.conj(alpha), atol=1e-10)
    assert np.max(np.abs(res.state_res(t))) < 1e-8


def test_integrate_adjoint_linear_closed_form():
    A = np.array([[0.1, 1.0], [-2.0, -0.3]])
    P = OCProblem(2, 0, lambda q, u, t: q @ A.T, lambda q, u, t: np.broadcast_to(A, (len(t), 2, 2)).copy())
    tr = Trajectory.from_functions(2, 0, const_rows([0.0, 0.0]), const_rows([0.0, 0.0]), const_rows([0.0, 0.0]),
                                   t_span=(0.0, 2.0))
    pf = np.array([1.0, -0.5])
    t, p = integrate_adjoint(P, tr, pf, np.linspace(0.0, 2.0, 401))
    expect = np.stack([expm(A.T * (2.0 - s)) @ pf for s in t])
    np.testing.assert_allclose(p, expect, atol=1e-8)


def test_zero_dynamics_keep_adjoint_constant():
    P = OCProblem(1, 0, lambda q, u, t: 0 * q, lambda q, u, t: np.zeros((len(t), 1, 1)))
    tr = Trajectory.from_functions(1, 0, const_rows([1.0]), const_rows([0.0]), const_rows([0.0]), t_span=(0, 1))
    _, p = integrate_adjoint(P, tr, np.array([2.5]), np.linspace(0, 1, 11))
    assert np.all(p == 2.5)


def test_residuals_equal_gateaux_fields(rng):
    m = mollifier("cosine-squared", 1, 0.2)
    w = window(0.0, 2.0, m)
    for _ in range(2):
        P, tr = random_problem(rng), random_trajectory(rng)
        I = oc_functional(P, w, tr.domain)
        z = tr.as_field()
        res = pmp_residuals(P, tr, w)
        for tau in np.concatenate([[0.0, 2.0], rng.uniform(-0.2, 2.2, 4)]):
            for block, idx, comp in BLOCKS:
                g = gateaux(I, z, VariationProbe(float(tau), m), 1, comp, check=False)
                r = res.variation(block, idx, float(tau))
                assert abs(g - r) <= 1e-5 * max(abs(g), 1e-3)


def test_boundary_condition_residuals():
    P = random_problem(np.random.default_rng(5))
    tr = random_trajectory(np.random.default_rng(6))
    w = window(0.0, 2.0, mollifier("cosine-squared", 1, 0.2))
    res = pmp_residuals(P, tr, w)
    np.testing.assert_allclose(res.bc_f, tr.p_at(2.0)[0] + P.h_f.grad(tr.q_at(2.0)[0]))
    np.testing.assert_allclose(res.bc_i, tr.p_at(0.0)[0] + P.h_i.grad(tr.q_at(0.0)[0]))


def test_second_variation_blocks_match_mixed_gateaux(rng):
    m = mollifier("cosine-squared", 1, 0.3)
    w = window(0.0, 2.0, m)
    P, tr = random_problem(rng), random_trajectory(rng)
    I = oc_functional(P, w, tr.domain)
    z = tr.as_field()
    offset = {"q": 0, "p": 2, "u": 4}
    for t1, t2 in ((1.0, 1.2), (0.1, 0.05), (1.9, 2.1)):
        B = second_variation_blocks(P, tr, t1, t2, w)
        for key in ("qq", "uq", "up", "uu", "pq", "pp"):
            a, b = key
            for i in range(B[key].shape[0]):
                for j in range(B[key].shape[1]):
                    lam = m.epsilon * 1e-3
                    g = gateaux_mixed(I, z, VariationProbe(t1, m, lam), offset[a] + i,
                                      VariationProbe(t2, m, lam), offset[b] + j)
                    assert abs(g - B[key][i, j]) <= 1e-5 * max(1.0, abs(g)), (key, t1, t2, g, B[key][i, j])
        assert np.all(B["pp"] == 0.0)


def test_ho_qq_block_is_zero():
    cfg = HOConfig()
    w = cfg.window(0.5)
    tr = extremize(ho(), (cfg.anchor, [0.0, 1.0], [1.0, 0.0]), w)
    for t1, t2 in ((4.5, 4.5), (4.5, 4.7), (1.0, 1.1)):
        B = second_variation_blocks(ho(), tr, t1, t2, w)
        assert np.all(B["qq"] == 0.0) and np.all(B["pp"] == 0.0)


def test_window_interior_residuals_independent_of_eps():
    cfg = HOConfig()
    t = np.linspace(3.0, 8.0, 51)
    for eps in (0.5, 0.1):
        tr = extremize(ho(), (cfg.anchor, [0.0, 1.0], [1.0, 0.0]), cfg.window(eps))
        assert pmp_residuals(ho(), tr, cfg.window(eps)).max_interior(t) < 1e-8


def test_extremal_with_controls_and_running_cost():
    # q' = u, f0 = (q^2 + u^2) / 2  ->  u = p, p' = q
    P = OCProblem(1, 1, lambda q, u, t: u, lambda q, u, t: np.zeros((len(t), 1, 1)),
                  f_u=lambda q, u, t: np.ones((len(t), 1, 1)),
                  f0=lambda q, u, t: 0.5 * (q[:, 0] ** 2 + u[:, 0] ** 2), f0_q=lambda q, u, t: q,
                  f0_u=lambda q, u, t: u)
    m = mollifier("cosine-squared", 1, 0.2)
    w = window(0.0, 2.0, m)
    tr = extremize(P, (1.0, [0.5], [0.2]), w)
    I = oc_functional(P, w, tr.domain)
    z = tr.as_field()
    for y in (0.3, 1.0, 1.7):
        for c in range(3):
            assert abs(gateaux(I, z, VariationProbe(y, m), 1, c)) <= 1e-6
    t = np.linspace(0.3, 1.7, 15)
    np.testing.assert_allclose(tr.u_at(t), tr.p_at(t), atol=1e-10)


def test_quadratic_extremal_diverges_near_edges():
    cfg = HOConfig()
    tr = extremize(build_ho("quad", cfg, 0.5), (cfg.anchor, [0.0], [1.0]), cfg.window(0.5))
    t = np.linspace(*tr.domain, 2001)
    q = np.abs(tr(t)[:, 0])
    assert q.max() >= 2.0
    near_edges = (t < cfg.t_i + 0.5) | (t > cfg.t_f - 0.5)
    assert q[near_edges].max() == q.max()


def test_from_samples_conventions():
    t = np.linspace(0, 1, 5)
    q = np.arange(5.0)
    p = np.array([1.0, 2.0, 3.0, 4.0])
    tr = Trajectory.from_samples(t, q, p)
    assert tr.q_at(0.125)[0, 0] == pytest.approx(0.5)
    assert tr.p_at(0.3)[0, 0] == 2.0
    assert tr.qdot_at(0.6)[0, 0] == pytest.approx(4.0)
    with pytest.raises(OCError):
        Trajectory.from_samples(t, q, np.ones(5))
    with pytest.raises(OCError):
        Trajectory.from_samples(np.array([0.0, 0.1, 0.3]), q[:3], p[:2])


def test_mollified_samples():
    eps = 0.05
    m = mollifier("cosine-squared", 1, eps)
    t = np.linspace(0, 1, 21)
    tr = Trajectory.from_samples(t, 2 * t, np.ones(20), mollifier=m)
    # linear spline of a line is reproduced by a first-order mollifier
    s = np.linspace(0.2, 0.8, 7)
    np.testing.assert_allclose(tr.q_at(s)[:, 0], 2 * s, atol=1e-12)
    np.testing.assert_allclose(tr.qdot_at(s)[:, 0], 2.0, atol=1e-10)
    # dt * sum eta(t - t_n) is a partition of unity up to sampling error
    np.testing.assert_allclose(tr.p_at(s)[:, 0], 1.0, atol=1e-2)


def test_dimension_mismatch():
    cfg = HOConfig()
    tr = Trajectory.from_functions(1, 0, const_rows([0.0]), const_rows([0.0]), const_rows([0.0]), t_span=(0, 1))
    with pytest.raises(OCError):
        oc_action(ho(), tr, cfg.window(0.5))


def test_trajectory_csv(tmp_path):
    t = np.linspace(0, 1, 4)
    tr = Trajectory.from_samples(t, t, np.ones(3))
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,q0,p0" and len(lines) == 5
