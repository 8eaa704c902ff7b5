import numpy as np
import pytest

from bellman_fd import (
    ConfigurationError,
    ControlProblem,
    ConvergenceError,
    ExteriorPolicy,
    MeshSpec,
    SolverConfig,
    build_mesh,
    catalog,
    choose_contraction_params,
    default_mesh_spec,
    solve_global,
    solve_parabolic,
    solve_slice,
)
from bellman_fd.implicit_solver import slice_fixed_point_map
from oracles import dense_march, dense_slice


def mesh(T=1.0, tau=0.25, h=0.1, dirs=((1.0,),), R=5, origin=None):
    return build_mesh(MeshSpec(T=T, tau=tau, h=h, directions=dirs, origin=origin, index_radius=R))


def const_coef(sigma=0.0, b=(0.0, 0.0), c=0.0, f=0.0):
    return ControlProblem(
        [0],
        sigma=lambda *a: sigma,
        b=lambda al, k, t, x: b[0] if k > 0 else b[1],
        c=lambda *a: c,
        f=lambda *a: f,
    )


# --- contraction parameters -----------------------------------------------------


def test_params_heat_example():
    p = const_coef(sigma=1.0)
    par = choose_contraction_params(p, mesh(tau=0.01, h=0.1))
    assert par.epsilon == pytest.approx(0.00475, rel=1e-12)
    assert par.contraction_factor == pytest.approx(0.525, rel=1e-12)


def test_params_decay_example():
    par = choose_contraction_params(const_coef(c=1.0), mesh(tau=0.1, h=0.1))
    assert par.epsilon == pytest.approx(0.95 / 11)
    assert par.contraction_factor == pytest.approx(1 - 9.5 / 11)
    assert par.contraction_factor == pytest.approx(0.136, abs=5e-4)


def test_params_zero_coefficients():
    par = choose_contraction_params(const_coef(), mesh(tau=1.0, h=0.3))
    assert par.epsilon == pytest.approx(0.95) and par.contraction_factor == pytest.approx(0.05)


def test_weights_nonnegative_and_sum_below_delta():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s, bp, bm, c = rng.uniform(0, 2, 4)
        p = const_coef(sigma=s, b=(bp, bm), c=c, f=rng.normal())
        m = mesh(tau=float(rng.uniform(0.01, 1)), h=float(rng.uniform(0.05, 1)))
        for gamma in (1.0, 0.5):
            par = choose_contraction_params(p, m, gamma=gamma)
            pk, pc = par.weights(p.coefficients(0.0, m.positions))
            assert pk.min() >= 0 and pc.min() >= -1e-15 and par.p_tau >= 0
            total = pk.sum(axis=1) + pc + par.p_tau
            assert total.max() <= par.contraction_factor + 1e-12 or gamma == 1.0
            if gamma == 1.0:
                # per slice the unknown carries everything but p_tau
                assert (pk.sum(axis=1) + pc).max() <= par.contraction_factor + 1e-12


# --- slice map ------------------------------------------------------------------


def _two_control():
    return ControlProblem(
        ["a", "b"],
        sigma=lambda al, k, t, x: 1.0 if al == "a" else 0.3 + 0.2 * np.cos(x[:, 0]),
        b=lambda al, k, t, x: (0.5 if k == 1 else 0.0) if al == "a" else (0.0 if k == 1 else 1.0),
        c=lambda al, t, x: 0.2 if al == "a" else 0.5,
        f=lambda al, t, x: np.sin(x[:, 0] + t) if al == "a" else 0.3 * np.cos(2 * x[:, 0]),
        g=lambda x: np.cos(np.atleast_2d(x)[:, 0]),
    )


def test_map_const_example_and_fixed_point():
    p, _ = catalog("const")
    m = mesh(tau=0.25, h=0.5, R=4)
    par = choose_contraction_params(p, m)
    one = np.ones(m.n_nodes)
    np.testing.assert_allclose(slice_fixed_point_map(p, m, par, one, one, 0.0), one, atol=1e-15)
    w, st = solve_slice(p, m, par, one, 0.0)
    assert np.abs(w - 1).max() < 1e-12 and st.final_residual < 1e-12


def test_map_monotone_and_contractive():
    p = _two_control()
    m = mesh(tau=0.05, h=0.1, R=15)
    par = choose_contraction_params(p, m)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        w1 = rng.normal(size=m.n_nodes)
        w2 = w1 + rng.uniform(0, 1, m.n_nodes)
        un1 = rng.normal(size=m.n_nodes)
        un2 = un1 + rng.uniform(0, 1, m.n_nodes)
        g1 = slice_fixed_point_map(p, m, par, un1, w1, 0.0)
        g2 = slice_fixed_point_map(p, m, par, un2, w2, 0.0)
        assert np.all(g1 <= g2 + 1e-14)
        w3 = rng.normal(size=m.n_nodes)
        g3 = slice_fixed_point_map(p, m, par, un1, w3, 0.0)
        worst = max(worst, np.abs(g1 - g3).max() / np.abs(w1 - w3).max())
    assert worst <= par.contraction_factor + 1e-12


# --- dense linear-algebra oracle ----------------------------------------------------


def _check_slices(u, problem, exterior=None, tol=1e-10):
    m = u.mesh
    for j in range(m.n_time):
        dense = dense_slice(problem, m, u.values[j + 1], m.time_levels[j], exterior)
        assert np.abs(u.values[j] - dense).max() <= tol


def _single_control(seed):
    rng = np.random.default_rng(seed)
    s0, bp, bm, c0 = rng.uniform(0.2, 1.5, 4)
    return ControlProblem(
        [0],
        sigma=lambda al, k, t, x: s0 * (1 + 0.3 * np.sin(x[:, k - 1] + k)),
        b=lambda al, k, t, x: (bp if k > 0 else bm) * (1 + 0.5 * np.cos(t + x[:, 0])),
        c=lambda al, t, x: c0 + 0.1 * np.sin(x[:, 0]) ** 2,
        f=lambda al, t, x: np.cos(x.sum(axis=1) + 2 * t),
        g=lambda x: np.exp(-np.sum(np.atleast_2d(x) ** 2, axis=1)),
        directions=((1.0, 0.0), (0.3, 1.0)) if seed % 2 else ((1.0,),),
    )


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_matches_dense_solve(seed):
    p = _single_control(seed)
    dirs = p.directions
    m = mesh(T=1.0, tau=0.3, h=0.2, dirs=dirs, R=3 if len(dirs) == 2 else 24)
    assert m.n_nodes <= 50 and len(m.time_levels) <= 5
    for method in ("banach", "howard"):
        u = solve_parabolic(p, m, SolverConfig(method=method))
        _check_slices(u, p)
        # slice errors of 1e-10 can add up over the levels
        assert np.abs(u.values - dense_march(p, m)).max() <= 1e-9


def test_matches_dense_solve_constant_exterior():
    p = _single_control(0)
    m = mesh(T=1.0, tau=0.25, h=0.2, R=10)
    u = solve_parabolic(p, m, SolverConfig(exterior=ExteriorPolicy.constant(0.7)))
    _check_slices(u, p, exterior=0.7)
    assert np.abs(u.values - dense_march(p, m, exterior=0.7)).max() <= 1e-9


def test_five_node_example():
    p = _single_control(2)
    m = mesh(T=0.5, tau=0.25, h=0.25, R=2)
    assert m.n_nodes == 5
    u = solve_parabolic(p, m)
    _check_slices(u, p)


# --- global space-time oracle ---------------------------------------------------------


@pytest.mark.parametrize("name", ["transport_kink", "twocontrol_diffusion", "const"])
def test_matches_global_fixed_point(name):
    p, _ = catalog(name)
    m = mesh(T=1.0, tau=0.25, h=0.25, R=12)
    u = solve_parabolic(p, m)
    v = solve_global(p, m, gamma=0.5)
    assert np.abs(u.values - v.values).max() <= 1e-9


def test_global_oracle_time_dependent_short_step():
    p = _two_control()
    m = mesh(T=1.0, tau=0.3, h=0.2, R=10)
    assert np.abs(solve_parabolic(p, m).values - solve_global(p, m).values).max() <= 1e-9


# --- solver-level properties ---------------------------------------------------------


def test_const_any_mesh():
    p, _ = catalog("const")
    for tau, h in ((0.3, 0.7), (0.01, 0.05)):
        u = solve_parabolic(p, mesh(tau=tau, h=h, R=6))
        assert np.abs(u.values - 1).max() <= 1e-12


def test_banach_howard_agree_on_transport():
    p, _ = catalog("transport_kink")
    m = build_mesh(default_mesh_spec(p))
    a = solve_parabolic(p, m, SolverConfig(method="banach"))
    b = solve_parabolic(p, m, SolverConfig(method="howard"))
    assert np.abs(a.values - b.values).max() <= 1e-9
    assert all(s.method == "howard" for s in b.stats)


def test_stats_within_tolerance():
    p = _two_control()
    m = mesh(tau=0.1, h=0.1, R=20)
    cfg = SolverConfig()
    u = solve_parabolic(p, m, cfg)
    assert len(u.stats) == m.n_time
    assert all(s.final_residual <= cfg.slice_tol(u.params) for s in u.stats)


def test_cap_raises_with_slice_index():
    p = _two_control()
    m = mesh(tau=0.1, h=0.05, R=20)
    with pytest.raises(ConvergenceError) as info:
        solve_parabolic(p, m, SolverConfig(max_iter=2))
    assert info.value.slice_index == m.n_time - 1
    assert np.isfinite(info.value.last_residual)


def test_unknown_method():
    with pytest.raises(ConfigurationError):
        SolverConfig(method="newton")


def test_comparison_f_ordered():
    p = _two_control()
    f0 = p.f
    q = p.replace(f=lambda al, t, x: f0(al, t, x) + 0.3 * (1 + np.sin(x[:, 0]) ** 2))
    m = mesh(tau=0.1, h=0.1, R=20)
    u1, u2 = solve_parabolic(p, m), solve_parabolic(q, m)
    assert np.all(u1.values <= u2.values + 1e-9)


def test_terminal_shift_contracts():
    p = _two_control()
    g0 = p.g
    m = mesh(tau=0.1, h=0.1, R=20)
    u1 = solve_parabolic(p, m)
    u2 = solve_parabolic(p.replace(g=lambda x: g0(x) + 0.5), m)
    diff = u2.values - u1.values
    assert diff.min() >= -1e-9 and diff.max() <= 0.5 + 1e-9


def test_uniform_bound_lambda_zero():
    p = _two_control().replace(c=lambda *a: 0.0, K=1.0)
    m = mesh(T=2.0, tau=0.1, h=0.1, R=30)
    u = solve_parabolic(p, m)
    bound = p.K * (m.T + m.tau) + np.abs(p.terminal(m.positions)).max()
    assert np.abs(u.values).max() <= bound + 1e-9


def test_stability_under_uniform_perturbation():
    p = _two_control()
    f0, g0 = p.f, p.g
    m = mesh(T=1.0, tau=0.1, h=0.1, R=20)
    base = solve_parabolic(p, m).values
    for eta in (1e-2, 1e-4):
        q = p.replace(f=lambda al, t, x: f0(al, t, x) + eta, g=lambda x: g0(x) + eta)
        ratio = np.abs(solve_parabolic(q, m).values - base).max() / eta
        assert ratio <= 2 * (1 + m.T)


def test_short_last_step_uses_tau_denominator():
    # u_t = 0 transport of g = x with b_+ = 1: one step from T with gap 0.2 and tau 0.4
    p = ControlProblem([0], b=lambda al, k, t, x: 1.0 if k == 1 else 0.0, g=lambda x: np.atleast_2d(x)[:, 0])
    m = mesh(T=1.0, tau=0.4, h=0.1, R=30)
    # (u_next - u)/tau + 1 = 0 with u affine, so each level adds tau, the short one included
    steps = lambda t: np.ceil((1.0 - t) / 0.4 - 1e-9)
    u = solve_parabolic(p, m, SolverConfig(exterior=ExteriorPolicy.dirichlet(lambda t, x: x[:, 0] + 0.4 * steps(t))))
    inner = m.interior_mask(0)
    np.testing.assert_allclose((u.values[2] - u.values[3])[inner], 0.4, atol=1e-9)
    np.testing.assert_allclose((u.values[0] - u.values[1])[inner], 0.4, atol=1e-9)


def test_deterministic():
    p = _two_control()
    m = mesh(tau=0.1, h=0.1, R=20)
    a = solve_parabolic(p, m, SolverConfig(threads=1)).values
    b = solve_parabolic(p, m, SolverConfig(threads=4)).values
    assert np.array_equal(a, b)
