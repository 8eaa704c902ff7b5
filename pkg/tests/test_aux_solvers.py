import numpy as np
import pytest

from bellman_fd import (
    ConfigurationError,
    ControlProblem,
    ConvergenceError,
    EllipticConfig,
    ExteriorPolicy,
    MeshSpec,
    SemidiscreteConfig,
    build_mesh,
    catalog,
    default_mesh_spec,
    solve_elliptic,
    solve_parabolic,
    solve_semidiscrete,
)
from bellman_fd.aux_solvers import elliptic_residual, max_rate
from bellman_fd.diagnostics import fit_order


def mesh1d(T=1.0, tau=0.1, h=0.1, R=40):
    return build_mesh(MeshSpec(T=T, tau=tau, h=h, directions=[[1.0]], index_radius=R))


def test_semidiscrete_const():
    p, _ = catalog("const")
    u = solve_semidiscrete(p, mesh1d(tau=0.3, h=0.5, R=4))
    assert np.abs(u.values - 1).max() <= 1e-12


def test_semidiscrete_step_bound():
    p, _ = catalog("heat1d")
    m = mesh1d(h=0.1)
    rate = max_rate(p, m, m.time_levels)
    assert rate == pytest.approx(100.0)
    u = solve_semidiscrete(p, m)
    assert u.internal_step == pytest.approx(0.9 / rate)
    with pytest.raises(ConfigurationError, match="monotonicity"):
        solve_semidiscrete(p, m, SemidiscreteConfig(internal_step=0.02))
    with pytest.raises(ConfigurationError):
        solve_semidiscrete(p, m, SemidiscreteConfig(safety=1.5))


def test_semidiscrete_vs_implicit_heat():
    p, _ = catalog("heat1d")
    m = build_mesh(default_mesh_spec(p))
    ui = solve_parabolic(p, m)
    us = solve_semidiscrete(p, m)
    gap = np.abs(ui.values - us.values).max()
    assert gap <= 5 * (m.tau + us.internal_step) * np.abs(ui.values).max()


def test_semidiscrete_transport_rate():
    p, ex = catalog("transport_kink")
    hs = [0.2, 0.1, 0.05]
    errs = []
    for h in hs:
        m = mesh1d(tau=h, h=h, R=int(round(4 / h)))
        u = solve_semidiscrete(p, m)
        inner = m.interior_mask(int(np.ceil(1.0 / h)))
        errs.append(max(np.abs(u.values[j, inner] - ex(t, m.positions[inner], 1.0)).max() for j, t in enumerate(m.time_levels)))
    assert fit_order(hs, errs)[0] >= 0.5


def test_elliptic_trivial():
    p = ControlProblem([0], c=lambda *a: 1.0, f=lambda *a: 1.0, lam=1.0, time_dependent=False)
    m = mesh1d(h=0.5, R=5)
    for mode in ("value_iteration", "long_horizon"):
        res = solve_elliptic(p, m, EllipticConfig(mode=mode, tol=1e-10))
        assert np.abs(res.u - 1).max() <= 1e-10


def test_elliptic_requires_lambda():
    p, _ = catalog("twocontrol_diffusion")
    with pytest.raises(ConfigurationError):
        solve_elliptic(p, mesh1d())
    with pytest.raises(ConfigurationError):
        solve_elliptic(catalog("const")[0], mesh1d(), EllipticConfig(mode="newton"))


def test_elliptic_modes_agree():
    p, _ = catalog("twocontrol_diffusion", lam=1.0)
    m = build_mesh(default_mesh_spec(p))
    tol = 1e-8
    a = solve_elliptic(p, m, EllipticConfig(mode="value_iteration", tol=tol))
    b = solve_elliptic(p, m, EllipticConfig(mode="long_horizon", tol=tol))
    assert np.abs(a.u - b.u).max() <= 10 * tol
    assert b.horizon is not None and b.horizon <= EllipticConfig().T_max


def test_elliptic_residual_decreases_and_final_below_tol():
    p, _ = catalog("twocontrol_diffusion", lam=1.0)
    m = build_mesh(default_mesh_spec(p))
    res = solve_elliptic(p, m, EllipticConfig(tol=1e-9))
    hist = np.array(res.residual_history[:50])
    assert np.all(np.diff(hist[1:]) <= 1e-15)
    assert np.abs(elliptic_residual(p, m, res.u)).max() <= 1e-9


def test_elliptic_unique_fixed_point():
    p, _ = catalog("twocontrol_diffusion", lam=1.0)
    m = build_mesh(default_mesh_spec(p))
    rng = np.random.default_rng(0)
    tol = 1e-9
    sols = [
        solve_elliptic(p, m, EllipticConfig(tol=tol, initial=rng.normal(scale=5, size=m.n_nodes))).u for _ in range(2)
    ]
    assert np.abs(sols[0] - sols[1]).max() <= 2 * tol


def _cos_elliptic():
    # a = 1/2, c = 1, u = cos x  =>  f = u - u''/2 = 1.5 cos x
    p = ControlProblem(
        [0],
        sigma=lambda *a: 1.0,
        c=lambda *a: 1.0,
        f=lambda al, t, x: 1.5 * np.cos(x[:, 0]),
        lam=1.0,
        time_dependent=False,
    )
    return p, lambda x: np.cos(x[:, 0])


def test_elliptic_manufactured_rate():
    p, exact = _cos_elliptic()
    hs = [0.4, 0.2, 0.1, 0.05]
    errs = []
    for h in hs:
        m = mesh1d(h=h, R=int(round(8 / h)))
        ext = ExteriorPolicy.dirichlet(lambda t, x: exact(x))
        u = solve_elliptic(p, m, EllipticConfig(tol=1e-11, exterior=ext)).u
        errs.append(np.abs(u - exact(m.positions)).max())
    assert np.all(np.diff(errs) < 0)
    assert fit_order(hs, errs)[0] >= 0.5


def test_long_horizon_reports_slow_settling():
    p, _ = catalog("twocontrol_diffusion", lam=0.01)
    m = build_mesh(default_mesh_spec(p))
    with pytest.raises(ConvergenceError, match="lambda"):
        solve_elliptic(p, m, EllipticConfig(mode="long_horizon", tol=1e-8, T_max=5.0))
