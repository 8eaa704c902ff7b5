import numpy as np
import pytest

from bellman_fd import ConfigurationError, ExteriorPolicy, GridFunction, MeshSpec, build_mesh, read_grid_csv, tau_T
from bellman_fd.lattice import neighbor_value, signed_slot, time_levels


def mesh1d(T=1.0, tau=0.25, h=0.5, R=2, origin=None):
    return build_mesh(MeshSpec(T=T, tau=tau, h=h, directions=[[1.0]], origin=origin, index_radius=R))


def test_levels_multiple():
    np.testing.assert_array_equal(time_levels(1.0, 0.25), [0, 0.25, 0.5, 0.75, 1.0])


def test_levels_short_last_step():
    lv = time_levels(1.0, 0.4)
    np.testing.assert_allclose(lv, [0, 0.4, 0.8, 1.0])
    assert lv[-1] == 1.0


def test_levels_near_multiple_has_no_empty_step():
    # 0.1 * 10 is not exactly 1 in binary; no zero-length tail step
    lv = time_levels(1.0, 0.1)
    assert len(lv) == 11 and np.all(np.diff(lv) > 0.09)


def test_levels_uniform_gaps():
    lv = time_levels(3.0, 0.07)
    gaps = np.diff(lv)
    assert np.all(np.abs(gaps[:-1] - 0.07) <= 4 * np.spacing(3.0))
    assert 0 < gaps[-1] <= 0.07


def test_positions_affine():
    m = mesh1d()
    np.testing.assert_allclose(m.positions[:, 0], [-1, -0.5, 0, 0.5, 1])


def test_positions_with_origin_and_two_directions():
    spec = MeshSpec(T=1, tau=0.5, h=0.1, directions=[[1, 0], [1, 1]], origin=(2.0, -1.0), index_radius=3)
    m = build_mesh(spec)
    i = (2, -1)
    np.testing.assert_allclose(m.position(i), [2.0 + 0.1 * (2 - 1), -1.0 - 0.1])
    np.testing.assert_allclose(m.positions[m.flat_index(i)], m.position(i))


def test_non_spanning_directions_allowed():
    # two parallel directions in the plane: index space is still a box
    m = build_mesh(MeshSpec(T=1, tau=0.5, h=0.1, directions=[[1, 0], [2, 0]], index_radius=2))
    assert m.n_nodes == 25 and m.dim == 2 and m.n_dirs == 2


def test_round_trip_spec():
    spec = MeshSpec(T=2.0, tau=0.3, h=0.05, directions=[[1.0]], index_radius=7)
    m = build_mesh(spec)
    assert (m.tau, m.h, m.T, m.R) == (0.3, 0.05, 2.0, 7)
    assert m.n_time == 7


@pytest.mark.parametrize(
    "kw",
    [dict(T=0.0), dict(tau=-1.0), dict(h=0.0), dict(index_radius=0), dict(directions=[])],
)
def test_bad_specs_rejected(kw):
    base = dict(T=1.0, tau=0.1, h=0.1, directions=[[1.0]], index_radius=3)
    base.update(kw)
    with pytest.raises(ConfigurationError):
        build_mesh(MeshSpec(**base))


def test_tau_T_values():
    m = mesh1d(tau=0.4)
    assert tau_T(m, 0.4) == pytest.approx(0.4)
    assert tau_T(m, 0.8) == pytest.approx(0.2)
    assert tau_T(m, 0.0) == pytest.approx(0.4)
    for t in m.time_levels[:-1]:
        assert t + tau_T(m, t) == pytest.approx(min(t + 0.4, 1.0))


@pytest.mark.parametrize("t", [1.0, 0.5, -0.1])
def test_tau_T_domain(t):
    with pytest.raises(ValueError):
        tau_T(mesh1d(tau=0.4), t)


def test_signed_slots():
    assert [signed_slot(k, 2) for k in (1, 2, -1, -2)] == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        signed_slot(0, 2)


def test_neighbor_value_policies():
    m = mesh1d()
    u = GridFunction(m, np.tile(np.arange(5.0), (m.n_time + 1, 1)))
    assert neighbor_value(u, 0, (0,), 1) == 3.0
    assert neighbor_value(u, 0, (2,), 1) == 4.0  # clamp
    assert neighbor_value(u, 0, (-2,), -1) == 0.0
    g = lambda x: np.where(np.abs(x[:, 0]) > 1, 0.0, 9.0)
    assert neighbor_value(u, 0, (2,), 1, ExteriorPolicy.extend_terminal(), g) == 0.0
    assert neighbor_value(u, 0, (2,), 1, ExteriorPolicy.constant(-3.5)) == -3.5
    assert neighbor_value(u, 1, (-2,), -1, ExteriorPolicy.dirichlet(lambda t, x: t + x[:, 0])) == pytest.approx(0.25 - 1.5)


def test_exterior_values_shape_and_clamp():
    m = mesh1d()
    assert ExteriorPolicy.clamp().exterior_values(m, 0.0) is None
    ext = ExteriorPolicy.constant(2.0).exterior_values(m, 0.0)
    assert ext.shape == (2, 5)


def test_unknown_policy():
    with pytest.raises(ConfigurationError):
        ExteriorPolicy("reflect")
    with pytest.raises(ConfigurationError):
        ExteriorPolicy("dirichlet")


def test_grid_shape_enforced():
    m = mesh1d()
    with pytest.raises(ValueError):
        GridFunction(m, np.zeros((2, 5)))


def test_csv_round_trip():
    m = build_mesh(MeshSpec(T=1.0, tau=0.4, h=0.1, directions=[[1, 0], [0.5, 1]], index_radius=2))
    rng = np.random.default_rng(3)
    u = GridFunction(m, rng.normal(size=(m.n_time + 1, m.n_nodes)) / 3)
    text = u.to_csv()
    back = read_grid_csv(text)
    np.testing.assert_array_equal(back.values, u.values)
    assert back.mesh.n_dirs == 2 and back.mesh.tau == 0.4
    assert text.splitlines()[0].startswith("T,tau,h,d,d1,R")


def test_csv_is_deterministic(tmp_path):
    m = mesh1d()
    u = GridFunction(m, np.full((m.n_time + 1, m.n_nodes), 0.1))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    u.to_csv(a)
    u.to_csv(b)
    assert a.read_bytes() == b.read_bytes()
    assert "0.1" in a.read_text()
