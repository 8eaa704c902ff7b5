"""Empirical regularity, comparison and convergence-rate measurements."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aux_solvers import EllipticConfig, SemidiscreteConfig, solve_elliptic, solve_semidiscrete
from .errors import ConfigurationError, ConvergenceError
from .fd_ops import differences
from .implicit_solver import SolverConfig, solve_parabolic
from .lattice import GridFunction, Mesh, MeshSpec, build_mesh
from .problems import ControlProblem, ExactSolution

# errors below this are treated as exact and excluded from rate fits
EXACT_FLOOR = 1e-10


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return repr(x)
    return str(x)


class _Report:
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default, **kw)

    def to_text(self) -> str:
        rows = [(k, v) for k, v in self.to_dict().items() if not isinstance(v, (list, dict))]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {_fmt(v)}" for k, v in rows)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


@dataclass
class RegularityReport(_Report):
    lipschitz_x: float
    holder_t: float
    c0_used: float = 0.0


def measure_regularity(u: GridFunction) -> RegularityReport:
    """Largest lattice difference quotients in x and Hoelder-1/2 quotients in t.

    The spatial statistic scans in-box neighbour pairs ``|u(t,x+h l_k) - u(t,x)| / (h |l_k|)``;
    the temporal one scans every pair of levels with ``0 < |t - s| <= 1`` at fixed x.
    """
    mesh = u.mesh
    vals = u.values
    lip = 0.0
    nbr, outside = mesh.neighbor_table, mesh.outside_table
    for k in range(mesh.n_dirs):
        inside = ~outside[k]
        step = mesh.h * float(np.linalg.norm(mesh.directions[k]))
        if step == 0:
            continue
        diff = np.abs(vals[:, nbr[k, inside]] - vals[:, inside])
        lip = max(lip, float(diff.max(initial=0.0)) / step)
    hold = 0.0
    t = mesh.time_levels
    for lag in range(1, len(t)):
        gaps = t[lag:] - t[:-lag]
        ok = gaps <= 1.0 + 1e-12
        if not ok.any():
            break
        diff = np.abs(vals[lag:][ok] - vals[:-lag][ok]).max(axis=1)
        hold = max(hold, float((diff / np.sqrt(gaps[ok])).max()))
    return RegularityReport(lipschitz_x=lip, holder_t=hold)


@dataclass
class ComparisonReport(_Report):
    applicable: bool
    violation: float
    passed: bool
    reason: str = ""
    threshold: float = 1e-8


def _sampled_order(problem_lo: ControlProblem, problem_hi: ControlProblem, mesh: Mesh) -> str:
    if len(problem_lo.controls) != len(problem_hi.controls):
        return "control sets differ in size"
    x = mesh.positions
    if np.any(problem_lo.terminal(x) > problem_hi.terminal(x) + 1e-14):
        return "g1 <= g2 fails on the mesh"
    times = mesh.time_levels[:-1] if (problem_lo.time_dependent or problem_hi.time_dependent) else mesh.time_levels[:1]
    for t in times:
        if np.any(problem_lo.coefficients(t, x).f > problem_hi.coefficients(t, x).f + 1e-14):
            return f"f1 <= f2 fails at t={t:g}"
    return ""


def check_comparison(
    problem1: ControlProblem,
    problem2: ControlProblem,
    mesh: Mesh,
    config: SolverConfig | None = None,
    threshold: float = 1e-8,
) -> ComparisonReport:
    """Solve both problems and report ``max (u1 - u2)_+``; ordered data must give ordered solutions."""
    reason = _sampled_order(problem1, problem2, mesh)
    if reason:
        return ComparisonReport(False, float("nan"), False, reason, threshold)
    u1 = solve_parabolic(problem1, mesh, config)
    u2 = solve_parabolic(problem2, mesh, config)
    violation = float(max(0.0, (u1.values - u2.values).max()))
    return ComparisonReport(True, violation, violation <= threshold, "", threshold)


def fit_order(hs: Sequence[float], errors: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope and exp(intercept) of log(error) against log(h)."""
    slope, intercept = np.polyfit(np.log(hs), np.log(errors), 1)
    return float(slope), float(math.exp(intercept))


@dataclass
class ConvergenceReport(_Report):
    mesh_params: list
    errors: list
    fitted_order: float | None
    fitted_constant: float | None
    pairwise_orders: list = field(default_factory=list)
    margins: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", "tau", "sup_error", "order_pairwise"])
        orders = [None] + list(self.pairwise_orders)
        for (tau, h), err, order in zip(self.mesh_params, self.errors, orders):
            w.writerow([repr(float(h)), repr(float(tau)), repr(float(err)), "" if order is None else repr(float(order))])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'h':>12} {'tau':>12} {'sup_error':>14} {'order':>8}"]
        orders = [None] + list(self.pairwise_orders)
        for (tau, h), err, order in zip(self.mesh_params, self.errors, orders):
            o = "" if order is None else f"{order:8.3f}"
            lines.append(f"{h:12.6g} {tau:12.6g} {err:14.6e} {o:>8}")
        if self.fitted_order is not None:
            lines.append(f"fitted order {self.fitted_order:.4f}, constant {self.fitted_constant:.4g}")
        else:
            lines.append("fitted order: skipped (errors at round-off level)")
        return "\n".join(lines)


def sup_error(
    u: GridFunction, oracle: ExactSolution, margin: int, levels: Sequence[int] | None = None
) -> float:
    """Sup of |u - v| over the given levels (default all) and nodes at least ``margin`` layers inside."""
    mesh = u.mesh
    mask = mesh.interior_mask(margin)
    if not mask.any():
        raise ConfigurationError(
            f"box radius R={mesh.R} leaves no interior after a {margin}-layer margin; increase R"
        )
    x = mesh.positions[mask]
    levels = range(mesh.n_time + 1) if levels is None else levels
    return max(float(np.abs(u.values[j, mask] - oracle(mesh.time_levels[j], x, mesh.T)).max()) for j in levels)


def default_margin(problem: ControlProblem, mesh: Mesh) -> int:
    return int(math.ceil(problem.K * mesh.T / mesh.h - 1e-9))


def convergence_study(
    problem: ControlProblem,
    oracle: ExactSolution,
    mesh_family: Sequence[MeshSpec],
    config: SolverConfig | SemidiscreteConfig | None = None,
    scheme: str = "implicit",
    margin: Callable[[Mesh], int] | None = None,
) -> ConvergenceReport:
    """Solve on each mesh, measure interior sup errors against the oracle and fit the rate."""
    if len(mesh_family) < 3:
        raise ConfigurationError("a rate fit needs at least 3 meshes")
    params, errors, margins, failures = [], [], [], []
    for spec in mesh_family:
        mesh = build_mesh(spec)
        try:
            if scheme == "implicit":
                u = solve_parabolic(problem, mesh, config)
            elif scheme == "semidiscrete":
                u = solve_semidiscrete(problem, mesh, config)
            else:
                raise ConfigurationError(f"unknown scheme {scheme!r}")
        except ConvergenceError as exc:
            failures.append(f"h={spec.h:g}: {exc}")
            continue
        m = margin(mesh) if margin else default_margin(problem, mesh)
        params.append((spec.tau, spec.h))
        errors.append(sup_error(u, oracle, m))
        margins.append(m)
    if len(errors) < 3:
        raise ConvergenceError(f"only {len(errors)} meshes solved; a fit needs 3 ({'; '.join(failures)})")
    hs = [h for _, h in params]
    pairwise = [
        float(math.log(errors[i] / errors[i + 1]) / math.log(hs[i] / hs[i + 1]))
        if min(errors[i], errors[i + 1]) > EXACT_FLOOR
        else None
        for i in range(len(errors) - 1)
    ]
    if max(errors) <= EXACT_FLOOR:
        order = constant = None
    else:
        order, constant = fit_order(hs, errors)
    cfg = config.as_dict() if hasattr(config, "as_dict") else (asdict(config) if config is not None else {})
    cfg = {k: (v.kind if hasattr(v, "kind") else v) for k, v in cfg.items()}
    cfg["scheme"] = scheme
    return ConvergenceReport(params, errors, order, constant, pairwise, margins, failures, cfg)


def elliptic_horizon_gaps(
    problem: ControlProblem,
    mesh: Mesh,
    horizons: Sequence[float],
    tol: float = 1e-10,
    config: SolverConfig | None = None,
) -> list[float]:
    """Sup gaps between the stationary solution and the t = 0 parabolic solution with g = 0, per horizon."""
    stationary = solve_elliptic(problem, mesh, EllipticConfig(tol=tol)).u
    zero_g = problem.replace(g=lambda x: np.zeros(len(np.atleast_2d(x))))
    gaps = []
    for T in horizons:
        m = build_mesh(mesh.spec.replace(T=float(T)))
        u = solve_parabolic(zero_g, m, config)
        gaps.append(float(np.abs(u.values[0] - stationary).max()))
    return gaps


def check_elliptic_limit(
    problem: ControlProblem,
    mesh: Mesh,
    horizons: Sequence[float],
    tol: float = 1e-10,
    config: SolverConfig | None = None,
) -> float:
    """Gap at the largest horizon; see :func:`elliptic_horizon_gaps` for the whole sequence."""
    return elliptic_horizon_gaps(problem, mesh, horizons, tol, config)[-1]


@dataclass
class ObstacleResiduals(_Report):
    """``operator``: max (Delta_h u - u)_+; ``obstacle``: max (g_obs - u)_+;
    ``free``: max |Delta_h u - u| where u > g_obs + margin."""

    operator: float
    obstacle: float
    free: float
    margin: float

    def as_tuple(self) -> tuple[float, float, float]:
        return self.operator, self.obstacle, self.free


def check_obstacle_complementarity(
    u: np.ndarray,
    g_obs: Callable,
    mesh: Mesh,
    M: float | None = None,
    margin: float | None = None,
    interior: int = 1,
) -> ObstacleResiduals:
    """Complementarity residuals of ``max(Delta u - u, g_obs - u) = 0`` on the lattice.

    The free set is ``u > g_obs + margin`` with margin 10/M by default.
    Nodes within ``interior`` layers of the box edge are skipped because
    their second difference sees the exterior policy.
    """
    if margin is None:
        margin = 10.0 / M if M else 1e-2
    u = np.asarray(u, dtype=float)
    second, _ = differences(mesh, u, None)
    op = second.sum(axis=0) - u
    obs = np.broadcast_to(np.asarray(g_obs(mesh.positions), dtype=float), u.shape)
    keep = mesh.interior_mask(interior)
    r1 = float(np.maximum(op[keep], 0.0).max(initial=0.0))
    r2 = float(np.maximum(obs[keep] - u[keep], 0.0).max(initial=0.0))
    free = keep & (u > obs + margin)
    r3 = float(np.abs(op[free]).max(initial=0.0))
    return ObstacleResiduals(r1, r2, r3, margin)
