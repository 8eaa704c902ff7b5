"""Semidiscrete (space-only) flow and the stationary Bellman equation.

``solve_semidiscrete`` integrates ``u_t + sup_a[L_h^a u + f^a] = 0`` backward
with explicit Euler sub-steps short enough that every stencil weight stays
nonnegative.  ``solve_elliptic`` finds the bounded solution of
``sup_a[L_h^a u + f^a] = 0`` either by relaxed value iteration or as the
long-time limit of the implicit parabolic scheme with zero terminal data.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ConvergenceError
from .fd_ops import L_h_all
from .implicit_solver import SAFETY, SolverConfig, params_for, solve_slice
from .lattice import ExteriorPolicy, GridFunction, Mesh
from .problems import ControlProblem


@dataclass
class SemidiscreteConfig:
    """``internal_step`` of None means the largest step the monotonicity bound allows times ``safety``."""

    internal_step: float | None = None
    safety: float = 0.9
    exterior: ExteriorPolicy = ExteriorPolicy()


def max_rate(problem: ControlProblem, mesh: Mesh, times) -> float:
    """max over nodes, controls and the given times of ``sum_k 2a_k/h^2 + sum |b_k|/h + c``."""
    if not problem.time_dependent:
        times = list(times)[:1]
    rate = 0.0
    for t in times:
        co = problem.coefficients(float(t), mesh.positions)
        rate = max(rate, float((co.off_diagonal(mesh.h) + co.c).max()))
    return rate


def solve_semidiscrete(
    problem: ControlProblem, mesh: Mesh, config: SemidiscreteConfig | None = None
) -> GridFunction:
    """Explicit Euler sub-stepping of the spatially discrete flow, sampled at mesh levels.

    The sub-step on each mesh interval is the interval length divided evenly
    into pieces no longer than ``internal_step``.  ``result.internal_step``
    records the bound actually used.
    """
    config = config or SemidiscreteConfig()
    if not 0 < config.safety <= 1:
        raise ConfigurationError("safety must lie in (0, 1]")
    levels = mesh.time_levels
    rate = max_rate(problem, mesh, levels)
    bound = config.safety / rate if rate > 0 else math.inf
    step = config.internal_step
    if step is None:
        step = bound if math.isfinite(bound) else mesh.tau
    elif step <= 0 or step > bound * (1 + 1e-12):
        raise ConfigurationError(f"internal_step {step:g} violates the monotonicity bound {bound:g}")

    u = GridFunction(mesh)
    w = problem.terminal(mesh.positions)
    u.values[-1] = w
    coefs = None if problem.time_dependent else problem.coefficients(float(levels[0]), mesh.positions)
    for j in range(mesh.n_time - 1, -1, -1):
        t_hi, t_lo = float(levels[j + 1]), float(levels[j])
        n_sub = max(1, math.ceil((t_hi - t_lo) / step * (1 - 1e-12)))
        dt = (t_hi - t_lo) / n_sub
        for s in range(n_sub):
            t = t_hi - s * dt
            co = coefs if coefs is not None else problem.coefficients(t, mesh.positions)
            center = 1.0 - dt * (co.off_diagonal(mesh.h) + co.c)
            if center.min() < -1e-12:
                raise ConfigurationError(f"negative explicit weight {center.min():g} at t={t:g}")
            ext = config.exterior.exterior_values(mesh, t, problem.terminal)
            w = w + dt * (L_h_all(co, mesh, w, ext) + co.f).max(axis=0)
        u.values[j] = w
    u.internal_step = step
    return u


@dataclass
class EllipticConfig:
    """Stationary solve settings.

    ``tol`` bounds the sup-norm distance to the discrete solution; in
    ``long_horizon`` mode ``tau`` is the implicit time step (default: the mesh's)
    and ``T_max`` caps the horizon.
    """

    mode: str = "value_iteration"
    tol: float = 1e-8
    max_iter: int = 5 * 10**6
    T_max: float = 200.0
    tau: float | None = None
    exterior: ExteriorPolicy = ExteriorPolicy()
    initial: np.ndarray | None = None


@dataclass
class EllipticResult:
    u: np.ndarray
    iterations: int
    residual: float
    residual_history: list
    horizon: float | None = None


def elliptic_residual(problem: ControlProblem, mesh: Mesh, u: np.ndarray, exterior: ExteriorPolicy = ExteriorPolicy()):
    co = problem.coefficients(0.0, mesh.positions)
    ext = exterior.exterior_values(mesh, 0.0, problem.terminal)
    return (L_h_all(co, mesh, u, ext) + co.f).max(axis=0)


def _value_iteration(problem, mesh, config) -> EllipticResult:
    co = problem.coefficients(0.0, mesh.positions)
    rate = float((co.off_diagonal(mesh.h) + co.c).max())
    eps = SAFETY / rate
    ext = config.exterior.exterior_values(mesh, 0.0, problem.terminal)
    # |u - u*| <= |residual| / lambda, so stop on the residual scaled by lambda
    target = config.tol * min(1.0, problem.lam)
    u = np.zeros(mesh.n_nodes) if config.initial is None else np.array(config.initial, dtype=float)
    history = []
    for it in range(1, config.max_iter + 1):
        res = (L_h_all(co, mesh, u, ext) + co.f).max(axis=0)
        r = float(np.abs(res).max())
        if it <= 50 or it % 100 == 0:
            history.append(r)
        if r <= target:
            history.append(r)
            return EllipticResult(u, it, r, history)
        u = u + eps * res
    raise ConvergenceError("elliptic value iteration hit its cap", last_residual=r)


def _long_horizon(problem, mesh, config) -> EllipticResult:
    tau = config.tau or mesh.tau
    zero_g = problem.replace(g=lambda x: np.zeros(len(np.atleast_2d(x))), time_dependent=False)
    co = zero_g.coefficients(0.0, mesh.positions)
    params = params_for([co], tau, mesh.h)
    # one implicit step contracts differences by 1/(1 + lam*tau)
    q = 1.0 / (1.0 + problem.lam * tau)
    slice_cfg = SolverConfig(exterior=config.exterior, fixed_point_error=0.01 * config.tol * (1 - q))
    u = zero_g.terminal(mesh.positions)
    history = []
    n_steps = math.ceil(config.T_max / tau)
    for n in range(1, n_steps + 1):
        new, _ = solve_slice(zero_g, mesh, params, u, 0.0, slice_cfg, co)
        diff = float(np.abs(new - u).max())
        history.append(diff)
        u = new
        if diff * q / (1 - q) <= 0.5 * config.tol:
            return EllipticResult(u, n, diff, history, horizon=n * tau)
    raise ConvergenceError(
        f"long-horizon iteration did not settle by T={config.T_max:g}; lambda may be too small",
        last_residual=diff,
    )


def solve_elliptic(problem: ControlProblem, mesh: Mesh, config: EllipticConfig | None = None) -> EllipticResult:
    """Bounded solution of ``sup_a [L_h^a u + f^a] = 0`` on the spatial lattice of ``mesh``."""
    config = config or EllipticConfig()
    if problem.lam <= 0:
        raise ConfigurationError("the stationary problem needs lambda > 0")
    if problem.time_dependent:
        warnings.warn("coefficients flagged time dependent; using t = 0", stacklevel=2)
    if config.mode == "value_iteration":
        return _value_iteration(problem, mesh, config)
    if config.mode == "long_horizon":
        return _long_horizon(problem, mesh, config)
    raise ConfigurationError(f"unknown elliptic mode {config.mode!r}")
