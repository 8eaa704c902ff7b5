"""Implicit scheme solved backward in time, one slice at a time.

On each level t_j the unknown spatial field u solves

    (u_next - u) / tau + sup_alpha [L_h^alpha u + f^alpha] = 0,

where ``u_next`` is the already computed field at ``(t_j + tau) ^ T``.  The
slice is the fixed point of the monotone contraction

    G[w] = sup_alpha [ w + eps * ((u_next - w)/tau + L_h^alpha w + f^alpha) ],

whose weights on u_next, the neighbours and w itself are all nonnegative
once eps is small enough.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .fd_ops import L_h_all, affine_all, differences
from .lattice import ExteriorPolicy, GridFunction, Mesh, shifted_values
from .problems import Coefficients, ControlProblem

log = logging.getLogger(__name__)

SAFETY = 0.95


@dataclass
class SolverConfig:
    """Knobs shared by the slice solvers.

    ``tol`` is the sup-norm stopping threshold on ``|G[w] - w|``; when None it
    defaults to ``fixed_point_error * (1 - delta)`` so the distance to the true
    fixed point is at most ``fixed_point_error``.  ``threads`` is recorded for
    reports only: sweeps are vectorized and single-threaded, hence bit-identical.
    """

    method: str = "banach"
    tol: float | None = None
    fixed_point_error: float = 1e-10
    max_iter: int | None = None
    exterior: ExteriorPolicy = field(default_factory=ExteriorPolicy)
    threads: int = 1

    def __post_init__(self):
        if self.method not in ("banach", "howard"):
            from .errors import ConfigurationError

            raise ConfigurationError(f"unknown slice method {self.method!r} (banach|howard)")

    def slice_tol(self, params: "ContractionParams") -> float:
        if self.tol is not None:
            return self.tol
        return self.fixed_point_error * (1.0 - params.contraction_factor)

    def iteration_cap(self) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return 10**6 if self.method == "banach" else 10**3

    def as_dict(self) -> dict:
        return dict(
            method=self.method,
            tol=self.tol,
            fixed_point_error=self.fixed_point_error,
            max_iter=self.iteration_cap(),
            exterior=self.exterior.kind,
            threads=self.threads,
        )


@dataclass(frozen=True)
class ContractionParams:
    """Relaxation weight eps, time discount gamma and the guaranteed contraction factor."""

    epsilon: float
    gamma: float
    contraction_factor: float
    tau: float
    h: float

    @property
    def nu(self) -> float:
        return (1.0 - self.gamma) / self.tau

    @property
    def p_tau(self) -> float:
        return self.epsilon * self.gamma / self.tau

    def weights(self, coefs: Coefficients) -> tuple[np.ndarray, np.ndarray]:
        """Neighbour weights (n_controls, 2*d1, n) and self weight (n_controls, n)."""
        eps, h = self.epsilon, self.h
        d1 = coefs.a.shape[1]
        a2 = np.concatenate([coefs.a, coefs.a], axis=1)
        p_k = eps * a2 / h**2 + eps * coefs.b / h
        p = 1.0 - self.p_tau - p_k.sum(axis=1) - eps * self.nu - eps * coefs.c
        assert p_k.shape[1] == 2 * d1
        return p_k, p


def _max_rate(coefs: Coefficients, h: float) -> float:
    return float((coefs.off_diagonal(h) + coefs.c).max())


def slice_coefficients(problem: ControlProblem, mesh: Mesh) -> list[Coefficients]:
    """Coefficients at every level t_0..t_{n-1} (one shared entry when time independent)."""
    if not problem.time_dependent:
        return [problem.coefficients(float(mesh.time_levels[0]), mesh.positions)]
    return [problem.coefficients(float(t), mesh.positions) for t in mesh.time_levels[:-1]]


def params_for(coefs_list, tau: float, h: float, gamma: float = 1.0) -> ContractionParams:
    rate = max(_max_rate(c, h) for c in coefs_list)
    eps = SAFETY / (1.0 / tau + rate)
    # per slice u_next is data, so the whole eps/tau weight leaves the unknown
    delta = 1.0 - eps / tau if gamma == 1.0 else 1.0 - eps * (1.0 - gamma) / tau
    return ContractionParams(epsilon=eps, gamma=gamma, contraction_factor=delta, tau=tau, h=h)


def choose_contraction_params(problem: ControlProblem, mesh: Mesh, gamma: float = 1.0) -> ContractionParams:
    """eps = 0.95 / (1/tau + max [sum_k 2a_k/h^2 + sum |b_k|/h + c]) and delta = 1 - eps (1-gamma)/tau.

    With gamma = 1 (the per-slice form) delta = 1 - eps/tau.
    """
    return params_for(slice_coefficients(problem, mesh), mesh.tau, mesh.h, gamma)


def _exterior(mesh: Mesh, problem: ControlProblem, policy: ExteriorPolicy, t: float):
    return policy.exterior_values(mesh, t, problem.terminal)


def _apply_map(mesh, coefs, params, u_next, w, ext) -> np.ndarray:
    inner = (u_next - w) / params.tau + L_h_all(coefs, mesh, w, ext) + coefs.f
    return (w + params.epsilon * inner).max(axis=0)


def slice_fixed_point_map(
    problem: ControlProblem,
    mesh: Mesh,
    params: ContractionParams,
    u_next: np.ndarray,
    w: np.ndarray,
    t: float,
    exterior: ExteriorPolicy = ExteriorPolicy(),
    coefs: Coefficients | None = None,
) -> np.ndarray:
    """One application of G at level t."""
    if coefs is None:
        coefs = problem.coefficients(t, mesh.positions)
    return _apply_map(mesh, coefs, params, u_next, w, _exterior(mesh, problem, exterior, t))


@dataclass
class SliceSolveStats:
    iterations: int
    final_residual: float
    method: str


def _banach(mesh, coefs, params, u_next, ext, tol, cap):
    w = u_next.copy()
    residual = np.inf
    for it in range(1, cap + 1):
        new = _apply_map(mesh, coefs, params, u_next, w, ext)
        residual = float(np.abs(new - w).max())
        w = new
        if residual <= tol:
            return w, SliceSolveStats(it, residual, "banach")
    raise ConvergenceError(f"Banach iteration hit the cap of {cap} sweeps", last_residual=residual)


def _policy_solve(mesh, coefs, policy, params, u_next, ext, tol, w, cap=10**6):
    # Jacobi sweeps for the frozen-control linear slice system
    cols = np.arange(mesh.n_nodes)
    a = coefs.a[policy, :, cols].T
    b = coefs.b[policy, :, cols].T
    c = coefs.c[policy, cols]
    f = coefs.f[policy, cols]
    h2, h = mesh.h**2, mesh.h
    w_nb = np.concatenate([a, a], axis=0) / h2 + b / h
    diag = 1.0 / params.tau + w_nb.sum(axis=0) + c
    rhs = u_next / params.tau + f
    for _ in range(cap):
        nb = shifted_values(mesh, w, ext)
        new = (rhs + (w_nb * nb).sum(axis=0)) / diag
        change = float(np.abs(new - w).max())
        w = new
        if change <= tol:
            return w
    raise ConvergenceError("frozen-policy sweeps did not converge", last_residual=change)


def _howard(mesh, coefs, params, u_next, ext, tol, cap):
    w = u_next.copy()
    policy = None
    residual = np.inf
    for it in range(1, cap + 1):
        second, first = differences(mesh, w, ext)
        vals = (u_next - w) / params.tau + affine_all(coefs, second, first, w)
        new_policy = np.argmax(vals, axis=0)
        residual = params.epsilon * float(np.abs(vals.max(axis=0)).max())
        if residual <= tol and policy is not None and np.array_equal(new_policy, policy):
            return w, SliceSolveStats(it, residual, "howard")
        policy = new_policy
        w = _policy_solve(mesh, coefs, policy, params, u_next, ext, 0.1 * tol, w)
    raise ConvergenceError(f"policy iteration hit the cap of {cap} outer steps", last_residual=residual)


def solve_slice(
    problem: ControlProblem,
    mesh: Mesh,
    params: ContractionParams,
    u_next: np.ndarray,
    t: float,
    config: SolverConfig | None = None,
    coefs: Coefficients | None = None,
) -> tuple[np.ndarray, SliceSolveStats]:
    """Fixed point of the slice map at level t, starting from u_next."""
    config = config or SolverConfig()
    if coefs is None:
        coefs = problem.coefficients(t, mesh.positions)
    ext = _exterior(mesh, problem, config.exterior, t)
    tol = config.slice_tol(params)
    u_next = np.asarray(u_next, dtype=float)
    if config.method == "howard":
        return _howard(mesh, coefs, params, u_next, ext, tol, config.iteration_cap())
    return _banach(mesh, coefs, params, u_next, ext, tol, config.iteration_cap())


def solve_parabolic(problem: ControlProblem, mesh: Mesh, config: SolverConfig | None = None) -> GridFunction:
    """March the implicit scheme from u(T) = g down to t = 0.

    Per-slice statistics are attached as ``result.stats``.
    """
    config = config or SolverConfig()
    coefs_list = slice_coefficients(problem, mesh)
    params = params_for(coefs_list, mesh.tau, mesh.h)
    u = GridFunction(mesh)
    u.values[-1] = problem.terminal(mesh.positions)
    stats: list[SliceSolveStats] = []
    for j in range(mesh.n_time - 1, -1, -1):
        coefs = coefs_list[j] if problem.time_dependent else coefs_list[0]
        try:
            u.values[j], st = solve_slice(problem, mesh, params, u.values[j + 1], float(mesh.time_levels[j]), config, coefs)
        except ConvergenceError as exc:
            raise ConvergenceError(f"slice {j} (t={mesh.time_levels[j]:g}): {exc}", exc.last_residual, slice_index=j) from exc
        stats.append(st)
    stats.reverse()
    u.stats = stats
    u.params = params
    log.debug("solved %d slices, max sweeps %d", len(stats), max((s.iterations for s in stats), default=0))
    return u


def solve_global(
    problem: ControlProblem,
    mesh: Mesh,
    gamma: float = 0.5,
    exterior: ExteriorPolicy = ExteriorPolicy(),
    fixed_point_error: float = 1e-11,
    max_iter: int = 10**6,
) -> GridFunction:
    """Whole space-time fixed point with the discount weight xi(t) = gamma^{-(levels to T)}.

    Slow and memory hungry; intended as an independent check of
    :func:`solve_parabolic` on tiny meshes.
    """
    n = mesh.n_time
    coefs_list = slice_coefficients(problem, mesh)
    params = params_for(coefs_list, mesh.tau, mesh.h, gamma=gamma)
    eps, tau = params.epsilon, mesh.tau
    xi = gamma ** -(n - np.arange(n + 1, dtype=float))
    g = problem.terminal(mesh.positions)
    exts = [_exterior(mesh, problem, exterior, float(t)) for t in mesh.time_levels[:-1]]
    v = np.tile(g, (n + 1, 1))
    tol = fixed_point_error * (1.0 - params.contraction_factor)
    for _ in range(max_iter):
        u = xi[:, None] * v
        new = v.copy()
        for j in range(n):
            coefs = coefs_list[j] if problem.time_dependent else coefs_list[0]
            ext = exts[j]
            inner = (u[j + 1] - u[j]) / tau + (L_h_all(coefs, mesh, u[j], ext) + coefs.f).max(axis=0)
            new[j] = v[j] + eps / xi[j] * inner
        change = float(np.abs(new - v).max())
        v = new
        if change <= tol:
            out = GridFunction(mesh, xi[:, None] * v)
            out.params = params
            return out
    raise ConvergenceError("global fixed-point iteration hit its cap", last_residual=change)
