"""Shaken problems: coefficients sampled at shifted arguments over an enlarged control set.

Given eps, a finite set S of points in the open unit ball and a finite set
Lambda of times in (-1, 0), the shaken problem uses controls
``(alpha, r, y)`` in ``A x Lambda x S`` and coefficients
``psi(t + eps^2 r, x + eps y)``.  With ``shift_terminal`` its terminal data is
``max_{y in S} g(x + eps y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .implicit_solver import SolverConfig, solve_parabolic
from .lattice import Mesh
from .problems import ControlProblem


def default_space_shifts(dim: int) -> list[tuple[float, ...]]:
    """``{0} U {+-e_j}`` scaled by 0.99."""
    pts = [tuple(0.0 for _ in range(dim))]
    for j in range(dim):
        for sign in (1.0, -1.0):
            e = [0.0] * dim
            e[j] = 0.99 * sign
            pts.append(tuple(e))
    return pts


DEFAULT_TIME_SHIFTS = (-0.25, -0.5, -0.75)


def circle_shifts(n: int = 8, radius: float = 0.99, dim: int = 2) -> list[tuple[float, ...]]:
    """n points on the circle of the given radius; in one dimension their first coordinates."""
    ang = 2 * np.pi * np.arange(n) / n
    pts = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    if dim == 1:
        return [(float(p[0]),) for p in pts]
    out = np.zeros((n, dim))
    out[:, :2] = pts
    return [tuple(map(float, p)) for p in out]


@dataclass(frozen=True)
class ShakeSpec:
    epsilon: float
    space_shifts: Sequence[Sequence[float]]
    time_shifts: Sequence[float] = field(default_factory=tuple)
    shift_terminal: bool = True

    def __post_init__(self):
        shifts = tuple(tuple(float(c) for c in np.atleast_1d(y)) for y in self.space_shifts)
        object.__setattr__(self, "space_shifts", shifts)
        object.__setattr__(self, "time_shifts", tuple(float(r) for r in self.time_shifts))
        if not shifts:
            raise ConfigurationError("the set of space shifts must be nonempty")
        for y in shifts:
            if np.linalg.norm(y) >= 1:
                raise ConfigurationError(f"space shift {y} is not inside the open unit ball")
        for r in self.time_shifts:
            if not -1 < r < 0:
                raise ConfigurationError(f"time shift {r} is not in (-1, 0)")


def shake(problem: ControlProblem, spec: ShakeSpec) -> ControlProblem:
    """The shaken problem; an empty Lambda means no time shift."""
    eps = float(spec.epsilon)
    ys = [np.asarray(y, dtype=float) for y in spec.space_shifts]
    if any(len(y) != problem.dim for y in ys):
        raise ConfigurationError("space shifts must have the problem's dimension")
    rs = list(spec.time_shifts) or [0.0]
    controls = [(alpha, r, tuple(y)) for alpha in problem.controls for r in rs for y in ys]

    def arg(control, t, x):
        alpha, r, y = control
        return alpha, t + eps * eps * r, np.atleast_2d(x) + eps * np.asarray(y)

    def sigma(control, k, t, x):
        alpha, ts, xs = arg(control, t, x)
        return problem.sigma(alpha, k, ts, xs)

    def b(control, k, t, x):
        alpha, ts, xs = arg(control, t, x)
        return problem.b(alpha, k, ts, xs)

    def c(control, t, x):
        alpha, ts, xs = arg(control, t, x)
        return problem.c(alpha, ts, xs)

    def f(control, t, x):
        alpha, ts, xs = arg(control, t, x)
        return problem.f(alpha, ts, xs)

    if spec.shift_terminal:

        def g(x):
            x = np.atleast_2d(x)
            return np.max([problem.terminal(x + eps * y) for y in ys], axis=0)

    else:
        g = problem.g

    time_dependent = problem.time_dependent
    return problem.replace(
        controls=controls,
        sigma=sigma,
        b=b,
        c=c,
        f=f,
        g=g,
        time_dependent=time_dependent,
        name=f"{problem.name}~shaken",
    )


def boundary_margin(problem: ControlProblem, mesh: Mesh, epsilon: float) -> int:
    """Index layers within reach of shifted evaluations, ``ceil(K eps / h)``."""
    return int(math.ceil(problem.K * abs(epsilon) / mesh.h - 1e-12))


def shake_gap(
    problem: ControlProblem,
    mesh: Mesh,
    spec: ShakeSpec,
    config: SolverConfig | None = None,
    reference=None,
) -> float:
    """Sup-norm gap between shaken and original solutions away from the box edge.

    ``reference`` may carry an already computed original solution.
    """
    config = config or SolverConfig()
    base = reference if reference is not None else solve_parabolic(problem, mesh, config)
    if spec.epsilon == 0:
        return 0.0
    shaken = solve_parabolic(shake(problem, spec), mesh, config)
    mask = mesh.interior_mask(boundary_margin(problem, mesh, spec.epsilon))
    if not mask.any():
        raise ConfigurationError("box too small: no nodes left after the boundary margin")
    return float(np.abs(shaken.values - base.values)[:, mask].max())
