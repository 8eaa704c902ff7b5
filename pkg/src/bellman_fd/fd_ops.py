"""Finite differences on the lattice and the Bellman nonlinearity.

Scalar forms (``delta_h``, ``Delta_h``, ``delta_tau_T``, ``apply_L_h``,
``bellman_F``) take sampled values.  ``L_h_all`` and ``affine_all`` are
the vectorized versions the solvers call on whole spatial fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .errors import ConfigurationError
from .lattice import ExteriorPolicy, GridFunction, Mesh, shifted_values
from .problems import Coefficients, ControlProblem


def delta_h(u_at_x: float, u_at_x_plus_hl: float, h: float) -> float:
    """Forward difference ``(u(x + h l) - u(x)) / h``."""
    return (u_at_x_plus_hl - u_at_x) / h


def Delta_h(u_minus: float, u_center: float, u_plus: float, h: float) -> float:
    """Central second difference ``(u(x+hl) - 2u(x) + u(x-hl)) / h^2``.

    Evaluated as a difference of the two one-sided slopes so that it agrees
    with the composition of first differences in floating point as well.
    """
    return ((u_plus - u_center) / h - (u_center - u_minus) / h) / h


def delta_tau_T(u_now: float, u_next: float, tau: float) -> float:
    """Time difference toward level ``(t + tau) ^ T``; the denominator stays tau on the last step."""
    return (u_next - u_now) / tau


@dataclass(frozen=True)
class BellmanArgs:
    """Arguments of F at one node.

    ``second_diffs`` has one entry per direction k = 1..d1, ``first_diffs`` one
    per signed direction in slot order +1..+d1, -1..-d1.
    """

    second_diffs: Sequence[float]
    first_diffs: Sequence[float]
    value: float
    t: float
    x: Sequence[float]


def affine_all(coefs: Coefficients, second: np.ndarray, first: np.ndarray, value: np.ndarray) -> np.ndarray:
    """``a_k p_k + b_k q_k - c r + f`` for every control, shape (n_controls, n)."""
    return (
        np.einsum("akn,kn->an", coefs.a, second)
        + np.einsum("akn,kn->an", coefs.b, first)
        - coefs.c * value
        + coefs.f
    )


def differences(mesh: Mesh, w: np.ndarray, exterior: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Second differences (d1, n) and signed first differences (2*d1, n) of a spatial field."""
    nb = shifted_values(mesh, w, exterior)
    d1 = mesh.n_dirs
    first = (nb - w) / mesh.h
    # slope difference, same rounding as Delta_h
    second = (first[:d1] + first[d1:]) / mesh.h
    return second, first


def L_h_all(coefs: Coefficients, mesh: Mesh, w: np.ndarray, exterior: np.ndarray | None) -> np.ndarray:
    """``L_h^alpha w`` at every node for every control (no source term)."""
    second, first = differences(mesh, w, exterior)
    return (
        np.einsum("akn,kn->an", coefs.a, second)
        + np.einsum("akn,kn->an", coefs.b, first)
        - coefs.c * w
    )


def _bellman_args_at(problem, u: GridFunction, j: int, index, exterior: ExteriorPolicy) -> tuple[BellmanArgs, int]:
    from .lattice import neighbor_value

    mesh = u.mesh
    center = u.at(j, index)
    d1 = mesh.n_dirs
    plus = [neighbor_value(u, j, index, k, exterior, problem.g) for k in range(1, d1 + 1)]
    minus = [neighbor_value(u, j, index, -k, exterior, problem.g) for k in range(1, d1 + 1)]
    second = [Delta_h(m, center, p, mesh.h) for m, p in zip(minus, plus)]
    first = [delta_h(center, v, mesh.h) for v in plus + minus]
    t = float(mesh.time_levels[j])
    return BellmanArgs(second, first, center, t, mesh.position(index)), mesh.flat_index(index)


def apply_L_h(
    problem: ControlProblem,
    alpha: Any,
    u: GridFunction,
    j: int,
    index: Sequence[int],
    exterior: ExteriorPolicy = ExteriorPolicy(),
) -> float:
    """``L_h^alpha u`` at one node, coefficients taken at ``(t_j, position(index))``."""
    args, _ = _bellman_args_at(problem, u, j, index, exterior)
    coefs = problem.coefficients(args.t, np.asarray(args.x)[None, :])
    m = problem.controls.index(alpha)
    val = affine_all(
        coefs,
        np.asarray(args.second_diffs)[:, None],
        np.asarray(args.first_diffs)[:, None],
        np.array([args.value]),
    )[m, 0]
    return float(val - coefs.f[m, 0])


def bellman_F(problem: ControlProblem, args: BellmanArgs) -> tuple[float, Any]:
    """``sup_alpha [a p + b q - c r + f]`` and the maximizing control (lowest index on ties)."""
    if not problem.controls:
        raise ConfigurationError("control set is empty")
    coefs = problem.coefficients(args.t, np.atleast_2d(np.asarray(args.x, dtype=float)))
    vals = affine_all(
        coefs,
        np.asarray(args.second_diffs, dtype=float)[:, None],
        np.asarray(args.first_diffs, dtype=float)[:, None],
        np.array([float(args.value)]),
    )[:, 0]
    m = int(np.argmax(vals))
    return float(vals[m]), problem.controls[m]
