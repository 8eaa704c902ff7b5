"""Space-time lattice generated by direction vectors, and grid functions on it.

The spatial part is the index box ``{-R..R}^d1``; node ``i`` sits at
``origin + h * sum_k i_k * l_k``.  Time levels are ``(j*tau) ^ T``.
Nodes are stored flat in C order over the multi-index.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError

# relative tolerance for "T is a multiple of tau"
_MULTIPLE_RTOL = 1e-12


@dataclass(frozen=True)
class MeshSpec:
    """Parameters of a truncated space-time lattice.

    Attributes:
        T: horizon.
        tau: time step.
        h: space step.
        directions: the d1 vectors l_1..l_d1 (rows), each in R^d.
        origin: the point x0 in R^d; defaults to zero.
        index_radius: R, the bound |i_k| <= R on spatial multi-indices.
    """

    T: float
    tau: float
    h: float
    directions: tuple[tuple[float, ...], ...]
    origin: tuple[float, ...] | None = None
    index_radius: int = 10

    def __post_init__(self):
        dirs = np.atleast_2d(np.asarray(self.directions, dtype=float))
        object.__setattr__(self, "directions", tuple(tuple(float(c) for c in row) for row in dirs))
        if self.origin is not None:
            object.__setattr__(self, "origin", tuple(float(c) for c in np.atleast_1d(self.origin)))

    @property
    def dim(self) -> int:
        return len(self.directions[0]) if self.directions else 0

    @property
    def n_dirs(self) -> int:
        return len(self.directions)

    def validate(self) -> None:
        for name in ("T", "tau", "h"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigurationError(f"{name} must be positive and finite, got {value!r}")
        if not self.directions or self.dim == 0:
            raise ConfigurationError("direction list is empty")
        if len({len(row) for row in self.directions}) != 1:
            raise ConfigurationError("directions must all live in the same R^d")
        if int(self.index_radius) != self.index_radius or self.index_radius < 1:
            raise ConfigurationError(f"index_radius must be an integer >= 1, got {self.index_radius!r}")
        if self.origin is not None and len(self.origin) != self.dim:
            raise ConfigurationError("origin dimension does not match directions")

    def replace(self, **changes) -> "MeshSpec":
        values = dict(
            T=self.T,
            tau=self.tau,
            h=self.h,
            directions=self.directions,
            origin=self.origin,
            index_radius=self.index_radius,
        )
        values.update(changes)
        return MeshSpec(**values)


def time_levels(T: float, tau: float) -> np.ndarray:
    """Levels ``(j*tau) ^ T`` for j = 0, 1, ..., deduplicated; the last one is T."""
    n = math.floor(T / tau)
    if T - n * tau > _MULTIPLE_RTOL * T:
        n += 1
    levels = np.minimum(np.arange(n + 1) * tau, T)
    levels[-1] = T
    return levels


@dataclass(frozen=True, eq=False)
class Mesh:
    """The truncated lattice built from a :class:`MeshSpec`."""

    spec: MeshSpec
    time_levels: np.ndarray = field(repr=False)

    @property
    def T(self) -> float:
        return self.spec.T

    @property
    def tau(self) -> float:
        return self.spec.tau

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def R(self) -> int:
        return self.spec.index_radius

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def n_dirs(self) -> int:
        return self.spec.n_dirs

    @property
    def n_time(self) -> int:
        """Number of time steps; there are ``n_time + 1`` levels."""
        return len(self.time_levels) - 1

    @property
    def side(self) -> int:
        return 2 * self.R + 1

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the index box as a d1-dimensional array."""
        return (self.side,) * self.n_dirs

    @property
    def n_nodes(self) -> int:
        return self.side**self.n_dirs

    @cached_property
    def directions(self) -> np.ndarray:
        return np.asarray(self.spec.directions, dtype=float)

    @cached_property
    def origin(self) -> np.ndarray:
        if self.spec.origin is None:
            return np.zeros(self.dim)
        return np.asarray(self.spec.origin, dtype=float)

    @cached_property
    def indices(self) -> np.ndarray:
        """Multi-indices of all nodes, shape (n_nodes, d1), in storage order."""
        grids = np.meshgrid(*[np.arange(-self.R, self.R + 1)] * self.n_dirs, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @cached_property
    def positions(self) -> np.ndarray:
        """Physical positions of all nodes, shape (n_nodes, d)."""
        return self.position(self.indices)

    def position(self, index) -> np.ndarray:
        index = np.asarray(index, dtype=float)
        return self.origin + self.h * index @ self.directions

    def flat_index(self, index: Sequence[int]) -> int:
        index = np.asarray(index) + self.R
        if np.any(index < 0) or np.any(index >= self.side):
            raise IndexError(f"multi-index {tuple(np.asarray(index) - self.R)} outside the box")
        return int(np.ravel_multi_index(tuple(index), self.shape))

    def level_index(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.time_levels - t)))
        if abs(self.time_levels[j] - t) > 1e-12 * max(1.0, self.T):
            raise ValueError(f"t={t!r} is not a mesh time level")
        return j

    def interior_mask(self, margin: int) -> np.ndarray:
        """Nodes with |i_k| <= R - margin for every k."""
        return np.all(np.abs(self.indices) <= self.R - margin, axis=1)

    @cached_property
    def _shift_tables(self) -> tuple[np.ndarray, np.ndarray]:
        # row s of each table is the signed direction with array index s
        nbr = np.empty((2 * self.n_dirs, self.n_nodes), dtype=np.intp)
        outside = np.empty((2 * self.n_dirs, self.n_nodes), dtype=bool)
        for s in range(2 * self.n_dirs):
            k, sign = s % self.n_dirs, (1 if s < self.n_dirs else -1)
            shifted = self.indices.copy()
            shifted[:, k] += sign
            outside[s] = np.abs(shifted[:, k]) > self.R
            clipped = np.clip(shifted, -self.R, self.R) + self.R
            nbr[s] = np.ravel_multi_index(tuple(clipped.T), self.shape)
        return nbr, outside

    @property
    def neighbor_table(self) -> np.ndarray:
        """Flat index of the (clamped) neighbor for each signed direction, shape (2*d1, n_nodes)."""
        return self._shift_tables[0]

    @property
    def outside_table(self) -> np.ndarray:
        """True where the neighbor in that signed direction leaves the box."""
        return self._shift_tables[1]

    @cached_property
    def exterior_positions(self) -> np.ndarray:
        """Unclamped neighbor positions, shape (2*d1, n_nodes, d)."""
        out = np.empty((2 * self.n_dirs, self.n_nodes, self.dim))
        for s in range(2 * self.n_dirs):
            k, sign = s % self.n_dirs, (1 if s < self.n_dirs else -1)
            out[s] = self.positions + sign * self.h * self.directions[k]
        return out


def signed_slot(k: int, n_dirs: int) -> int:
    """Array slot of the signed direction k in {+-1..+-d1}."""
    if k == 0 or abs(k) > n_dirs:
        raise ValueError(f"signed direction {k} outside +-1..+-{n_dirs}")
    return k - 1 if k > 0 else n_dirs - k - 1


def build_mesh(spec: MeshSpec) -> Mesh:
    spec.validate()
    return Mesh(spec=spec, time_levels=time_levels(spec.T, spec.tau))


def tau_T(mesh: Mesh, t: float) -> float:
    """Length of the step from level t to the next one, ``min(tau, T - t)``."""
    if not 0 <= t < mesh.T:
        raise ValueError(f"tau_T needs 0 <= t < T, got t={t!r}")
    mesh.level_index(t)
    return min(mesh.tau, mesh.T - t)


@dataclass(frozen=True)
class ExteriorPolicy:
    """What a stencil sees when it reaches past the index box.

    ``clamp`` copies the nearest in-box value, ``extend_terminal`` evaluates
    the terminal function g at the exterior position, ``constant`` uses a
    fixed number and ``dirichlet`` evaluates a user function ``fn(t, x)``
    (exact boundary data for manufactured-solution studies).
    """

    kind: str = "clamp"
    value: float = 0.0
    fn: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("clamp", "extend_terminal", "constant", "dirichlet"):
            raise ConfigurationError(f"unknown exterior policy {self.kind!r}")
        if self.kind == "dirichlet" and self.fn is None:
            raise ConfigurationError("dirichlet exterior policy needs fn(t, x)")

    @classmethod
    def clamp(cls) -> "ExteriorPolicy":
        return cls("clamp")

    @classmethod
    def extend_terminal(cls) -> "ExteriorPolicy":
        return cls("extend_terminal")

    @classmethod
    def constant(cls, value: float) -> "ExteriorPolicy":
        return cls("constant", value=float(value))

    @classmethod
    def dirichlet(cls, fn: Callable) -> "ExteriorPolicy":
        return cls("dirichlet", fn=fn)

    def exterior_values(self, mesh: Mesh, t: float, g: Callable | None = None) -> np.ndarray | None:
        """Values at the unclamped neighbor positions, shape (2*d1, n_nodes), or None for clamp."""
        if self.kind == "clamp":
            return None
        pts = mesh.exterior_positions
        flat = pts.reshape(-1, mesh.dim)
        if self.kind == "constant":
            return np.full(pts.shape[:2], self.value)
        if self.kind == "extend_terminal":
            if g is None:
                raise ConfigurationError("extend_terminal needs the terminal function g")
            vals = np.broadcast_to(np.asarray(g(flat), dtype=float), (flat.shape[0],))
        else:
            vals = np.broadcast_to(np.asarray(self.fn(t, flat), dtype=float), (flat.shape[0],))
        return np.array(vals).reshape(pts.shape[:2])


def shifted_values(mesh: Mesh, w: np.ndarray, exterior: np.ndarray | None) -> np.ndarray:
    """Neighbor values of the spatial field w for every signed direction, shape (2*d1, n_nodes)."""
    vals = w[mesh.neighbor_table]
    if exterior is not None:
        vals = np.where(mesh.outside_table, exterior, vals)
    return vals


class GridFunction:
    """Real values on every node of a mesh, indexed by (time level, flat node)."""

    def __init__(self, mesh: Mesh, values: np.ndarray | None = None):
        self.mesh = mesh
        shape = (mesh.n_time + 1, mesh.n_nodes)
        if values is None:
            values = np.zeros(shape)
        values = np.asarray(values, dtype=float)
        if values.shape != shape:
            raise ValueError(f"grid function needs shape {shape}, got {values.shape}")
        self.values = values

    def __repr__(self):
        return f"GridFunction(n_time={self.mesh.n_time}, n_nodes={self.mesh.n_nodes})"

    def field(self, j: int) -> np.ndarray:
        """Spatial slice at level j reshaped onto the index box."""
        return self.values[j].reshape(self.mesh.shape)

    def at(self, j: int, index: Sequence[int]) -> float:
        return float(self.values[j, self.mesh.flat_index(index)])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def to_csv(self, target=None) -> str | None:
        """Header row of mesh parameters, then one ``j, i_1..i_d1, value`` row per node."""
        buf = io.StringIO()
        write_grid_csv(self, buf)
        text = buf.getvalue()
        if target is None:
            return text
        with open(target, "w", newline="") as fh:
            fh.write(text)
        return None


def _fmt(x: float) -> str:
    # repr is the shortest round-trip form and locale independent
    return repr(float(x))


def write_grid_csv(u: GridFunction, fh) -> None:
    mesh = u.mesh
    writer = csv.writer(fh, lineterminator="\n")
    dir_cols = [f"l{k + 1}_{c + 1}" for k in range(mesh.n_dirs) for c in range(mesh.dim)]
    writer.writerow(["T", "tau", "h", "d", "d1", "R", *dir_cols])
    writer.writerow(
        [_fmt(mesh.T), _fmt(mesh.tau), _fmt(mesh.h), mesh.dim, mesh.n_dirs, mesh.R]
        + [_fmt(c) for c in mesh.directions.ravel()]
    )
    writer.writerow(["j", *[f"i{k + 1}" for k in range(mesh.n_dirs)], "value"])
    idx = mesh.indices
    for j in range(mesh.n_time + 1):
        row_vals = u.values[j]
        for n in range(mesh.n_nodes):
            writer.writerow([j, *idx[n].tolist(), _fmt(row_vals[n])])


def read_grid_csv(source, origin: Sequence[float] | None = None) -> GridFunction:
    """Inverse of :meth:`GridFunction.to_csv`; accepts a path or CSV text."""
    if isinstance(source, str) and "\n" in source:
        lines = source.splitlines()
    else:
        with open(source) as fh:
            lines = fh.read().splitlines()
    reader = csv.reader(lines)
    next(reader)
    params = next(reader)
    T, tau, h = (float(v) for v in params[:3])
    d, d1, R = (int(v) for v in params[3:6])
    dirs = np.array([float(v) for v in params[6:]]).reshape(d1, d)
    mesh = build_mesh(MeshSpec(T=T, tau=tau, h=h, directions=tuple(map(tuple, dirs)), origin=origin, index_radius=R))
    next(reader)
    u = GridFunction(mesh)
    for row in reader:
        if not row:
            continue
        j = int(row[0])
        index = [int(v) for v in row[1 : 1 + d1]]
        u.values[j, mesh.flat_index(index)] = float(row[-1])
    return u


def neighbor_value(
    u: GridFunction,
    j: int,
    index: Sequence[int],
    k: int,
    exterior: ExteriorPolicy = ExteriorPolicy(),
    g: Callable | None = None,
) -> float:
    """Value of u at level j one lattice step from ``index`` in signed direction k."""
    mesh = u.mesh
    slot = signed_slot(k, mesh.n_dirs)
    target = np.array(index, dtype=int)
    target[abs(k) - 1] += 1 if k > 0 else -1
    if np.all(np.abs(target) <= mesh.R):
        return u.at(j, target)
    if exterior.kind == "clamp":
        return u.at(j, np.clip(target, -mesh.R, mesh.R))
    n = mesh.flat_index(index)
    ext = exterior.exterior_values(mesh, float(mesh.time_levels[j]), g)
    return float(ext[slot, n])
