"""Control problems: coefficients, terminal data, validation and the built-in catalog.

A problem is the data of

    u_t + sup_a [ sum_k a_k^a D^2_{l_k} u + sum_{+-k} b_k^a D_{l_k} u - c^a u + f^a ] = 0,
    u(T, x) = g(x),

with ``a_k = sigma_k**2 / 2``.  Diffusion runs over k = 1..d1, drift over the
signed directions.  Every evaluator is vectorized over points: it receives
``x`` of shape (n, d) and returns an array broadcastable to (n,).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigurationError, EvaluationError, ValidationError
from .expressions import compile_expression
from .lattice import Mesh

Evaluator = Callable[..., Any]


def _zero(*args):
    return 0.0


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Coefficients of a Bellman equation over a finite control list.

    Attributes:
        controls: the finite control set A (any hashable labels).
        sigma: ``sigma(alpha, k, t, x)`` for k = 1..d1; sigma_{-k} mirrors sigma_k.
        b: ``b(alpha, k, t, x)`` for signed k, must be >= 0.
        c: ``c(alpha, t, x)``, must be >= lam.
        f: ``f(alpha, t, x)``.
        g: terminal data ``g(x)``.
        directions: the l_k paired with sigma_k and b_k, rows in R^d.
        K: declared bound / Lipschitz constant.
        lam: declared lower bound of c.
        time_dependent: False lets solvers reuse coefficients across levels.
    """

    controls: Sequence[Any]
    sigma: Evaluator = _zero
    b: Evaluator = _zero
    c: Evaluator = _zero
    f: Evaluator = _zero
    g: Callable = lambda x: 0.0
    directions: tuple[tuple[float, ...], ...] = ((1.0,),)
    K: float = 1.0
    lam: float = 0.0
    time_dependent: bool = True
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        dirs = np.atleast_2d(np.asarray(self.directions, dtype=float))
        object.__setattr__(self, "directions", tuple(tuple(float(c) for c in row) for row in dirs))
        object.__setattr__(self, "controls", tuple(self.controls))
        if not self.controls:
            raise ConfigurationError("control set is empty")

    @property
    def dim(self) -> int:
        return len(self.directions[0])

    @property
    def n_dirs(self) -> int:
        return len(self.directions)

    def replace(self, **changes) -> "ControlProblem":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return ControlProblem(**values)

    def terminal(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return _as_field(self.g(x), x.shape[0], "g", None, None, x)

    def coefficients(self, t: float, x: np.ndarray) -> "Coefficients":
        """Evaluate every coefficient for every control at the points x."""
        x = np.atleast_2d(x)
        n, d1, n_a = x.shape[0], self.n_dirs, len(self.controls)
        a = np.empty((n_a, d1, n))
        b = np.empty((n_a, 2 * d1, n))
        c = np.empty((n_a, n))
        f = np.empty((n_a, n))
        for m, alpha in enumerate(self.controls):
            for k in range(1, d1 + 1):
                s = _as_field(self.sigma(alpha, k, t, x), n, "sigma", alpha, t, x)
                a[m, k - 1] = 0.5 * s * s
                b[m, k - 1] = _as_field(self.b(alpha, k, t, x), n, "b", alpha, t, x)
                b[m, d1 + k - 1] = _as_field(self.b(alpha, -k, t, x), n, "b", alpha, t, x)
            c[m] = _as_field(self.c(alpha, t, x), n, "c", alpha, t, x)
            f[m] = _as_field(self.f(alpha, t, x), n, "f", alpha, t, x)
        return Coefficients(a=a, b=b, c=c, f=f)


def _as_field(value, n, what, alpha, t, x) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,))
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise EvaluationError(f"{what} is not finite at alpha={alpha!r}, t={t!r}, x={x[bad].tolist()}")
    return arr


@dataclass(frozen=True)
class Coefficients:
    """Coefficient arrays for all controls at a set of nodes.

    Shapes: ``a`` (n_controls, d1, n), ``b`` (n_controls, 2*d1, n) with slots
    ordered +1..+d1, -1..-d1, ``c`` and ``f`` (n_controls, n).
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    f: np.ndarray

    def off_diagonal(self, h: float) -> np.ndarray:
        """Total neighbor weight per unit epsilon, ``sum_k 2 a_k / h^2 + sum_{+-k} |b_k| / h``."""
        return 2.0 * self.a.sum(axis=1) / h**2 + np.abs(self.b).sum(axis=1) / h


@dataclass(frozen=True, eq=False)
class ExactSolution:
    """Closed-form solution ``value(t, x, T)`` of a catalog problem.

    ``kind`` is ``"smooth"`` or ``"lipschitz"`` and sets the expected rate floor.
    ``kinks`` returns a boolean mask of points near non-smooth locations.
    """

    value: Callable
    description: str
    kind: str = "smooth"
    kinks: Callable | None = None

    def __call__(self, t, x, T):
        x = np.atleast_2d(x)
        return np.broadcast_to(np.asarray(self.value(t, x, T), dtype=float), (x.shape[0],))

    @property
    def rate_floor(self) -> float:
        return 1.9 if self.kind == "smooth" else 0.5


@dataclass
class ValidationReport:
    max_abs: dict[str, float]
    max_lipschitz_x: float
    max_holder_t: float
    violations: list[str]
    warnings: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def _sample_times(mesh: Mesh, problem: ControlProblem, limit: int = 40) -> np.ndarray:
    levels = mesh.time_levels
    if not problem.time_dependent:
        return levels[:1]
    if len(levels) > limit:
        levels = levels[np.linspace(0, len(levels) - 1, limit).round().astype(int)]
    return levels


def validate(
    problem: ControlProblem, mesh: Mesh, n_pairs: int = 200, seed: int = 0, raise_on_error: bool = True
) -> ValidationReport:
    """Sample coefficients on the mesh and check the structural assumptions.

    Negative drift weights and ``c < lam`` are hard failures.  Bounds and
    Lipschitz/Hoelder constants above K are reported as warnings, since
    sampling cannot prove them anyway.
    """
    rng = np.random.default_rng(seed)
    x = mesh.positions
    violations: list[str] = []
    max_abs = {"sigma": 0.0, "b": 0.0, "c-lambda": 0.0, "f": 0.0, "g": 0.0}
    lip = 0.0
    holder = 0.0
    times = _sample_times(mesh, problem)

    # pairs of nearby points for the spatial quotient: lattice neighbours and random offsets
    partners = [x + mesh.h * mesh.directions[k] for k in range(mesh.n_dirs)]
    partners.append(x + mesh.h * rng.uniform(-1, 1, size=x.shape))
    base = rng.uniform(x.min(axis=0), x.max(axis=0), size=(n_pairs, mesh.dim))
    pairs = [(x, p) for p in partners] + [(base, base + rng.normal(scale=mesh.h, size=base.shape))]

    def coef_stack(co: Coefficients) -> dict[str, np.ndarray]:
        return {
            "sigma": np.sqrt(2 * co.a),
            "b": co.b,
            "c-lambda": co.c - problem.lam,
            "f": co.f,
        }

    for t in times:
        co = problem.coefficients(t, x)
        for m, alpha in enumerate(problem.controls):
            neg = np.argwhere(co.b[m] < 0)
            if neg.size:
                s, node = neg[0]
                k = s + 1 if s < mesh.n_dirs else -(s - mesh.n_dirs + 1)
                violations.append(f"b < 0 at alpha={alpha!r}, k={k}, t={t:g}, x={x[node].tolist()}")
            low = np.flatnonzero(co.c[m] < problem.lam)
            if low.size:
                violations.append(f"c < lambda at alpha={alpha!r}, t={t:g}, x={x[low[0]].tolist()}")
        for name, arr in coef_stack(co).items():
            max_abs[name] = max(max_abs[name], float(np.abs(arr).max()))
        for p, q in pairs:
            cp, cq = coef_stack(problem.coefficients(t, p)), coef_stack(problem.coefficients(t, q))
            dist = np.linalg.norm(p - q, axis=1)
            ok = dist > 0
            for name in cp:
                diff = np.abs(cp[name] - cq[name]).reshape(-1, p.shape[0])
                lip = max(lip, float((diff[:, ok] / dist[ok]).max(initial=0.0)))

    gx = problem.terminal(x)
    max_abs["g"] = float(np.abs(gx).max())
    for p, q in pairs:
        dist = np.linalg.norm(p - q, axis=1)
        ok = dist > 0
        lip = max(lip, float((np.abs(problem.terminal(p) - problem.terminal(q))[ok] / dist[ok]).max(initial=0.0)))

    if problem.time_dependent and len(times) > 1:
        prev = coef_stack(problem.coefficients(times[0], x))
        for s, t in zip(times[:-1], times[1:]):
            cur = coef_stack(problem.coefficients(t, x))
            for name in cur:
                holder = max(holder, float(np.abs(cur[name] - prev[name]).max() / np.sqrt(t - s)))
            prev = cur
        # also the full spread against the first level, |t - s| up to T
        first = coef_stack(problem.coefficients(times[0], x))
        for t in times[1:]:
            cur = coef_stack(problem.coefficients(t, x))
            for name in cur:
                holder = max(holder, float(np.abs(cur[name] - first[name]).max() / np.sqrt(t - times[0])))

    warnings = [f"|{name}| reaches {value:.4g} > K={problem.K:g}" for name, value in max_abs.items() if value > problem.K * (1 + 1e-12)]
    if lip > problem.K * (1 + 1e-9):
        warnings.append(f"observed spatial difference quotient {lip:.4g} > K={problem.K:g}")
    if holder > problem.K * (1 + 1e-9):
        warnings.append(f"observed time Hoelder-1/2 quotient {holder:.4g} > K={problem.K:g}")
    report = ValidationReport(max_abs, lip, holder, violations, warnings)
    if violations and raise_on_error:
        raise ValidationError("; ".join(violations))
    return report


# ---------------------------------------------------------------------------
# catalog


def _x1(x):
    return np.atleast_2d(x)[:, 0]


def _tent(x, center=0.0):
    return np.maximum(0.0, 1.0 - np.abs(_x1(x) - center))


def _const():
    problem = ControlProblem(
        controls=[0],
        c=lambda a, t, x: 1.0,
        f=lambda a, t, x: 1.0,
        g=lambda x: np.ones(len(x)),
        K=1.0,
        lam=1.0,
        time_dependent=False,
        name="const",
    )
    return problem, ExactSolution(lambda t, x, T: 1.0, "v = 1 identically", kind="smooth")


def _heat1d():
    problem = ControlProblem(
        controls=[0],
        sigma=lambda a, k, t, x: 1.0,
        g=lambda x: np.cos(_x1(x)),
        K=1.0,
        lam=0.0,
        time_dependent=False,
        name="heat1d",
    )
    exact = ExactSolution(
        lambda t, x, T: np.exp(-(T - t) / 2) * np.cos(_x1(x)),
        "v(t,x) = exp(-(T-t)/2) cos x",
        kind="smooth",
    )
    return problem, exact


def _transport_kink():
    def b(alpha, k, t, x):
        return 1.0 if (alpha, k) in (("right", 1), ("left", -1)) else 0.0

    problem = ControlProblem(
        controls=["right", "left"],
        b=b,
        g=lambda x: -np.abs(_x1(x)),
        K=1.0,
        lam=0.0,
        time_dependent=False,
        name="transport_kink",
    )
    exact = ExactSolution(
        lambda t, x, T: -np.maximum(np.abs(_x1(x)) - (T - t), 0.0),
        "Hopf-Lax: v(t,x) = sup_{|y-x| <= T-t} g(y) = -max(|x| - (T-t), 0)",
        kind="lipschitz",
    )
    return problem, exact


def _eikonal2ctl():
    drifts = {"+e1": 1, "-e1": -1, "+e2": 2, "-e2": -2}

    def b(alpha, k, t, x):
        return 1.0 if drifts[alpha] == k else 0.0

    def g(x):
        return np.maximum(0.0, 1.0 - np.abs(np.atleast_2d(x)).sum(axis=1))

    def v(t, x, T):
        r = np.abs(np.atleast_2d(x)).sum(axis=1)
        return np.maximum(0.0, 1.0 - np.maximum(r - (T - t), 0.0))

    problem = ControlProblem(
        controls=list(drifts),
        b=b,
        g=g,
        directions=((1.0, 0.0), (0.0, 1.0)),
        K=1.0,
        lam=0.0,
        time_dependent=False,
        name="eikonal2ctl",
        meta={"compact_support": True},
    )
    exact = ExactSolution(v, "Hopf-Lax over the l1 ball: v = (1 - max(|x|_1 - (T-t), 0))_+", kind="lipschitz")
    return problem, exact


def _obstacle1d(M: float = 1e3, obstacle: Callable | None = None):
    g_obs = obstacle or (lambda x: 1.0 - _x1(x) ** 2)
    # "continue": u'' - u ; "stop": u''/2 + M (g_obs - u), the penalized stopping branch
    sigma = {"continue": np.sqrt(2.0), "stop": 1.0}
    problem = ControlProblem(
        controls=["continue", "stop"],
        sigma=lambda a, k, t, x: sigma[a],
        c=lambda a, t, x: 1.0 if a == "continue" else M,
        f=lambda a, t, x: 0.0 if a == "continue" else M * g_obs(x),
        g=g_obs,
        K=M,
        lam=1.0,
        time_dependent=False,
        name="obstacle1d",
        meta={"g_obs": g_obs, "M": M},
    )
    return problem, None


def _twocontrol_diffusion(lam: float = 0.0):
    def sigma(alpha, k, t, x):
        return 1.0 if alpha == "diffuse" else 0.0

    def b(alpha, k, t, x):
        return 0.5 if (alpha == "drift" and k == 1) else 0.0

    def f(alpha, t, x):
        return _tent(x) if alpha == "diffuse" else 0.5 * _tent(x, 0.5)

    problem = ControlProblem(
        controls=["diffuse", "drift"],
        sigma=sigma,
        b=b,
        c=lambda a, t, x: lam,
        f=f,
        g=lambda x: _tent(x),
        K=max(1.0, lam),
        lam=lam,
        time_dependent=False,
        name="twocontrol_diffusion",
        meta={"compact_support": True},
    )
    return problem, None


_CATALOG: dict[str, Callable] = {
    "const": _const,
    "heat1d": _heat1d,
    "transport_kink": _transport_kink,
    "eikonal2ctl": _eikonal2ctl,
    "obstacle1d": _obstacle1d,
    "twocontrol_diffusion": _twocontrol_diffusion,
}

CATALOG_NAMES = tuple(_CATALOG)

# default lattices; R*h covers the support of the data plus the domain of dependence
DEFAULT_MESH = {
    "const": dict(T=1.0, tau=0.25, h=0.5, index_radius=4),
    "heat1d": dict(T=1.0, tau=0.01, h=0.1, index_radius=60),
    "transport_kink": dict(T=1.0, tau=0.05, h=0.05, index_radius=80),
    "eikonal2ctl": dict(T=0.5, tau=0.1, h=0.1, index_radius=30),
    "obstacle1d": dict(T=1.0, tau=0.1, h=0.1, index_radius=40),
    "twocontrol_diffusion": dict(T=1.0, tau=0.05, h=0.1, index_radius=80),
}


def catalog(name: str, **params) -> tuple[ControlProblem, ExactSolution | None]:
    """Built-in problem by name, with its closed-form solution when one exists."""
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise ConfigurationError(f"unknown problem {name!r}; available: {', '.join(CATALOG_NAMES)}") from None
    return factory(**params)


def default_mesh_spec(problem: ControlProblem, **overrides):
    from .lattice import MeshSpec

    values = dict(DEFAULT_MESH.get(problem.name, dict(T=1.0, tau=0.05, h=0.1, index_radius=40)))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return MeshSpec(directions=problem.directions, **values)


def manufactured_problem(
    exact: Callable,
    exact_t: Callable,
    exact_x: Callable,
    exact_xx: Callable,
    sigma: float = 1.0,
    b_plus: float = 0.0,
    b_minus: float = 0.0,
    c: float = 0.0,
    K: float = 1.0,
    T: float = 1.0,
    time_dependent: bool = True,
) -> tuple[ControlProblem, ExactSolution]:
    """One-dimensional single-control problem whose solution is ``exact(t, x)``.

    The source is ``f = -v_t - (sigma^2/2 v_xx + (b_plus - b_minus) v_x - c v)``
    and the terminal data is ``exact(T, x)``.
    """
    a = 0.5 * sigma * sigma

    def f(alpha, t, x):
        y = _x1(x)
        return -exact_t(t, y) - (a * exact_xx(t, y) + (b_plus - b_minus) * exact_x(t, y) - c * exact(t, y))

    problem = ControlProblem(
        controls=[0],
        sigma=lambda al, k, t, x: sigma,
        b=lambda al, k, t, x: b_plus if k == 1 else b_minus,
        c=lambda al, t, x: c,
        f=f,
        g=lambda x: exact(T, _x1(x)),
        K=K,
        lam=c,
        time_dependent=time_dependent,
        name="manufactured",
    )
    return problem, ExactSolution(lambda t, x, T: exact(t, _x1(x)), "manufactured", kind="smooth")


def problem_from_config(cfg: dict) -> ControlProblem:
    """Build a problem from a parsed config mapping of expression strings.

    Expected keys: ``dim``, ``directions`` (list of vectors), ``K``, ``lambda``,
    ``terminal`` and a list ``controls`` whose items carry ``sigma`` (one
    expression per direction), ``b_plus`` and ``b_minus`` (likewise), ``c`` and ``f``.
    """
    try:
        directions = np.atleast_2d(np.asarray(cfg["directions"], dtype=float))
        dim = int(cfg.get("dim", directions.shape[1]))
        d1 = directions.shape[0]
        items = cfg["controls"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed problem config: {exc}") from None
    if not items:
        raise ConfigurationError("problem config lists no controls")

    def per_dir(entry, key):
        raw = entry.get(key, ["0"] * d1)
        if not isinstance(raw, (list, tuple)):
            raw = [raw] * d1
        if len(raw) != d1:
            raise ConfigurationError(f"{key} needs {d1} expressions, got {len(raw)}")
        return [compile_expression(e, dim) for e in raw]

    compiled = []
    for entry in items:
        compiled.append(
            dict(
                sigma=per_dir(entry, "sigma"),
                b_plus=per_dir(entry, "b_plus"),
                b_minus=per_dir(entry, "b_minus"),
                c=compile_expression(entry.get("c", 0), dim),
                f=compile_expression(entry.get("f", 0), dim),
            )
        )
    g = compile_expression(cfg.get("terminal", 0), dim)
    time_dependent = "t" in _names(str(items))

    def b(alpha, k, t, x):
        return compiled[alpha]["b_plus" if k > 0 else "b_minus"][abs(k) - 1](t, x)

    return ControlProblem(
        controls=list(range(len(compiled))),
        sigma=lambda alpha, k, t, x: compiled[alpha]["sigma"][k - 1](t, x),
        b=b,
        c=lambda alpha, t, x: compiled[alpha]["c"](t, x),
        f=lambda alpha, t, x: compiled[alpha]["f"](t, x),
        g=lambda x: g(0.0, x),
        directions=tuple(map(tuple, directions)),
        K=float(cfg.get("K", 1.0)),
        lam=float(cfg.get("lambda", 0.0)),
        time_dependent=time_dependent,
        name=str(cfg.get("name", "custom")),
    )


def _names(text: str) -> set[str]:
    return set(re.findall(r"[A-Za-z_][A-Za-z0-9_]*", text))
