"""Command-line front end: ``bellman-fd {solve,study,shake,compare,elliptic,catalog}``.

Settings come from built-in defaults, then an optional YAML config file
(``--config``), then command-line flags, later sources winning.  The config
file uses nested sections::

    problem: {name: heat1d, params: {}}      # or {file: my_problem.yaml}
    mesh: {T: 1.0, tau: 0.01, h: 0.1, R: 60}
    solver: {scheme: implicit, method: banach, tol: null, max_iter: null,
             exterior: clamp, threads: 1}
    study: {h: [0.2, 0.1, 0.05, 0.025], tau_rule: h}
    shake: {eps: [0.2, 0.1, 0.05], S: axes, Lambda: none, shift_terminal: true}
    compare: {bump_f: 1.0, bump_g: 0.0}
    elliptic: {tol: 1.0e-8, lambda: null}
    output: {dir: bellman_fd_out, formats: [json, text, csv]}

Exit codes: 0 success, 1 configuration error, 2 solver failure,
3 acceptance check failed.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .aux_solvers import EllipticConfig, SemidiscreteConfig, solve_elliptic, solve_semidiscrete
from .diagnostics import (
    EXACT_FLOOR,
    check_comparison,
    convergence_study,
    measure_regularity,
)
from .errors import BellmanFDError, ConfigurationError, ConvergenceError
from .implicit_solver import SolverConfig, solve_parabolic
from .lattice import ExteriorPolicy, MeshSpec, build_mesh
from .perturbation import DEFAULT_TIME_SHIFTS, ShakeSpec, circle_shifts, default_space_shifts, shake_gap
from .problems import CATALOG_NAMES, ControlProblem, catalog, default_mesh_spec, problem_from_config, validate

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3
THREADS_ENV = "BELLMAN_FD_THREADS"

DEFAULTS: dict = {
    "problem": {"name": None, "file": None, "params": {}},
    "mesh": {"T": None, "tau": None, "h": None, "R": None},
    "solver": {
        "scheme": "implicit",
        "method": "banach",
        "tol": None,
        "max_iter": None,
        "exterior": "clamp",
        "threads": None,
    },
    "study": {"h": [0.2, 0.1, 0.05, 0.025], "tau_rule": "h", "radius": None},
    "shake": {"eps": [0.2, 0.1, 0.05], "S": "axes", "Lambda": "none", "shift_terminal": True},
    "compare": {"bump_f": 1.0, "bump_g": 0.0},
    "elliptic": {"tol": 1e-8, "lambda": None},
    "output": {"dir": "bellman_fd_out", "formats": ["json", "text", "csv"]},
}

CATALOG_BLURBS = {
    "const": "c=1, f=1, g=1; solution identically 1",
    "heat1d": "u_t + u_xx/2 = 0, g=cos x; smooth closed form",
    "transport_kink": "two upwind drifts, g=-|x|; Hopf-Lax closed form (Lipschitz)",
    "eikonal2ctl": "2-d, four unit drifts, g=(1-|x|_1)_+; closed form",
    "obstacle1d": "penalized optimal stopping with obstacle 1-x^2 (param M)",
    "twocontrol_diffusion": "diffuse vs drift with tent sources (param lam)",
}


class _Fail(Exception):
    def __init__(self, code: int, stage: str, message: str):
        super().__init__(message)
        self.code, self.stage = code, stage


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in (extra or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _param(text: str) -> tuple[str, float]:
    key, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key.strip(), float(val)
    except ValueError:
        return key.strip(), val.strip()


def _flag_overrides(args: argparse.Namespace) -> dict:
    """Nested overrides from flags the user actually gave."""
    table = {
        "problem": ("problem", "name"),
        "T": ("mesh", "T"),
        "tau": ("mesh", "tau"),
        "h": ("mesh", "h"),
        "R": ("mesh", "R"),
        "scheme": ("solver", "scheme"),
        "method": ("solver", "method"),
        "tol": ("solver", "tol"),
        "max_iter": ("solver", "max_iter"),
        "exterior": ("solver", "exterior"),
        "threads": ("solver", "threads"),
        "out": ("output", "dir"),
        "study_h": ("study", "h"),
        "tau_rule": ("study", "tau_rule"),
        "eps": ("shake", "eps"),
        "S": ("shake", "S"),
        "Lambda": ("shake", "Lambda"),
        "bump_f": ("compare", "bump_f"),
        "bump_g": ("compare", "bump_g"),
        "elliptic_tol": ("elliptic", "tol"),
        "lam": ("elliptic", "lambda"),
    }
    out: dict = {}
    for attr, (section, key) in table.items():
        val = getattr(args, attr, None)
        if val is not None:
            out.setdefault(section, {})[key] = val
    if getattr(args, "format", None):
        out.setdefault("output", {})["formats"] = [f.strip() for f in args.format.split(",") if f.strip()]
    if getattr(args, "param", None):
        out.setdefault("problem", {})["params"] = dict(args.param)
    if getattr(args, "keep_terminal", False):
        out.setdefault("shake", {})["shift_terminal"] = False
    name = out.get("problem", {}).get("name")
    if name and (name.endswith((".yaml", ".yml", ".json")) or os.path.sep in name):
        out["problem"]["file"], out["problem"]["name"] = name, None
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise _Fail(EXIT_CONFIG, "config", f"cannot read config file: {exc}") from None
        if not isinstance(loaded, dict):
            raise _Fail(EXIT_CONFIG, "config", "config file must hold a mapping")
        cfg = _merge(cfg, loaded)
    cfg = _merge(cfg, _flag_overrides(args))
    threads = cfg["solver"]["threads"]
    if threads is None:
        threads = os.environ.get(THREADS_ENV) or os.cpu_count() or 1
    try:
        cfg["solver"]["threads"] = max(1, int(threads))
    except ValueError:
        raise _Fail(EXIT_CONFIG, "config", f"thread count must be an integer, got {threads!r}") from None
    return cfg


def load_problem(cfg: dict):
    """(problem, oracle or None) from the ``problem`` section."""
    sec = cfg["problem"]
    if sec.get("file"):
        try:
            with open(sec["file"], encoding="utf-8") as fh:
                data = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read problem file: {exc}") from None
        return problem_from_config(data), None
    if not sec.get("name"):
        raise ConfigurationError(f"no problem given; available: {', '.join(CATALOG_NAMES)}")
    try:
        return catalog(sec["name"], **(sec.get("params") or {}))
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {sec['name']}: {exc}") from None


def mesh_spec_for(problem: ControlProblem, cfg: dict) -> MeshSpec:
    m = cfg["mesh"]
    spec = default_mesh_spec(problem, T=m["T"], tau=m["tau"], h=m["h"], index_radius=m["R"])
    spec.validate()
    return spec


def exterior_for(cfg: dict, oracle=None, T: float | None = None) -> ExteriorPolicy:
    raw = cfg["solver"]["exterior"]
    if isinstance(raw, (int, float)):
        return ExteriorPolicy.constant(raw)
    raw = str(raw)
    if raw in ("clamp", "extend_terminal"):
        return ExteriorPolicy(raw)
    if raw.startswith("constant"):
        _, _, val = raw.partition(":")
        return ExteriorPolicy.constant(float(val or 0.0))
    if raw == "oracle":
        if oracle is None:
            raise ConfigurationError("exterior 'oracle' needs a problem with a closed-form solution")
        return ExteriorPolicy.dirichlet(lambda t, x: oracle(t, x, T))
    raise ConfigurationError(f"unknown exterior policy {raw!r} (clamp|extend_terminal|constant:V|oracle)")


def solver_config(cfg: dict, exterior: ExteriorPolicy) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(
        method=s["method"],
        tol=None if s["tol"] is None else float(s["tol"]),
        max_iter=None if s["max_iter"] is None else int(s["max_iter"]),
        exterior=exterior,
        threads=s["threads"],
    )


class _Writer:
    def __init__(self, cfg: dict):
        self.dir = Path(cfg["output"]["dir"])
        self.formats = set(cfg["output"]["formats"])
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise _Fail(EXIT_CONFIG, "output", f"cannot create {self.dir}: {exc}") from None
        self.config = cfg

    def report(self, stem: str, payload: dict, text: str | None = None) -> None:
        payload = dict(payload, config=self.config)
        if "json" in self.formats:
            (self.dir / f"{stem}.json").write_text(json.dumps(payload, indent=2, default=_jsonable) + "\n")
        if "text" in self.formats and text is not None:
            (self.dir / f"{stem}.txt").write_text(text + "\n")

    def csv(self, name: str, content: str) -> None:
        if "csv" in self.formats:
            (self.dir / name).write_text(content)


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _field_csv(mesh, u: np.ndarray) -> str:
    cols = [f"i{k + 1}" for k in range(mesh.dim)]
    lines = [",".join(cols + ["value"])]
    for idx, val in zip(mesh.indices, u):
        lines.append(",".join([*(str(int(i)) for i in idx), repr(float(val))]))
    return "\n".join(lines) + "\n"


def cmd_solve(cfg: dict) -> int:
    problem, oracle = load_problem(cfg)
    spec = mesh_spec_for(problem, cfg)
    mesh = build_mesh(spec)
    report = validate(problem, mesh, raise_on_error=True)
    for w in report.warnings:
        print(f"validate: warning: {w}", file=sys.stderr)
    exterior = exterior_for(cfg, oracle, spec.T)
    scheme = cfg["solver"]["scheme"]
    out = _Writer(cfg)
    if scheme == "elliptic":
        res = solve_elliptic(problem, mesh, EllipticConfig(tol=float(cfg["elliptic"]["tol"]), exterior=exterior))
        out.csv("solution.csv", _field_csv(mesh, res.u))
        payload = dict(scheme=scheme, iterations=res.iterations, residual=res.residual, sup=float(np.abs(res.u).max()))
        out.report("elliptic", payload)
        print(f"elliptic: {res.iterations} iterations, residual {res.residual:.3e}")
        return EXIT_OK
    if scheme == "implicit":
        u = solve_parabolic(problem, mesh, solver_config(cfg, exterior))
    elif scheme == "semidiscrete":
        u = solve_semidiscrete(problem, mesh, SemidiscreteConfig(exterior=exterior))
    else:
        raise ConfigurationError(f"unknown scheme {scheme!r} (implicit|semidiscrete|elliptic)")
    if not u.is_finite():
        raise ConvergenceError("solution contains non-finite values")
    reg = measure_regularity(u)
    out.csv("solution.csv", u.to_csv())
    out.report("regularity", reg.to_dict(), reg.to_text())
    print(f"{scheme}: {mesh.n_time} slices, {mesh.n_nodes} nodes, sup|u| = {np.abs(u.values).max():.6g}")
    print(reg.to_text())
    return EXIT_OK


def _tau_for(rule, h: float) -> float:
    if rule in ("h", None):
        return h
    if rule in ("h2", "h^2"):
        return h * h
    return float(rule)


def cmd_study(cfg: dict) -> int:
    problem, oracle = load_problem(cfg)
    if oracle is None:
        raise ConfigurationError(f"problem {problem.name!r} has no closed-form solution to study against")
    hs = [float(h) for h in cfg["study"]["h"]]
    if len(hs) < 3:
        raise ConfigurationError(f"a rate fit needs at least 3 meshes, got {len(hs)}")
    base = mesh_spec_for(problem, cfg)
    # keep the physical box size of the base mesh across the family
    width = cfg["study"].get("radius") or base.index_radius * base.h
    family = [
        base.replace(h=h, tau=_tau_for(cfg["study"]["tau_rule"], h), index_radius=int(round(width / h)))
        for h in hs
    ]
    exterior = exterior_for(cfg, oracle, base.T)
    scheme = cfg["solver"]["scheme"]
    if scheme == "semidiscrete":
        config = SemidiscreteConfig(exterior=exterior)
    elif scheme == "implicit":
        config = solver_config(cfg, exterior)
    else:
        raise ConfigurationError("study supports the implicit and semidiscrete schemes")
    rep = convergence_study(problem, oracle, family, config, scheme=scheme)
    out = _Writer(cfg)
    out.csv("convergence.csv", rep.to_csv())
    out.report("convergence", rep.to_dict(), rep.to_text())
    print(rep.to_text())
    if rep.fitted_order is None:
        ok = max(rep.errors) <= EXACT_FLOOR
    else:
        ok = rep.fitted_order >= oracle.rate_floor
    print(f"floor {oracle.rate_floor}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def _shake_sets(cfg: dict, dim: int):
    s = cfg["shake"]
    preset = s["S"]
    if isinstance(preset, list):
        S = [tuple(np.atleast_1d(y)) for y in preset]
    elif preset == "axes":
        S = default_space_shifts(dim)
    elif preset == "circle8":
        S = circle_shifts(8, dim=dim)
    else:
        raise ConfigurationError(f"unknown S preset {preset!r} (axes|circle8 or a list)")
    lam = s["Lambda"]
    if isinstance(lam, list):
        L = [float(r) for r in lam]
    elif lam in ("none", None):
        L = []
    elif lam == "default":
        L = list(DEFAULT_TIME_SHIFTS)
    else:
        L = [float(r) for r in str(lam).split(",")]
    return S, L


def cmd_shake(cfg: dict) -> int:
    problem, oracle = load_problem(cfg)
    spec = mesh_spec_for(problem, cfg)
    mesh = build_mesh(spec)
    config = solver_config(cfg, exterior_for(cfg, oracle, spec.T))
    S, L = _shake_sets(cfg, problem.dim)
    eps_list = [float(e) for e in cfg["shake"]["eps"]]
    if any(e <= 0 for e in eps_list):
        raise ConfigurationError("shake magnitudes must be positive")
    reference = solve_parabolic(problem, mesh, config)
    rows = []
    for eps in eps_list:
        gap = shake_gap(problem, mesh, ShakeSpec(eps, S, L, bool(cfg["shake"]["shift_terminal"])), config, reference)
        rows.append(dict(epsilon=eps, gap=gap, ratio=gap / eps))
    ratios = [r["ratio"] for r in rows]
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else float("inf")
    ok = spread < 2.0
    lines = [f"{'eps':>10} {'gap':>14} {'gap/eps':>12}"]
    lines += [f"{r['epsilon']:10.4g} {r['gap']:14.6e} {r['ratio']:12.6g}" for r in rows]
    lines.append(f"ratio spread {spread:.4g} ({'PASS' if ok else 'FAIL'}, limit 2)")
    text = "\n".join(lines)
    out = _Writer(cfg)
    out.csv("shake.csv", "epsilon,gap,ratio\n" + "".join(f"{r['epsilon']!r},{r['gap']!r},{r['ratio']!r}\n" for r in rows))
    out.report("shake", dict(rows=rows, spread=spread, passed=ok), text)
    print(text)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_compare(cfg: dict) -> int:
    problem, oracle = load_problem(cfg)
    spec = mesh_spec_for(problem, cfg)
    mesh = build_mesh(spec)
    bump_f, bump_g = float(cfg["compare"]["bump_f"]), float(cfg["compare"]["bump_g"])
    f0, g0 = problem.f, problem.g
    upper = problem.replace(
        f=lambda a, t, x: np.asarray(f0(a, t, x), dtype=float) + bump_f,
        g=lambda x: np.asarray(g0(x), dtype=float) + bump_g,
        name=f"{problem.name}+bump",
    )
    rep = check_comparison(problem, upper, mesh, solver_config(cfg, exterior_for(cfg, oracle, spec.T)))
    _Writer(cfg).report("comparison", rep.to_dict(), rep.to_text())
    print(rep.to_text())
    if not rep.applicable:
        raise ConfigurationError(f"comparison not applicable: {rep.reason}")
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_elliptic(cfg: dict) -> int:
    sec = cfg["problem"]
    lam = cfg["elliptic"]["lambda"]
    if lam is not None and sec.get("name") == "twocontrol_diffusion":
        sec["params"] = dict(sec.get("params") or {}, lam=float(lam))
    problem, oracle = load_problem(cfg)
    if lam is not None and problem.lam != float(lam):
        raise ConfigurationError("--lambda applies only to problems that take it as a parameter")
    mesh = build_mesh(mesh_spec_for(problem, cfg))
    tol = float(cfg["elliptic"]["tol"])
    exterior = exterior_for(cfg, oracle, mesh.T)
    vi = solve_elliptic(problem, mesh, EllipticConfig(mode="value_iteration", tol=tol, exterior=exterior))
    lh = solve_elliptic(problem, mesh, EllipticConfig(mode="long_horizon", tol=tol, exterior=exterior))
    gap = float(np.abs(vi.u - lh.u).max())
    ok = gap <= 10 * tol
    payload = dict(
        value_iteration=dict(iterations=vi.iterations, residual=vi.residual),
        long_horizon=dict(iterations=lh.iterations, residual=lh.residual, horizon=lh.horizon),
        agreement=gap,
        threshold=10 * tol,
        passed=ok,
    )
    text = (
        f"value_iteration  {vi.iterations:>8d} iterations\n"
        f"long_horizon     {lh.iterations:>8d} steps (T = {lh.horizon:g})\n"
        f"agreement        {gap:.3e} (limit {10 * tol:.1e}) {'PASS' if ok else 'FAIL'}"
    )
    out = _Writer(cfg)
    out.csv("elliptic.csv", _field_csv(mesh, vi.u))
    out.report("elliptic", payload, text)
    print(text)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_catalog(cfg: dict) -> int:
    for name in CATALOG_NAMES:
        print(f"{name:<22} {CATALOG_BLURBS.get(name, '')}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "study": cmd_study,
    "shake": cmd_shake,
    "compare": cmd_compare,
    "elliptic": cmd_elliptic,
    "catalog": cmd_catalog,
}


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not solver failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="bellman-fd",
        description="Monotone finite-difference solvers for Bellman equations.",
        epilog="Exit codes: 0 ok, 1 configuration error, 2 solver failure, 3 check failed.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    g = common.add_argument_group("problem and mesh")
    g.add_argument("--config", help="YAML config file; flags override it")
    g.add_argument("--problem", help=f"catalog name ({', '.join(CATALOG_NAMES)}) or a problem YAML file")
    g.add_argument("--param", action="append", type=_param, metavar="KEY=VALUE", help="catalog problem parameter")
    g.add_argument("--T", type=float, help="horizon (default: per problem)")
    g.add_argument("--tau", type=float, help="time step (default: per problem)")
    g.add_argument("--h", type=float, help="space step (default: per problem)")
    g.add_argument("--R", type=int, help="index radius of the lattice box (default: per problem)")
    s = common.add_argument_group("solver")
    s.add_argument("--scheme", choices=["implicit", "semidiscrete", "elliptic"], help="default implicit")
    s.add_argument("--method", choices=["banach", "howard"], help="slice solver (default banach)")
    s.add_argument("--tol", type=float, help="slice stopping threshold (default 1e-10*(1-delta))")
    s.add_argument("--max-iter", dest="max_iter", type=int, help="slice iteration cap (default 1e6 / 1e3)")
    s.add_argument("--exterior", help="clamp (default) | extend_terminal | constant:V | oracle")
    s.add_argument("--threads", type=int, help=f"thread count (default ${THREADS_ENV} or all cores)")
    o = common.add_argument_group("output")
    o.add_argument("--out", help="output directory (default bellman_fd_out)")
    o.add_argument("--format", help="comma list of json,text,csv (default all)")

    sub.add_parser("solve", parents=[common], help="solve one problem and report regularity")
    p = sub.add_parser("study", parents=[common], help="convergence-rate study against a closed form")
    p.add_argument("--study-h", dest="study_h", type=_floats, metavar="H1,H2,...", help="mesh family (default 0.2,0.1,0.05,0.025)")
    p.add_argument("--tau-rule", dest="tau_rule", help="h (default), h2, or a fixed number")
    p = sub.add_parser("shake", parents=[common], help="gap between shaken and original solutions")
    p.add_argument("--eps", type=_floats, metavar="E1,E2,...", help="shake magnitudes (default 0.2,0.1,0.05)")
    p.add_argument("--S", help="space-shift preset: axes (default) | circle8")
    p.add_argument("--Lambda", help="time-shift preset: none (default) | default | comma list")
    p.add_argument("--keep-terminal", action="store_true", help="do not shift the terminal data")
    p = sub.add_parser("compare", parents=[common], help="comparison check with raised f and g")
    p.add_argument("--bump-f", dest="bump_f", type=float, help="added to f of the upper problem (default 1)")
    p.add_argument("--bump-g", dest="bump_g", type=float, help="added to g of the upper problem (default 0)")
    p = sub.add_parser("elliptic", parents=[common], help="stationary solve in both modes")
    p.add_argument("--lambda", dest="lam", type=float, help="discount for problems taking it as a parameter")
    p.add_argument("--elliptic-tol", dest="elliptic_tol", type=float, help="stationary tolerance (default 1e-8)")
    sub.add_parser("catalog", help="list built-in problems")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    stage = "config"
    try:
        cfg = resolve_config(args)
        stage = args.command
        return COMMANDS[args.command](cfg)
    except _Fail as exc:
        print(f"{exc.stage}: {exc}", file=sys.stderr)
        return exc.code
    except ConvergenceError as exc:
        print(f"{stage}: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except BellmanFDError as exc:
        print(f"{stage}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
