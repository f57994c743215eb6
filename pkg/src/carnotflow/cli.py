"""``carnotflow simulate|verify|compare --config <path> [--out <dir>] [--tol <float>]``.

Exit codes: 0 pass, 1 ordering failure, 2 solver abort, 64 config error,
65 incompatible runs.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from . import oracles, solver, viscosity
from .fields import Grid, ScalarField, axis_names
from .groups import GroupError, GroupSpec, Point, make_euclidean, make_heisenberg, make_htype, random_points
from .polynomial import Polynomial

log = logging.getLogger("carnotflow")

EXIT_OK, EXIT_ORDER, EXIT_ABORT, EXIT_CONFIG, EXIT_INCOMPATIBLE = 0, 1, 2, 64, 65

SIM_KEYS = {
    "command", "group", "grid", "initial", "boundary", "variant", "T_end", "dt_safety",
    "snapshot_every", "snapshot_times", "output", "seed", "tol", "max_steps",
}
VERIFY_KEYS = {"command", "group", "checks", "output", "seed", "tol", "R0", "t", "samples", "barrier"}
COMPARE_KEYS = {"command", "a", "b", "shared", "output", "tol", "seed"}
CHECKS = ("htype_identities", "cylinder", "barrier", "grim_reaper")


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"config key '{key}': {msg}")
        self.key = key


def _need(cfg: dict, key: str, kind=None, where: str = ""):
    name = where + key
    if key not in cfg:
        raise ConfigError(name, "missing")
    val = cfg[key]
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(name, f"expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}")
    return val


def _number(cfg: dict, key: str, default=None, positive=False, where: str = "") -> float:
    name = where + key
    if key not in cfg:
        if default is None:
            raise ConfigError(name, "missing")
        return default
    val = cfg[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not np.isfinite(val):
        raise ConfigError(name, f"expected a finite number, got {val!r}")
    if positive and val <= 0:
        raise ConfigError(name, "must be positive")
    return float(val)


def _check_keys(cfg: dict, allowed: set, where: str = "") -> None:
    for k in cfg:
        if k not in allowed:
            raise ConfigError(where + k, "unknown key")


# -- config pieces ---------------------------------------------------------------

def parse_group(val, base_dir: str = ".") -> GroupSpec:
    try:
        if isinstance(val, dict):
            return GroupSpec.from_dict(val)
        if not isinstance(val, str) or ":" not in val:
            raise ConfigError("group", f"expected 'euclidean:n', 'heisenberg:n', 'htype:<file>' or an inline spec, got {val!r}")
        kind, arg = val.split(":", 1)
        if kind in ("euclidean", "heisenberg"):
            try:
                n = int(arg)
            except ValueError:
                raise ConfigError("group", f"bad dimension {arg!r}") from None
            if n < 1:
                raise ConfigError("group", "dimension must be at least 1")
            return make_euclidean(n) if kind == "euclidean" else make_heisenberg(n)
        if kind == "htype":
            path = arg if os.path.isabs(arg) else os.path.join(base_dir, arg)
            try:
                with open(path) as fh:
                    data = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError("group", f"cannot read H-type file {path}: {exc}") from None
            if isinstance(data, dict) and "J" in data:
                return make_htype(np.asarray(data["J"], dtype=float))
            return GroupSpec.from_dict(data)
        raise ConfigError("group", f"unknown preset kind {kind!r}")
    except (GroupError, ValueError, TypeError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("group", str(exc)) from None


def parse_grid(val, spec: GroupSpec) -> Grid:
    if not isinstance(val, dict):
        raise ConfigError("grid", "expected an object")
    try:
        if "lower" in val:
            _check_keys(val, {"lower", "upper", "counts"}, "grid.")
            g = Grid(tuple(_need(val, "lower", list, "grid.")), tuple(_need(val, "upper", list, "grid.")), tuple(_need(val, "counts", list, "grid.")))
        else:
            _check_keys(val, {"v_half", "z_half", "nv", "nz"}, "grid.")
            nv = int(_number(val, "nv", where="grid."))
            nz = int(_number(val, "nz", float(nv), where="grid."))
            g = Grid.box(spec, _number(val, "v_half", positive=True, where="grid."), _number(val, "z_half", 1.0, positive=True, where="grid."), nv, nz)
        g.check(spec)
        return g
    except ConfigError:
        raise
    except (ValueError, TypeError, GroupError) as exc:
        raise ConfigError("grid", str(exc)) from None


@dataclass
class InitialData:
    u0: Callable[[Point], np.ndarray]
    exact: Optional[Callable[[Point, float], np.ndarray]] = None


def _vz(p: Point):
    return np.sum(p.v * p.v, axis=-1), np.sum(p.z * p.z, axis=-1)


def parse_initial(val, spec: GroupSpec) -> InitialData:
    if isinstance(val, str):
        val = {"preset": val}
    if not isinstance(val, dict):
        raise ConfigError("initial", "expected a preset name or an object")
    if "polynomial" in val:
        _check_keys(val, {"polynomial"}, "initial.")
        try:
            poly = Polynomial.from_terms(val["polynomial"], spec.dim)
        except (ValueError, TypeError) as exc:
            raise ConfigError("initial.polynomial", str(exc)) from None
        return InitialData(lambda p: poly(p))
    preset = _need(val, "preset", str, "initial.")
    if preset == "grim_reaper":
        _check_keys(val, {"preset"}, "initial.")
        if spec.dim != 1 or spec.m2 != 0:
            raise ConfigError("initial.preset", "grim_reaper needs group euclidean:1")
        gr = oracles.grim_reaper()
        return InitialData(lambda p: gr(p, 0.0), gr)
    if preset == "paraboloid":
        # |v|^2 + quartic |v|^4 + z_coef |z|^2
        _check_keys(val, {"preset", "quartic", "z_coef"}, "initial.")
        q = _number(val, "quartic", 0.0, where="initial.")
        c = _number(val, "z_coef", 0.0, where="initial.")

        def u0(p):
            vv, zz = _vz(p)
            return vv + q * vv * vv + c * zz

        return InitialData(u0)
    if preset == "htype_barrier":
        _check_keys(val, {"preset"}, "initial.")
        try:
            return InitialData(viscosity.htype_barrier(spec))
        except GroupError as exc:
            raise ConfigError("initial.preset", str(exc)) from None
    raise ConfigError("initial.preset", f"unknown preset {preset!r}")


def parse_boundary(val, init: InitialData):
    if val is None or val == "frozen":
        return "frozen"
    if val == "exact":
        if init.exact is None:
            raise ConfigError("boundary", "'exact' needs an initial preset with a known solution")
        return init.exact
    rate = 1.0
    if isinstance(val, dict):
        _check_keys(val, {"mode", "rate"}, "boundary.")
        if val.get("mode") != "shifted":
            raise ConfigError("boundary.mode", f"expected 'shifted', got {val.get('mode')!r}")
        rate = _number(val, "rate", 1.0, where="boundary.")
    elif val != "shifted":
        raise ConfigError("boundary", f"expected 'frozen', 'exact', 'shifted' or {{mode, rate}}, got {val!r}")
    u0 = init.u0
    return lambda p, t: u0(p) + rate * t


# -- simulate --------------------------------------------------------------------

@dataclass
class Simulation:
    spec: GroupSpec
    problem: solver.FlowProblem
    init: InitialData
    max_steps: int


def build_simulation(cfg: dict, base_dir: str = ".", where: str = "") -> Simulation:
    _check_keys(cfg, SIM_KEYS, where)
    spec = parse_group(_need(cfg, "group", where=where), base_dir)
    init = parse_initial(_need(cfg, "initial", where=where), spec)
    if "grid" in cfg:
        grid = parse_grid(cfg["grid"], spec)
    elif init.exact is not None:
        grid = Grid((-1.2,), (1.2,), (201,))
    else:
        raise ConfigError(where + "grid", "missing")
    pts = grid.points(spec)
    try:
        u0 = ScalarField(grid, np.broadcast_to(init.u0(pts), grid.shape).copy(), 0.0)
    except (ValueError, oracles.OutsideDomain) as exc:
        raise ConfigError(where + "initial", str(exc)) from None
    boundary = parse_boundary(cfg.get("boundary", "exact" if init.exact is not None else "frozen"), init)
    snap_times = cfg.get("snapshot_times")
    if snap_times is not None and (not isinstance(snap_times, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in snap_times)):
        raise ConfigError(where + "snapshot_times", "expected a list of numbers")
    variant = cfg.get("variant", "det_plus")
    try:
        problem = solver.FlowProblem(
            spec,
            grid,
            u0,
            T_end=_number(cfg, "T_end", 0.1 if init.exact is not None else None, where=where),
            boundary=boundary,
            variant=variant,
            dt_safety=_number(cfg, "dt_safety", 0.25, positive=True, where=where),
            snapshot_every=int(_number(cfg, "snapshot_every", 0.0, where=where)),
            snapshot_times=snap_times,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in ("T_end", "dt_safety", "variant", "snapshot_times", "boundary") if k in msg), "config")
        raise ConfigError(where + key, msg) from None
    max_steps = int(_number(cfg, "max_steps", 10_000_000.0, positive=True, where=where))
    return Simulation(spec, problem, init, max_steps)


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_simulation(sim: Simulation, outdir: str, config_echo: dict) -> tuple:
    summary: dict = {"config": config_echo, "command": "simulate"}
    os.makedirs(outdir, exist_ok=True)
    try:
        trace = solver.run(sim.problem, sim.max_steps)
    except solver.SolverAbort as exc:
        summary.update(status="solver_abort", message=str(exc), node=list(exc.node) if exc.node else None, t=exc.t, exit_code=EXIT_ABORT)
        _write_json(os.path.join(outdir, "summary.json"), summary)
        return EXIT_ABORT, None
    trace.write(outdir, axis_names(sim.spec))
    fin = trace.final
    interior = sim.problem.grid.interior_mask()
    summary.update(
        status="ok",
        exit_code=EXIT_OK,
        final_time=fin.t,
        steps=len(trace.series) - 1,
        snapshots=len(trace.snapshots),
        min_eig=float(np.min(trace.series_array("min_eig"))),
        sup_u=float(np.max(np.abs(fin.values))),
    )
    if sim.init.exact is not None:
        exact = sim.init.exact(sim.problem.grid.points(sim.spec), fin.t)
        summary["final_error"] = float(np.max(np.abs(fin.values - exact)[interior], initial=0.0))
    _write_json(os.path.join(outdir, "summary.json"), summary)
    return EXIT_OK, trace


def cmd_simulate(cfg: dict, outdir: str, base_dir: str = ".") -> int:
    sim = build_simulation(cfg, base_dir)
    code, _ = _run_simulation(sim, outdir, cfg)
    return code


# -- verify ----------------------------------------------------------------------

def _check_htype_identities(spec, cfg, rng, tol):
    n = int(_number(cfg, "samples", 1000.0, positive=True))
    pts = Point(rng.standard_normal((n, spec.m1)), rng.standard_normal((n, spec.m2)))
    rep = viscosity.htype_identities_check(spec, pts)
    worst = max(rep["gradient_identity"], rep["hessian_identity"], rep["bracket_sum"])
    return worst <= (1e-6 if tol is None else tol), dict(rep, max_residual=worst)


def _check_cylinder(spec, cfg, rng, tol):
    R0 = _number(cfg, "R0", 1.0, positive=True)
    t = _number(cfg, "t", 0.25)
    if not 0 <= t < oracles.extinction_time(spec.m1, R0):
        raise ConfigError("t", "must lie in [0, extinction time)")
    n = int(_number(cfg, "samples", 100.0, positive=True))
    sol = oracles.shrinking_cylinder(spec, R0)
    rep = sol.report(oracles.points_on_cylinder(spec, np.full(n, oracles.cylinder_radius(spec.m1, R0, t)), rng), t)
    sim = oracles.self_similarity_check(spec, R0, t, oracles.points_on_cylinder(spec, np.full(n, R0), rng))
    lim = 1e-9 if tol is None else tol
    ok = rep["max_residual"] <= lim and sim["max_residual"] <= min(lim, 1e-10)
    return ok, {"residual": rep, "self_similarity": sim, "max_residual": max(rep["max_residual"], sim["max_residual"])}


def _check_barrier(spec, cfg, rng, tol):
    b = cfg.get("barrier", {})
    if not isinstance(b, dict):
        raise ConfigError("barrier", "expected an object")
    _check_keys(b, {"eps0", "C", "R", "N"}, "barrier.")
    try:
        h0 = viscosity.htype_barrier(spec)
    except GroupError as exc:
        raise ConfigError("group", str(exc)) from None
    C = b.get("C")
    bar = viscosity.BarrierSpec(h0, _number(b, "eps0", 1.0, positive=True, where="barrier."), 1.0 if C is None else _number(b, "C", positive=True, where="barrier."))
    rep = viscosity.barrier_validate(
        spec, bar, _number(b, "R", 10.0, positive=True, where="barrier."), int(_number(b, "N", 10000.0, positive=True, where="barrier.")),
        seed=int(rng.integers(2**31)), check_C=C is not None,
    )
    return rep.feasible, rep.to_dict()


def _check_grim_reaper(spec, cfg, rng, tol):
    sol = oracles.grim_reaper()
    n = int(_number(cfg, "samples", 1000.0, positive=True))
    x = rng.uniform(-1.5, 1.5, n)
    t = rng.uniform(-1, 1, n)
    rep = sol.report(Point(x[:, None], np.zeros((n, 0))), t)
    return rep["max_residual"] <= (1e-9 if tol is None else tol), rep


_CHECK_FNS = {
    "htype_identities": _check_htype_identities,
    "cylinder": _check_cylinder,
    "barrier": _check_barrier,
    "grim_reaper": _check_grim_reaper,
}


def cmd_verify(cfg: dict, outdir: str, tol: Optional[float] = None, base_dir: str = ".") -> int:
    _check_keys(cfg, VERIFY_KEYS)
    checks = _need(cfg, "checks", list)
    for c in checks:
        if c not in _CHECK_FNS:
            raise ConfigError("checks", f"unknown check {c!r}; known: {', '.join(CHECKS)}")
    spec = parse_group(cfg["group"], base_dir) if "group" in cfg else None
    if tol is None and "tol" in cfg:
        tol = _number(cfg, "tol", positive=True)
    rng = np.random.default_rng(int(_number(cfg, "seed", 0.0)))
    reports, all_ok = {}, True
    for c in checks:
        if c != "grim_reaper" and spec is None:
            raise ConfigError("group", f"missing (needed by check {c!r})")
        try:
            ok, rep = _CHECK_FNS[c](spec, cfg, rng, tol)
        except (GroupError, oracles.OutsideDomain) as exc:
            raise ConfigError("group", str(exc)) from None
        reports[c] = {"pass": bool(ok), "report": rep}
        all_ok &= bool(ok)
        log.info("%s: %s", c, "pass" if ok else "FAIL")
    os.makedirs(outdir, exist_ok=True)
    code = EXIT_OK if all_ok else EXIT_ORDER
    _write_json(os.path.join(outdir, "summary.json"), {"config": cfg, "command": "verify", "checks": reports, "exit_code": code})
    return code


# -- compare ---------------------------------------------------------------------

def cmd_compare(cfg: dict, outdir: str, tol: Optional[float] = None, base_dir: str = ".") -> int:
    """Config: ``{"a": {...}, "b": {...}, "shared": {...}}``; ``shared`` is merged into both."""
    _check_keys(cfg, COMPARE_KEYS)
    shared = cfg.get("shared", {})
    if not isinstance(shared, dict):
        raise ConfigError("shared", "expected an object")
    sims = {}
    for name in ("a", "b"):
        sub = _need(cfg, name, dict)
        merged = copy.deepcopy(shared)
        merged.update(sub)
        sims[name] = build_simulation(merged, base_dir, where=f"{name}.")
    pa, pb = sims["a"].problem, sims["b"].problem
    summary = {"config": cfg, "command": "compare"}
    os.makedirs(outdir, exist_ok=True)

    def incompatible(msg):
        summary.update(status="incompatible", message=msg, exit_code=EXIT_INCOMPATIBLE)
        _write_json(os.path.join(outdir, "summary.json"), summary)
        return EXIT_INCOMPATIBLE

    if pa.spec != pb.spec or pa.grid != pb.grid:
        return incompatible("runs use different groups or grids")
    ta_, tb_ = pa.snapshot_times, pb.snapshot_times
    if (ta_ is None) != (tb_ is None) or (ta_ is not None and not np.array_equal(ta_, tb_)) or pa.T_end != pb.T_end:
        return incompatible("runs have different snapshot_times or T_end")
    traces = {}
    for name in ("a", "b"):
        code, tr = _run_simulation(sims[name], os.path.join(outdir, name), merged_echo(cfg, name))
        if code != EXIT_OK:
            summary.update(status="solver_abort", run=name, exit_code=code)
            _write_json(os.path.join(outdir, "summary.json"), summary)
            return code
        traces[name] = tr
    if tol is None:
        tol = _number(cfg, "tol", 1e-6, positive=True)
    try:
        rep = solver.compare_runs(traces["a"], traces["b"], tol)
    except solver.GridMismatch as exc:
        return incompatible(str(exc))
    code = EXIT_OK if rep.ordered else EXIT_ORDER
    summary.update(status="ordered" if rep.ordered else "violated", ordering=rep.to_dict(), tol=tol, exit_code=code)
    _write_json(os.path.join(outdir, "summary.json"), summary)
    return code


def merged_echo(cfg: dict, name: str) -> dict:
    merged = copy.deepcopy(cfg.get("shared", {}))
    merged.update(cfg[name])
    return merged


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="carnotflow", description="Horizontal Gauss curvature flow experiments on Carnot groups.")
    ap.add_argument("command", choices=("simulate", "verify", "compare"))
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", default=None, help="output directory (default: config 'output' or ./carnotflow_out)")
    ap.add_argument("--tol", type=float, default=None, help="tolerance override for verify/compare")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "expected a JSON object")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.tol is not None and not (args.tol > 0 and np.isfinite(args.tol)):
            raise ConfigError("--tol", "must be a positive number")
        cfg = load_config(args.config)
        if "command" in cfg and cfg["command"] != args.command:
            raise ConfigError("command", f"config is for {cfg['command']!r}, invoked as {args.command!r}")
        base = os.path.dirname(os.path.abspath(args.config))
        outdir = args.out or cfg.get("output") or "carnotflow_out"
        if not isinstance(outdir, str):
            raise ConfigError("output", "expected a path string")
        if args.command == "simulate":
            code = cmd_simulate(cfg, outdir, base)
        elif args.command == "verify":
            code = cmd_verify(cfg, outdir, args.tol, base)
        else:
            code = cmd_compare(cfg, outdir, args.tol, base)
    except ConfigError as exc:
        print(f"carnotflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = {EXIT_OK: "pass", EXIT_ORDER: "FAIL", EXIT_ABORT: "solver abort", EXIT_INCOMPATIBLE: "incompatible"}[code]
    print(f"carnotflow {args.command}: {status} (exit {code}); outputs in {outdir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
