"""Command-line entry point: ``khessian {solve,path,check-f,check-domain,validate,lab}``.

Configs are flat ``key = value`` files, one key per line, with JSON values::

    problem.n = 3
    problem.k = 2
    problem.domain.kind = "ball"
    problem.domain.radius = 1.0
    problem.f = "45*(x1^2+x2^2+x3^2)"
    problem.phi = "0"
    problem.theta = 1e-6
    grid.m = 33

Exit status: 0 success, 1 failed validation checks, 2 input error, 3 convergence failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .condh import RhsSpec, audit, root_regularity_probe
from .errors import ConvergenceError, InitializationError, InputError, KHessianError
from .geometry import DomainSpec, boundary_csv, boundary_samples, default_grid, is_k1_convex
from .hessop import save_field
from .lab import DEFAULT_SCHEDULE, ExperimentSpec, run_experiment, series_csv
from .solver import ProblemSpec, SolveOptions, comparison_check, path, solve, two_sided_bound

log = logging.getLogger("khessian")

COMMANDS = ("solve", "path", "check-f", "check-domain", "validate", "lab")
EXIT_OK, EXIT_CHECKS_FAILED, EXIT_INPUT, EXIT_CONVERGENCE = 0, 1, 2, 3


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("an integer")
    return v


def _num(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("a number")
    return float(v)


def _str(v):
    if not isinstance(v, str):
        raise TypeError("a string")
    return v


def _expr(v):
    # expressions may be given as numbers for constants
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return repr(float(v))
    return _str(v)


def _vec(v):
    if not isinstance(v, list) or not v:
        raise TypeError("a non-empty list of numbers")
    return [_num(x) for x in v]


def _schedule(v):
    if isinstance(v, str):
        try:
            v = [float(x) for x in v.split(",") if x.strip()]
        except ValueError:
            raise TypeError("a list of numbers or a comma-separated string") from None
    return _vec(v)


def _directions(v):
    if not isinstance(v, list) or not v:
        raise TypeError("a list of vectors")
    return [_vec(d) for d in v]


SCHEMA = {
    "command": _str,
    "problem.n": _int,
    "problem.k": _int,
    "problem.domain.kind": _str,
    "problem.domain.radius": _num,
    "problem.domain.center": _vec,
    "problem.domain.semi_axes": _vec,
    "problem.domain.expression": _str,
    "problem.domain.bbox_lo": _vec,
    "problem.domain.bbox_hi": _vec,
    "problem.f": _expr,
    "problem.phi": _expr,
    "problem.theta": _num,
    "problem.exact": _expr,
    "grid.m": _int,
    "grid.margin": _num,
    "grid.closure": _str,
    "schedule": _schedule,
    "solver.tol_newton": _num,
    "solver.max_iter": _int,
    "solver.linear_solver": _str,
    "check.C0": _num,
    "check.samples": _int,
    "lab.experiment": _str,
    "lab.samples": _int,
    "lab.directions": _directions,
    "lab.layer": _num,
    "output.dir": _str,
    "seed": _int,
}

DEFAULTS = {
    "problem.theta": 1e-6,
    "problem.phi": "0",
    "grid.m": 33,
    "grid.margin": 2.0,
    "grid.closure": "cut",
    "check.samples": 1000,
    "lab.samples": 100000,
    "seed": 0,
}


@dataclass
class RunConfig:
    """Validated flat key/value configuration; ``values`` holds only keys that were set."""

    values: dict = field(default_factory=dict)

    def get(self, key, default=None):
        if key in self.values:
            return self.values[key]
        return DEFAULTS.get(key, default)

    def require(self, key):
        if key not in self.values and key not in DEFAULTS:
            raise InputError(f"missing required key {key!r}")
        return self.get(key)

    @property
    def command(self):
        return self.values.get("command")


def check_value(key: str, value, where: str = ""):
    if key not in SCHEMA:
        raise InputError(f"{where}unknown key {key!r}")
    try:
        return SCHEMA[key](value)
    except TypeError as exc:
        raise InputError(f"{where}key {key!r} must be {exc.args[0]}, got {json.dumps(value)}") from None


def parse_config(text: str) -> RunConfig:
    """Strict parse: unknown keys, duplicate keys and bad values are errors with line numbers."""
    values = {}
    lines = {}
    unknown = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, rhs = line.partition("=")
        key, rhs = key.strip(), rhs.strip()
        if not key:
            raise InputError(f"line {lineno}: empty key")
        if key in lines:
            raise InputError(f"line {lineno}: duplicate key {key!r} (first set on line {lines[key]})")
        lines[key] = lineno
        try:
            value = json.loads(rhs)
        except json.JSONDecodeError as exc:
            raise InputError(f"line {lineno}: value of {key!r} is not valid JSON ({exc.msg})") from None
        if key not in SCHEMA:
            unknown.append(f"{key!r} (line {lineno})")
            continue
        values[key] = check_value(key, value, f"line {lineno}: ")
    if unknown:
        raise InputError("unknown keys: " + ", ".join(unknown))
    if "command" in values and values["command"] not in COMMANDS:
        raise InputError(f"line {lines['command']}: unknown command {values['command']!r}")
    return RunConfig(values)


def emit_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(emit_config(c)) == c``."""
    return "".join(f"{key} = {json.dumps(cfg.values[key])}\n" for key in sorted(cfg.values))


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Overrides are ``(key, value, source)`` triples; each shadowing is logged."""
    values = dict(cfg.values)
    for key, value, source in overrides:
        value = check_value(key, value, f"{source}: ")
        if key in values:
            log.info("override %s: %s -> %s (from %s)", key, json.dumps(values[key]), json.dumps(value), source)
        else:
            log.info("set %s = %s (from %s)", key, json.dumps(value), source)
        values[key] = value
    return RunConfig(values)


def _set_value(text: str):
    if "=" not in text:
        raise InputError(f"--set expects key=value, got {text!r}")
    key, _, raw = text.partition("=")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings such as expressions
    return key.strip(), value


# -- building domain objects ---------------------------------------------------

def domain_from(cfg: RunConfig) -> DomainSpec:
    n = cfg.require("problem.n")
    d = {k.split(".")[-1]: v for k, v in cfg.values.items() if k.startswith("problem.domain.")}
    if "kind" not in d:
        raise InputError("missing required key 'problem.domain.kind'")
    return DomainSpec.from_dict(d, n)


def problem_from(cfg: RunConfig, theta=None) -> ProblemSpec:
    return ProblemSpec(cfg.require("problem.n"), cfg.require("problem.k"), domain_from(cfg),
                       cfg.require("problem.f"), cfg.require("problem.phi"),
                       cfg.get("problem.theta") if theta is None else theta)


def grid_from(cfg: RunConfig, domain: DomainSpec):
    return default_grid(domain, cfg.get("grid.m"), cfg.get("grid.margin"))


def options_from(cfg: RunConfig) -> SolveOptions:
    return SolveOptions(tol_newton=cfg.get("solver.tol_newton"), max_iter=cfg.get("solver.max_iter", 100),
                        closure=cfg.get("grid.closure"), linear_solver=cfg.get("solver.linear_solver", "amg"))


# -- commands -----------------------------------------------------------------

def _out_dir(cfg: RunConfig) -> Path | None:
    d = cfg.get("output.dir")
    if d is None:
        return None
    p = Path(d)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {d!r}: {exc}") from None
    return p


def _write_report(out: Path | None, report: dict):
    if out is not None:
        (out / "report.json").write_text(json.dumps(report, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _exact_error(u, text):
    from .expr import parse
    ex = parse(text)(u.layout.interior_points())
    return float(np.max(np.abs(u.interior_values() - ex)))


def cmd_solve(cfg: RunConfig, echo) -> dict:
    p = problem_from(cfg)
    g = grid_from(cfg, p.domain)
    u, rep = solve(p, g, opts=options_from(cfg))
    report = {"command": "solve", "problem": p.to_dict(), "grid": _grid_dict(g), "solve": rep.to_dict(),
              "two_sided_bound": two_sided_bound(u)}
    if "problem.exact" in cfg.values:
        report["error_vs_exact"] = _exact_error(u, cfg.values["problem.exact"])
    out = _out_dir(cfg)
    if out is not None:
        save_field(u, out / "solution.field", out / "solution.mask")
        (out / "series.csv").write_text("iteration,residual\n" + "".join(
            f"{i},{r!r}\n" for i, r in enumerate(rep.residual_history)))
    echo(f"converged in {rep.iterations} iterations, residual {rep.final_residual:.3e}, "
         f"{rep.unknowns} unknowns, {rep.wall_time:.2f} s")
    if "error_vs_exact" in report:
        echo(f"sup error vs exact: {report['error_vs_exact']:.3e}")
    return report


def _grid_dict(g):
    return {"n": g.n, "lo": list(g.lo), "hi": list(g.hi), "m": list(g.m)}


def cmd_path(cfg: RunConfig, echo) -> dict:
    p = problem_from(cfg)
    g = grid_from(cfg, p.domain)
    schedule = cfg.get("schedule", DEFAULT_SCHEDULE)
    rep = path(p, g, schedule, opts=options_from(cfg))
    entries = rep.entries
    comparisons = [comparison_check(a.field, b.field).to_dict() for a, b in zip(entries, entries[1:])]
    report = {"command": "path", "problem": p.to_dict(), "grid": _grid_dict(g), "path": rep.to_dict(),
              "comparisons": comparisons}
    out = _out_dir(cfg)
    if out is not None:
        if entries:
            save_field(entries[-1].field, out / "solution.field", out / "solution.mask")
        (out / "series.csv").write_text(series_csv({
            "schedule": [e.theta for e in entries], "c11_series": [e.c11_proxy for e in entries],
            "residual_series": [e.report.final_residual for e in entries]}))
    for e in entries:
        echo(f"theta={e.theta:.1e}  iterations={e.report.iterations}  c11_proxy={e.c11_proxy:.6g}  "
             f"l1_residual={e.l1_residual_to_f:.3e}")
    if not rep.complete:
        _write_report(out, report)
        raise ConvergenceError(f"path stopped at stage {rep.failed_stage}: {rep.failure}", rep)
    return report


def cmd_check_f(cfg: RunConfig, echo) -> dict:
    n, k = cfg.require("problem.n"), cfg.require("problem.k")
    domain = domain_from(cfg)
    g = grid_from(cfg, domain)
    f = RhsSpec.from_expression(cfg.require("problem.f"), k)
    rep = audit(f, g, cfg.get("check.C0"), domain)
    probe = root_regularity_probe(f, g, domain)
    echo(f"c0_gradient={rep.c0_gradient:.6g}  c0_hessian={rep.c0_hessian:.3g}  "
         f"degenerate points={rep.degenerate_points_checked} (failures {rep.degenerate_failures})")
    if rep.passed is not None:
        echo("PASS" if rep.passed else "FAIL")
    return {"command": "check-f", "n": n, "audit": rep.to_dict(), "root_regularity": probe.to_dict()}


def cmd_check_domain(cfg: RunConfig, echo) -> dict:
    domain = domain_from(cfg)
    k = cfg.require("problem.k")
    res = is_k1_convex(domain, k, cfg.get("check.samples"))
    out = _out_dir(cfg)
    if out is not None and k >= 2:
        (out / "series.csv").write_text(boundary_csv(boundary_samples(domain, cfg.get("check.samples"))))
    echo(f"({k - 1})-convex: {'pass' if res.passed else 'fail'}, margin {res.margin:.6g}")
    return {"command": "check-domain", "domain": domain.to_dict(), "k": k, **res.to_dict()}


EXAMPLE = {
    "problem.n": 3, "problem.k": 2, "problem.domain.kind": "ball", "problem.domain.radius": 1.0,
    "problem.f": "45*(x1^2+x2^2+x3^2)", "problem.phi": "0", "problem.theta": 1e-6,
    "problem.exact": "sqrt(x1^2+x2^2+x3^2)^3 - 1", "grid.m": 33,
}


def cmd_validate(cfg: RunConfig, echo) -> dict:
    """Solve, compare with the closed form, audit f and check the domain; print a table."""
    base = dict(EXAMPLE) if "problem.f" not in cfg.values else {}
    cfg = RunConfig({**base, **cfg.values})
    p = problem_from(cfg)
    g = grid_from(cfg, p.domain)
    rows = []
    u, rep = solve(p, g, opts=options_from(cfg))
    rows.append(("solve converged", f"{rep.iterations} iterations", rep.converged and rep.iterations <= 25))
    if "problem.exact" in cfg.values:
        err = _exact_error(u, cfg.values["problem.exact"])
        rows.append(("sup error vs exact", f"{err:.3e}", err <= 1e-2))
    tsb = two_sided_bound(u)
    rows.append(("two-sided bound", f"{tsb['min_eigenvalue']:.3g} >= {tsb['bound']:.3g}", tsb["holds"]))
    f = RhsSpec.from_expression(p.f, p.k)
    a = audit(f, g, domain=p.domain)
    rows.append(("f gradient constant", f"{a.c0_gradient:.6g}", np.isfinite(a.c0_gradient)))
    rows.append(("f hessian constant", f"{a.c0_hessian:.3g}", a.degenerate_failures == 0))
    conv = is_k1_convex(p.domain, p.k) if p.domain.kind != "box" else None
    if conv is not None:
        rows.append((f"({p.k - 1})-convex domain", f"margin {conv.margin:.6g}", conv.passed))
    width = max(len(r[0]) for r in rows)
    for name, value, ok in rows:
        echo(f"{name:<{width}}  {value:<28}  {'PASS' if ok else 'FAIL'}")
    report = {"command": "validate", "problem": p.to_dict(), "grid": _grid_dict(g), "solve": rep.to_dict(),
              "checks": [{"name": r[0], "value": r[1], "pass": bool(r[2])} for r in rows]}
    report["passed"] = all(r[2] for r in rows)
    return report


def cmd_lab(cfg: RunConfig, echo) -> dict:
    name = cfg.require("lab.experiment")
    inputs = {}
    problem = grid = None
    if name in ("concavity", "maclaurin"):
        inputs = {"n": cfg.require("problem.n"), "k": cfg.require("problem.k"), "samples": cfg.get("lab.samples")}
    else:
        problem = problem_from(cfg)
        grid = grid_from(cfg, problem.domain)
        inputs = {"problem": problem.to_dict(), "grid_m": cfg.get("grid.m")}
        for key in ("schedule", "lab.directions", "lab.layer"):
            if key in cfg.values:
                inputs[key.split(".")[-1]] = cfg.values[key]
        if name == "theta_independence" and "schedule" not in inputs:
            inputs["schedule"] = DEFAULT_SCHEDULE
    spec = ExperimentSpec(name, inputs, cfg.get("seed"), cfg.get("output.dir"))
    report = run_experiment(spec, problem, grid)
    for key in ("violations", "worst_gap", "min_ratio", "analytic_bound", "max_over_min", "variation"):
        if key in report:
            echo(f"{key}: {report[key]}")
    return report


HANDLERS = {"solve": cmd_solve, "path": cmd_path, "check-f": cmd_check_f, "check-domain": cmd_check_domain,
            "validate": cmd_validate, "lab": cmd_lab}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="khessian", description="k-Hessian Dirichlet solver and diagnostics")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", metavar="PATH", help="flat key = value config file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (repeatable)")
    ap.add_argument("--output", metavar="DIR", help="artifact directory")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--grid-m", type=int)
    ap.add_argument("--theta", type=float)
    ap.add_argument("--quiet", action="store_true")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    echo = (lambda s: None) if args.quiet else print
    try:
        cfg = RunConfig()
        if args.config:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise InputError(f"cannot read config: {exc}") from None
            cfg = parse_config(text)
        if cfg.command is not None and cfg.command != args.command:
            raise InputError(f"config is for {cfg.command!r} but command {args.command!r} was given")
        overrides = [(*_set_value(s), "--set") for s in args.overrides]
        for flag, key in (("output", "output.dir"), ("seed", "seed"), ("grid_m", "grid.m"), ("theta", "problem.theta")):
            if getattr(args, flag) is not None:
                overrides.append((key, getattr(args, flag), f"--{flag.replace('_', '-')}"))
        cfg = apply_overrides(cfg, overrides)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            report = HANDLERS[args.command](cfg, echo)
        if args.command != "lab":
            report["config"] = cfg.values
            _write_report(_out_dir(cfg), report)
        if args.command == "validate" and not report["passed"]:
            return EXIT_CHECKS_FAILED
        return EXIT_OK
    except (ConvergenceError, InitializationError) as exc:
        log.error("convergence failure: %s", exc)
        return EXIT_CONVERGENCE
    except (KHessianError, ValueError) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
