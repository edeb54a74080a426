"""Numerical experiments on the structure behind the a priori estimates.

Each experiment returns a plain dict report that embeds its inputs and seed,
so a report file alone is enough to rerun it.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ConvergenceError, DomainError
from .hessop import Grid, GridField
from .solver import ProblemSpec, SolveOptions, c11_parts, path, solve
from .symfun import maclaurin_bound, sample_cone, sigma

__all__ = [
    "ExperimentSpec", "concavity_experiment", "maclaurin_ratio", "maclaurin_constant_experiment",
    "interior_boundary_gaps", "interior_boundary_experiment", "theta_independence_experiment",
    "DEFAULT_SCHEDULE", "run_experiment", "series_csv",
]

DEFAULT_SCHEDULE = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
CONCAVITY_SLACK = 1e-10


@dataclass
class ExperimentSpec:
    name: str
    inputs: dict = field(default_factory=dict)
    seed: int = 0
    output_path: str | None = None

    def to_dict(self):
        return {"name": self.name, "inputs": self.inputs, "seed": self.seed, "output_path": self.output_path}


def _root(lam, k):
    return np.maximum(sigma(lam, k), 0.0) ** (1.0 / k)


def concavity_experiment(n: int, k: int, samples: int, seed: int = 0) -> dict:
    """Midpoint concavity of sigma_k^(1/k) on random pairs from the cone."""
    if samples < 1:
        raise DomainError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    lam = sample_cone(n, k, 2 * samples, rng)
    a, b = lam[:samples], lam[samples:]
    gap = 0.5 * (_root(a, k) + _root(b, k)) - _root(0.5 * (a + b), k)
    return {
        "experiment": "concavity", "n": n, "k": k, "samples": samples, "seed": seed,
        "violations": int(np.count_nonzero(gap > CONCAVITY_SLACK)),
        "worst_gap": float(gap.max()),
    }


def maclaurin_ratio(lam, k: int):
    """sigma_{k-1} / sigma_k^((k-1)/k) after scaling lam so that sigma_k = 1."""
    lam = np.asarray(lam, dtype=float)
    sk = np.asarray(sigma(lam, k))
    skm1 = np.asarray(sigma(lam, k - 1)) if k > 1 else np.ones_like(sk)
    if np.any(sk <= 0):
        raise DomainError("spectrum outside the open cone")
    scale = sk ** (-1.0 / k)
    # sigma_j is homogeneous of degree j
    return skm1 * scale ** (k - 1) / (sk * scale**k) ** ((k - 1) / k)


def maclaurin_constant_experiment(n: int, k: int, samples: int, seed: int = 0) -> dict:
    """Empirical constant in sigma_{k-1} >= c * sigma_k^((k-1)/k) over the cone."""
    if samples < 1:
        raise DomainError("samples must be >= 1")
    lam = sample_cone(n, k, samples, np.random.default_rng(seed))
    ratio = np.atleast_1d(maclaurin_ratio(lam, k))
    bound = maclaurin_bound(n, k)
    return {
        "experiment": "maclaurin", "n": n, "k": k, "samples": samples, "seed": seed,
        "min_ratio": float(ratio.min()),
        "analytic_bound": bound,
        "violations": int(np.count_nonzero(ratio < bound * (1 - 1e-12))),
    }


def _unit(d, n):
    d = np.asarray(d, dtype=float)
    if d.shape != (n,) or not np.linalg.norm(d) > 0:
        raise ConfigurationError(f"direction {d.tolist()} is not a nonzero {n}-vector")
    return d / np.linalg.norm(d)


def interior_boundary_gaps(u: GridField, domain, directions=None, layer: float | None = None) -> list:
    """Largest second derivative along each direction, deep inside versus near the boundary.

    Interior points closer to the boundary than ``layer`` (default a quarter of
    the largest interior distance) form the near-boundary set.
    """
    n = u.grid.n
    directions = np.eye(n) if directions is None else [_unit(d, n) for d in directions]
    x = u.layout.interior_points()
    dist = domain.distance(x)
    if layer is None:
        layer = 0.25 * float(dist.max())
    near = dist < layer
    if near.all() or not near.any():
        raise DomainError(f"layer width {layer:g} leaves one side empty")
    H = u.layout.operator.hessians(u.values)
    out = []
    for eta in directions:
        d2 = np.einsum("i,pij,j->p", eta, H, eta)
        si, sb = float(d2[~near].max()), float(d2[near].max())
        out.append({"direction": np.asarray(eta).tolist(), "sup_interior": si, "sup_boundary": sb,
                    "gap": si - sb, "layer": layer})
    return out


def interior_boundary_experiment(p: ProblemSpec, g: Grid, directions=None, schedule=None,
                                 layer: float | None = None, opts: SolveOptions | None = None) -> dict:
    """Interior versus near-boundary second derivatives, at one theta or along a path.

    ``variation`` is, per direction, the ratio of the largest to the smallest
    ``|gap|`` over the stages.
    """
    stages = []
    if schedule is None:
        u, _ = solve(p, g, opts=opts)
        stages.append((p.theta, u))
    else:
        rep = path(p, g, schedule, opts=opts)
        if not rep.complete:
            raise _path_error(rep)
        stages.extend((e.theta, e.field) for e in rep.entries)
    rows = [{"theta": t, "directions": interior_boundary_gaps(u, p.domain, directions, layer)} for t, u in stages]
    ndir = len(rows[0]["directions"])
    variation = []
    for j in range(ndir):
        gaps = np.abs([r["directions"][j]["gap"] for r in rows])
        variation.append(float(gaps.max() / gaps.min()) if gaps.min() > 0 else (1.0 if gaps.max() == 0 else float("inf")))
    return {"experiment": "interior_boundary", "problem": p.to_dict(), "grid_m": list(g.m),
            "stages": rows, "variation": variation}


def _path_error(rep):
    return ConvergenceError(f"path failed at stage {rep.failed_stage}: {rep.failure}", rep)


def theta_independence_experiment(p: ProblemSpec, g: Grid, schedule=None, opts: SolveOptions | None = None) -> dict:
    """c11 proxy along the theta path and its max/min ratio."""
    schedule = list(DEFAULT_SCHEDULE if schedule is None else schedule)
    rep = path(p, g, schedule, opts=opts)
    if not rep.complete:
        raise _path_error(rep)
    c11 = [e.c11_proxy for e in rep.entries]
    return {
        "experiment": "theta_independence", "problem": p.to_dict(), "grid_m": list(g.m),
        "schedule": schedule,
        "c11_series": c11,
        "c11_parts": [c11_parts(e.field) for e in rep.entries],
        "residual_series": [e.report.final_residual for e in rep.entries],
        "l1_residual_series": [e.l1_residual_to_f for e in rep.entries],
        "max_over_min": max(c11) / min(c11),
        "path": rep.to_dict(),
    }


def series_csv(report: dict) -> str:
    """(theta, c11_proxy, residual) rows for the path experiments; empty otherwise."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta", "c11_proxy", "residual"])
    if "c11_series" in report:
        for row in zip(report["schedule"], report["c11_series"], report["residual_series"]):
            w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


_SAMPLED = {"concavity": concavity_experiment, "maclaurin": maclaurin_constant_experiment}


def run_experiment(spec: ExperimentSpec, problem: ProblemSpec | None = None, grid: Grid | None = None) -> dict:
    """Dispatch an experiment by name and write ``report.json``/``series.csv`` if an output path is set."""
    inp = dict(spec.inputs)
    if spec.name in _SAMPLED:
        try:
            report = _SAMPLED[spec.name](int(inp["n"]), int(inp["k"]), int(inp.get("samples", 100000)), spec.seed)
        except KeyError as exc:
            raise ConfigurationError(f"experiment {spec.name!r} needs input {exc.args[0]!r}") from None
    elif spec.name in ("interior_boundary", "theta_independence"):
        if problem is None or grid is None:
            raise ConfigurationError(f"experiment {spec.name!r} needs a problem and a grid")
        if spec.name == "theta_independence":
            report = theta_independence_experiment(problem, grid, inp.get("schedule"))
        else:
            report = interior_boundary_experiment(problem, grid, inp.get("directions"), inp.get("schedule"),
                                                  inp.get("layer"))
    else:
        raise ConfigurationError(f"unknown experiment {spec.name!r}")
    report["spec"] = spec.to_dict()
    report["seed"] = spec.seed
    if spec.output_path:
        out = Path(spec.output_path)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2, default=float) + "\n")
        (out / "series.csv").write_text(series_csv(report))
    return report
