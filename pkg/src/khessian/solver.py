"""Damped Newton for S_k[u] = f + theta with Dirichlet data, and the theta path.

Newton works on the concave form ``F[D^2 u] = S_k[u]^(1/k) = (f + theta)^(1/k)``.
Every accepted iterate is strictly k-admissible at all interior points and
has a strictly smaller sup-norm residual than its predecessor.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np
import pyamg
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, ConvergenceError, DomainError, GeometryError, InitializationError
from .expr import Expression, parse
from .geometry import DomainSpec, attachments, classify, is_k1_convex
from .hessop import EXTERIOR, Cuts, INTERIOR, Grid, GridField, Layout, sk_field, spectra
from .symfun import in_gamma, sigma, sigma_grad

log = logging.getLogger(__name__)

__all__ = [
    "ProblemSpec", "SolveOptions", "SolveReport", "PathEntry", "PathReport",
    "prepare", "solve", "default_start", "path", "c11_proxy", "c11_parts",
    "comparison_check", "two_sided_bound", "l1_residual",
]


@dataclass(frozen=True)
class ProblemSpec:
    """Dirichlet problem ``S_k[u] = f + theta`` in the domain, ``u = phi`` on its boundary."""

    n: int
    k: int
    domain: DomainSpec
    f: Expression
    phi: Expression
    theta: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "f", parse(self.f))
        object.__setattr__(self, "phi", parse(self.phi))
        if not 1 <= self.k <= self.n:
            raise DomainError(f"order k={self.k} outside [1, {self.n}]")
        if self.domain.n != self.n:
            raise DomainError("domain dimension differs from n")
        for e in (self.f, self.phi):
            if e.nvars > self.n:
                raise DomainError(f"expression {e.text!r} uses more than {self.n} variables")

    def with_theta(self, theta: float) -> "ProblemSpec":
        return ProblemSpec(self.n, self.k, self.domain, self.f, self.phi, theta)

    def to_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "domain": self.domain.to_dict(),
                "f": self.f.text, "phi": self.phi.text, "theta": self.theta}


@dataclass
class SolveOptions:
    tol_newton: float | None = None  # default 1e-9 * (1 + max (f + theta)^(1/k))
    max_iter: int = 100
    max_halvings: int = 30
    closure: str = "cut"
    linear_solver: str = "amg"  # or "direct" (sparse LU)
    check_domain: bool = True
    callback: object = None  # called as callback(iteration, field) on every accepted iterate


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    admissible: bool = False
    damping_events: int = 0
    final_residual: float = float("nan")
    wall_time: float = 0.0
    tol_newton: float = float("nan")
    converged: bool = False
    unknowns: int = 0
    continuation_steps: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def prepare(p: ProblemSpec, grid: Grid, closure: str = "cut") -> Layout:
    """Classify the grid for ``p.domain`` and attach the boundary data."""
    return classify(p.domain, grid, p.phi, closure=closure)


def _rhs(p: ProblemSpec, layout: Layout, theta: float) -> np.ndarray:
    f = p.f(layout.interior_points())
    fmax = max(float(np.max(np.abs(f))), 1.0)
    if np.any(f < -1e-12 * fmax):
        raise DomainError("f is negative at an interior point")
    return np.maximum(f, 0.0) + theta


def default_start(p: ProblemSpec, grid: Grid, layout: Layout | None = None) -> GridField:
    """Paraboloid ``A/2 |x - x_c|^2`` plus the affine least-squares fit of the boundary data.

    ``A`` makes ``C(n, k) A^k`` exceed ``max f + theta``, so the start has
    constant spectrum ``(A, ..., A)`` away from the boundary.
    """
    layout = layout or prepare(p, grid)
    pts = layout.grid.points
    live = layout.mask != EXTERIOR
    fmax = float(np.max(p.f(pts[live]))) if live.any() else 0.0
    A = ((max(fmax, 0.0) + p.theta) / comb(p.n, p.k)) ** (1.0 / p.k) + 1.0
    xc = p.domain.centroid
    return _paraboloid_start(layout, A, xc)


def _paraboloid_model(layout: Layout, A: float, xc):
    apts, avals = attachments(layout)
    quad = lambda x: 0.5 * A * np.sum((x - xc) ** 2, axis=-1)
    X = np.hstack([np.ones((len(apts), 1)), apts])
    coef = np.linalg.lstsq(X, avals - quad(apts), rcond=None)[0]
    return lambda x: quad(x) + coef[0] + x @ coef[1:]


def _paraboloid_start(layout: Layout, A: float, xc) -> GridField:
    model = _paraboloid_model(layout, A, xc)
    pts = layout.grid.points
    vals = np.full(layout.grid.size, np.nan)
    live = layout.mask != EXTERIOR
    vals[live] = model(pts[live])
    vals[layout.boundary] = layout.boundary_values[layout.boundary]
    return GridField(layout, vals)


def _harmonic_start(layout: Layout, A: float, xc) -> GridField:
    # discrete solution of tr D^2 u = n A with the boundary data
    op = layout.operator
    n = layout.grid.n
    lap, _ = op.weighted(np.broadcast_to(np.eye(n), (op.nint, n, n)))
    vals = _paraboloid_start(layout, A, xc).values.copy()
    vals[layout.interior] = 0.0
    offset = np.trace(op.hessians(vals), axis1=1, axis2=2)
    vals[layout.interior] = spla.spsolve(lap.tocsc(), n * A - offset)
    return GridField(layout, vals)


def _blended(layout: Layout, model, t: float) -> Layout:
    # same classification, Dirichlet data (1 - t) * model + t * data
    bvals = layout.boundary_values.copy()
    bnd = layout.boundary
    if bnd.size:
        # boundary data sit at the grid point itself
        bvals[bnd] = (1 - t) * model(layout.grid.points[bnd]) + t * bvals[bnd]
    cuts = layout.cuts
    if cuts is not None:
        value = cuts.value.copy()
        sel = ~np.isnan(value)
        value[sel] = (1 - t) * model(cuts.where[sel]) + t * value[sel]
        cuts = Cuts(cuts.theta, value, cuts.where)
    return Layout(layout.grid, layout.mask, cuts, bvals, layout.boundary_feet)


@dataclass
class _State:
    values: np.ndarray
    lam: np.ndarray
    Q: np.ndarray
    s: np.ndarray
    residual: np.ndarray
    admissible: bool

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0


def _evaluate(layout: Layout, values, k: int, target) -> _State:
    H = layout.operator.hessians(values)
    lam, Q = np.linalg.eigh(H)
    ok = np.atleast_1d(in_gamma(lam, k, strict=True))
    s = np.atleast_1d(sigma(lam, k))
    F = np.where(s > 0, np.abs(s) ** (1.0 / k), -np.inf)
    return _State(values, lam, Q, s, F - target, bool(ok.all()))


def _newton_direction(layout: Layout, st: _State, k: int, linear_solver: str = "amg") -> np.ndarray:
    grad = sigma_grad(st.lam, k)
    S = np.einsum("pij,pj,pkj->pik", st.Q, grad, st.Q)
    chain = (1.0 / k) * st.s ** (1.0 / k - 1.0)
    L, _ = layout.operator.weighted(S * chain[:, None, None])
    return _linear_solve(L.tocsr(), -st.residual, linear_solver)


def _linear_solve(L, b, method: str) -> np.ndarray:
    if method == "amg":
        ml = pyamg.ruge_stuben_solver(L)
        x = ml.solve(b, tol=1e-12, accel="gmres", maxiter=min(200, L.shape[0]))
        bnorm = float(np.linalg.norm(b)) or 1.0
        if np.linalg.norm(L @ x - b) <= 1e-8 * bnorm:
            return x
        log.info("multigrid solve stalled; falling back to sparse LU")
    elif method != "direct":
        raise ConfigurationError(f"unknown linear solver {method!r}")
    return spla.spsolve(L.tocsc(), b)


def solve(p: ProblemSpec, grid: Grid, u0: GridField | None = None, opts: SolveOptions | None = None,
          layout: Layout | None = None):
    """Solve ``S_k[u] = f + theta``; returns ``(field, SolveReport)``.

    Without ``u0`` the paraboloid start is used.  If the boundary data make it
    inadmissible next to the boundary, the data are blended in from the
    paraboloid's own boundary values in adaptive steps, with a Newton solve
    at every step.
    """
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    if not p.theta > 0:
        raise DomainError(f"regularization theta must be > 0, got {p.theta}")
    if opts.check_domain and p.k >= 2:
        try:
            conv = is_k1_convex(p.domain, p.k, 1000)
            if not conv.passed:
                warnings.warn(f"domain is not ({p.k - 1})-convex (margin {conv.margin:.3g}); solving anyway")
        except GeometryError as exc:
            log.info("skipping (k-1)-convexity check: %s", exc)
    if layout is None:
        layout = u0.layout if u0 is not None else prepare(p, grid, opts.closure)
    k = p.k
    target = _rhs(p, layout, p.theta) ** (1.0 / k)
    tol = opts.tol_newton if opts.tol_newton is not None else 1e-9 * (1.0 + float(np.max(target)))
    report = SolveReport(tol_newton=tol, unknowns=int(layout.interior.size))

    if u0 is None:
        u0 = default_start(p, grid, layout)
        st = _evaluate(layout, u0.values, k, target)
        if not st.admissible:
            # always admissible for k = 1: the discrete Laplacian is n A everywhere
            A = ((float(np.max(target)) ** k) / comb(p.n, k)) ** (1.0 / k) + 1.0
            st = _evaluate(layout, _harmonic_start(layout, A, p.domain.centroid).values, k, target)
        if not st.admissible:
            st = _data_continuation(p, layout, target, tol, opts, report)
    else:
        if u0.layout is not layout:
            raise DomainError("initial guess lives on a different layout")
        vals = u0.values.copy()
        vals[layout.boundary] = layout.boundary_values[layout.boundary]
        st = _evaluate(layout, vals, k, target)
        if not st.admissible:
            raise InitializationError("initial guess is not strictly k-admissible at every interior point")
    try:
        st = _newton(layout, st, k, target, tol, opts, report)
    finally:
        report.wall_time = time.perf_counter() - t0
    report.converged = True
    report.admissible = st.admissible
    report.final_residual = st.sup
    return GridField(layout, st.values), report


def _newton(layout: Layout, st: _State, k: int, target, tol: float, opts: SolveOptions, report: SolveReport):
    report.residual_history = [st.sup]
    if opts.callback is not None:
        opts.callback(report.iterations, GridField(layout, st.values))
    interior = layout.interior
    count = 0
    while st.sup > tol:
        if count >= opts.max_iter:
            report.final_residual = st.sup
            raise ConvergenceError(f"no convergence in {opts.max_iter} Newton steps (residual {st.sup:.3e})", report)
        step = _newton_direction(layout, st, k, opts.linear_solver)
        t = 1.0
        for halving in range(opts.max_halvings + 1):
            vals = st.values.copy()
            vals[interior] += t * step
            trial = _evaluate(layout, vals, k, target)
            if trial.admissible and trial.sup < st.sup:
                break
            t *= 0.5
        else:
            report.final_residual = st.sup
            report.admissible = True
            raise ConvergenceError(f"damping exhausted after {opts.max_halvings} halvings at iteration "
                                   f"{count + 1} (residual {st.sup:.3e})", report)
        report.damping_events += halving
        report.iterations += 1
        count += 1
        st = trial
        report.residual_history.append(st.sup)
        log.debug("newton %d: residual %.3e, step %g", report.iterations, st.sup, t)
        if opts.callback is not None:
            opts.callback(report.iterations, GridField(layout, st.values))
    return st


def _data_continuation(p: ProblemSpec, layout: Layout, target, tol, opts, report, min_step=2.0**-12):
    """Walk the Dirichlet data from the paraboloid's values to the real data.

    Returns an admissible state on ``layout`` itself; the caller finishes
    with Newton.
    """
    k = p.k
    A = ((float(np.max(target)) ** k) / comb(p.n, k)) ** (1.0 / k) + 1.0
    model = _paraboloid_model(layout, A, p.domain.centroid)
    live = layout.mask != EXTERIOR
    vals = np.full(layout.grid.size, np.nan)
    vals[live] = model(layout.grid.points[live])
    bnd = layout.boundary
    vals[bnd] = model(layout.grid.points[bnd])
    t, dt = 0.0, 0.25
    while True:
        tn = min(1.0, t + dt)
        lay = layout if tn == 1.0 else _blended(layout, model, tn)
        trial = vals.copy()
        trial[lay.boundary] = lay.boundary_values[lay.boundary]
        st = _evaluate(lay, trial, k, target)
        if st.admissible and tn == 1.0:
            report.continuation_steps += 1
            return st
        ok = False
        if st.admissible:
            try:
                st = _newton(lay, st, k, target, tol, opts, report)
                ok = True
            except ConvergenceError:
                pass
        if ok:
            report.continuation_steps += 1
            t, vals = tn, st.values
            dt = min(2 * dt, 1.0 - t)
            log.info("boundary data continuation reached t=%.4g", t)
            continue
        dt *= 0.5
        if dt < min_step:
            raise InitializationError(f"boundary data continuation stalled at t={t:.4g}")


# -- diagnostics ---------------------------------------------------------------

def _first_difference_max(u: GridField) -> float:
    g = u.grid
    V = np.where(u.mask == EXTERIOR, np.nan, u.values).reshape(g.m)
    best = 0.0
    for a in range(g.n):
        dq = np.abs(np.diff(V, axis=a)) / g.h[a]
        if np.any(np.isfinite(dq)):
            best = max(best, float(np.nanmax(dq)))
    return best


def c11_parts(u: GridField) -> dict:
    """The three pieces of the discrete C^{1,1} proxy."""
    H = u.layout.operator.hessians(u.values)
    lam = spectra(H)
    live = u.mask != EXTERIOR
    return {
        "hessian": float(np.max(np.abs(lam))) if lam.size else 0.0,
        "sup_u": float(np.max(np.abs(u.values[live]))),
        "gradient": _first_difference_max(u),
    }


def c11_proxy(u: GridField) -> float:
    """max(spectral radius of the discrete Hessian, sup|u|, max first difference quotient)."""
    return max(c11_parts(u).values())


def l1_residual(u: GridField, f: Expression, k: int) -> float:
    """Grid L1 distance between S_k[u] and f over interior points."""
    s = sk_field(u, k).interior_values()
    fv = f(u.layout.interior_points())
    return float(np.sum(np.abs(s - fv)) * np.prod(u.grid.h))


@dataclass
class Comparison:
    pointwise_leq: bool
    max_violation: float

    def to_dict(self):
        return dict(self.__dict__)


def comparison_check(u1: GridField, u2: GridField, tol: float = 0.0) -> Comparison:
    """Check ``u1 <= u2 + tol`` at every interior point."""
    if u1.grid != u2.grid or not np.array_equal(u1.mask, u2.mask):
        raise DomainError("fields live on different grids or masks")
    sel = u1.mask == INTERIOR
    diff = u1.values[sel] - u2.values[sel]
    worst = max(0.0, float(np.max(diff))) if diff.size else 0.0
    return Comparison(worst <= tol, worst)


def two_sided_bound(u: GridField) -> dict:
    """Smallest Hessian eigenvalue against ``-(n - 1) * largest - 10 h``."""
    lam = spectra(u.layout.operator.hessians(u.values))
    n = u.grid.n
    lo, hi = float(lam.min()), float(lam.max())
    bound = -(n - 1) * hi - 10.0 * float(np.max(u.grid.h))
    return {"min_eigenvalue": lo, "max_eigenvalue": hi, "bound": bound, "holds": lo >= bound}


# -- theta path -----------------------------------------------------------------

@dataclass
class PathEntry:
    theta: float
    report: SolveReport
    c11_proxy: float
    sup_u: float
    sup_grad: float
    l1_residual_to_f: float
    field: GridField = None

    def to_dict(self) -> dict:
        return {"theta": self.theta, "solve": self.report.to_dict(), "c11_proxy": self.c11_proxy,
                "sup_u": self.sup_u, "sup_grad": self.sup_grad, "l1_residual_to_f": self.l1_residual_to_f}


@dataclass
class PathReport:
    entries: list = field(default_factory=list)
    failed_stage: int | None = None
    failure: str | None = None

    @property
    def complete(self) -> bool:
        return self.failed_stage is None

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries],
                "failed_stage": self.failed_stage, "failure": self.failure}


def path(p: ProblemSpec, grid: Grid, schedule, u0: GridField | None = None,
         opts: SolveOptions | None = None, layout: Layout | None = None) -> PathReport:
    """Solve along a strictly decreasing theta schedule with warm starts."""
    schedule = [float(t) for t in schedule]
    if not schedule or any(t <= 0 for t in schedule) or any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise DomainError("schedule must be strictly decreasing and positive")
    opts = opts or SolveOptions()
    if layout is None:
        layout = u0.layout if u0 is not None else prepare(p, grid, opts.closure)
    out = PathReport()
    u = u0
    first = True
    for i, theta in enumerate(schedule):
        q = p.with_theta(theta)
        if u is not None:
            u = _recheck_warm_start(u, q.k, p.domain.centroid)
        try:
            stage_opts = opts if first else SolveOptions(**{**opts.__dict__, "check_domain": False})
            u, rep = solve(q, grid, u, stage_opts, layout=layout)
        except (ConvergenceError, InitializationError) as exc:
            out.failed_stage, out.failure = i, str(exc)
            log.warning("path stage %d (theta=%g) failed: %s", i, theta, exc)
            break
        first = False
        parts = c11_parts(u)
        out.entries.append(PathEntry(theta, rep, max(parts.values()), parts["sup_u"], parts["gradient"],
                                     l1_residual(u, p.f, p.k), u))
    return out


def _recheck_warm_start(u: GridField, k: int, center=None) -> GridField:
    """Return ``u`` if strictly admissible, else ``u + delta/2 (|x - c|^2 - rho^2)`` at interior points.

    ``rho`` is the largest attachment distance, so the bump is non-positive
    where it meets the fixed Dirichlet data.  ``delta`` starts at 1e-10 and
    grows tenfold (five tries) if rounding is not yet absorbed.
    """
    lam = spectra(u.layout.operator.hessians(u.values))
    if np.all(in_gamma(lam, k, strict=True)):
        return u
    lay = u.layout
    c = np.zeros(u.grid.n) if center is None else np.asarray(center, dtype=float)
    apts, _ = attachments(lay)
    rho2 = float(np.max(np.sum((apts - c) ** 2, axis=-1))) if len(apts) else 0.0
    x = lay.interior_points()
    bump = 0.5 * (np.sum((x - c) ** 2, axis=-1) - rho2)
    for j in range(5):
        vals = u.values.copy()
        vals[lay.interior] += 1e-10 * 10**j * bump
        v = GridField(lay, vals)
        if np.all(in_gamma(spectra(lay.operator.hessians(vals)), k, strict=True)):
            break
    return v
