"""Audit of right-hand sides against the structural condition on f.

For f >= 0 and order k the two inequalities are::

    |Df| <= C0 * f^(1 - 1/k)
    f f_xixi - (1 - 1/k) f_xi^2 >= -C0 * f^(2 - 1/k)     for all unit xi

The direction xi is eliminated exactly: the minimum of the quadratic form
over unit vectors is the smallest eigenvalue of
``M = f D^2 f - (1 - 1/k) Df (x) Df``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, DomainError
from .expr import Expression, parse
from .hessop import Grid, GridField, hessians

__all__ = ["RhsSpec", "ConditionHReport", "audit", "shift", "root_regularity_probe", "sample_points"]

DEGENERATE_REL = 1e-12


@dataclass(frozen=True)
class RhsSpec:
    """Right-hand side: an expression with exact derivatives, or a sampled field."""

    k: int
    expression: Expression | None = None
    sampled: GridField | None = None

    @classmethod
    def from_expression(cls, text, k: int):
        return cls(k, expression=parse(text))

    @classmethod
    def from_samples(cls, field: GridField, k: int):
        return cls(k, sampled=field)

    @property
    def kind(self) -> str:
        return "expression" if self.expression is not None else "sampled"

    def __post_init__(self):
        if (self.expression is None) == (self.sampled is None):
            raise ConfigurationError("RhsSpec needs exactly one of expression / sampled")
        if self.k < 1:
            raise DomainError("order k must be >= 1")

    def values(self, x) -> np.ndarray:
        if self.expression is None:
            raise ConfigurationError("sampled right-hand sides can only be read at their grid points")
        return self.expression(x)


@dataclass
class ConditionHReport:
    c0_gradient: float
    c0_hessian: float
    worst_point_gradient: list | None
    worst_point_hessian: list | None
    degenerate_points_checked: int
    degenerate_failures: int
    samples: int
    spacing: list
    k: int
    passed: bool | None = None
    C0: float | None = None
    tolerances: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "c0_gradient": self.c0_gradient,
            "c0_hessian": self.c0_hessian,
            "worst_point_gradient": self.worst_point_gradient,
            "worst_point_hessian": self.worst_point_hessian,
            "degenerate_points_checked": self.degenerate_points_checked,
            "degenerate_failures": self.degenerate_failures,
            "samples": self.samples,
            "grid_spacing": self.spacing,
            "k": self.k,
            "C0": self.C0,
            "pass": self.passed,
            "tolerances": self.tolerances,
        }


def sample_points(grid: Grid, domain=None) -> np.ndarray:
    """Grid points in the closed domain (all grid points if no domain)."""
    pts = grid.points
    if domain is None:
        return pts
    return pts[domain.phi(pts) <= 0]


def _central_gradient(u: GridField) -> np.ndarray:
    g = u.grid
    idx = g.multi_index(u.layout.interior)
    out = np.empty((idx.shape[0], g.n))
    for a in range(g.n):
        e = np.zeros(g.n, dtype=int)
        e[a] = 1
        out[:, a] = (u.values[g.flat_index(idx + e)] - u.values[g.flat_index(idx - e)]) / (2 * g.h[a])
    return out


def _derivatives(f: RhsSpec, grid: Grid, domain=None):
    if f.expression is not None:
        x = sample_points(grid, domain)
        v, g, H = f.expression.jet(x)
        return x, v, g, H
    u = f.sampled
    x = u.layout.interior_points()
    return x, u.interior_values(), _central_gradient(u), hessians(u)


def audit(f: RhsSpec, grid: Grid, C0: float | None = None, domain=None) -> ConditionHReport:
    """Smallest constants for which both inequalities hold at the sample points."""
    k = f.k
    x, v, g, H = _derivatives(f, grid, domain)
    if x.shape[0] == 0:
        raise DomainError("no sample points inside the domain")
    fmax = float(np.max(np.abs(v)))
    if np.any(v < -1e-12 * fmax):
        i = int(np.argmin(v))
        raise DomainError(f"f is negative ({v[i]:.3g}) at {x[i].tolist()}")
    v = np.maximum(v, 0.0)
    eps_f = DEGENERATE_REL * fmax
    live = v > eps_f
    gnorm = np.linalg.norm(g, axis=-1)

    ratio_g = np.zeros_like(v)
    ratio_g[live] = gnorm[live] / v[live] ** (1.0 - 1.0 / k)
    M = v[:, None, None] * H - (1.0 - 1.0 / k) * g[:, :, None] * g[:, None, :]
    lam_min = np.linalg.eigvalsh(M)[:, 0]
    ratio_h = np.zeros_like(v)
    ratio_h[live] = np.maximum(0.0, -lam_min[live]) / v[live] ** (2.0 - 1.0 / k)

    h = float(np.max(grid.h))
    scale = 1.0 + float(gnorm.max())
    tol_grad = 1e-6 * scale * h
    tol_hess = 1e-6 * scale**2 * h
    dead = ~live
    # at zeros of f both inequalities force Df = 0 in the limit
    failures = int(np.count_nonzero(dead & ((gnorm > tol_grad) | (-gnorm**2 < -tol_hess))))

    ig = int(np.argmax(ratio_g))
    ih = int(np.argmax(ratio_h))
    rep = ConditionHReport(
        c0_gradient=float(ratio_g[ig]),
        c0_hessian=float(ratio_h[ih]),
        worst_point_gradient=x[ig].tolist() if live.any() else None,
        worst_point_hessian=x[ih].tolist() if live.any() else None,
        degenerate_points_checked=int(np.count_nonzero(dead)),
        degenerate_failures=failures,
        samples=int(x.shape[0]),
        spacing=grid.h.tolist(),
        k=k,
        C0=C0,
        tolerances={"degenerate_f": eps_f, "grad": tol_grad, "hess": tol_hess},
    )
    if C0 is not None:
        rep.passed = rep.c0_gradient <= C0 and rep.c0_hessian <= C0 and failures == 0
    return rep


def shift(f: RhsSpec, eps: float) -> RhsSpec:
    """The right-hand side f + eps (eps >= 0)."""
    if eps < 0:
        raise DomainError("shift needs eps >= 0")
    if eps == 0:
        return f
    if f.expression is not None:
        return RhsSpec(f.k, expression=parse(f"({f.expression.text}) + {eps!r}"))
    return RhsSpec(f.k, sampled=f.sampled.copy(f.sampled.values + eps))


@dataclass
class RootRegularity:
    lipschitz_estimate: float
    c11_proxy_max: float
    c11_proxy_growth_exponent: float
    zero_set_size: int
    f_min: float
    f_max: float

    def to_dict(self):
        return dict(self.__dict__)


def root_regularity_probe(f: RhsSpec, grid: Grid, domain=None, fit_window=None) -> RootRegularity:
    """Difference-quotient regularity of g = f^(1/k) on the grid.

    The growth exponent is the log-log slope of the upper envelope of the
    second-difference quotient of g against the distance to the sampled zero
    set of f, over ``fit_window`` (default ``[3h, half the largest distance]``).
    NaN when f has no sampled zeros.
    """
    pts = grid.points
    if f.expression is not None:
        fv = f.expression(pts)
        live = np.ones(grid.size, dtype=bool) if domain is None else domain.phi(pts) <= 0
    else:
        if f.sampled.grid != grid:
            raise ConfigurationError("sampled f lives on a different grid")
        fv = f.sampled.values.copy()
        live = f.sampled.mask != 0
    fv = np.where(live, fv, np.nan)
    fmax = float(np.nanmax(fv))
    if np.nanmin(fv) < -1e-12 * fmax:
        raise DomainError("f is negative")
    gv = np.maximum(fv, 0.0) ** (1.0 / f.k)
    G = gv.reshape(grid.m)
    h = grid.h
    n = grid.n
    lip = 0.0
    second = np.full(grid.m, np.nan)
    for a in range(n):
        sl = [slice(None)] * n
        fwd = [slice(None)] * n
        sl[a], fwd[a] = slice(0, -1), slice(1, None)
        dq = np.abs(G[tuple(fwd)] - G[tuple(sl)]) / h[a]
        if np.any(np.isfinite(dq)):
            lip = max(lip, float(np.nanmax(dq)))
        mid = [slice(None)] * n
        lo_ = [slice(None)] * n
        hi_ = [slice(None)] * n
        mid[a], lo_[a], hi_[a] = slice(1, -1), slice(0, -2), slice(2, None)
        d2 = np.abs(G[tuple(hi_)] - 2 * G[tuple(mid)] + G[tuple(lo_)]) / h[a] ** 2
        cur = second[tuple(mid)]
        second[tuple(mid)] = np.fmax(np.where(np.isnan(cur), -np.inf, cur), d2)
    second[np.isinf(second)] = np.nan
    sec = second.reshape(-1)
    c11 = float(np.nanmax(sec)) if np.any(np.isfinite(sec)) else 0.0

    zero = live & (np.nan_to_num(fv, nan=np.inf) <= DEGENERATE_REL * fmax)
    exponent = float("nan")
    if zero.any():
        dist, _ = cKDTree(pts[zero]).query(pts)
        ok = np.isfinite(sec) & (dist > 0)
        lo_w, hi_w = fit_window if fit_window is not None else (3 * float(h.max()), 0.5 * float(dist[ok].max()))
        sel = ok & (dist >= lo_w) & (dist <= hi_w)
        if np.count_nonzero(sel) >= 4:
            exponent = _envelope_slope(dist[sel], sec[sel])
    vals = fv[live]
    return RootRegularity(lip, c11, exponent, int(zero.sum()), float(np.nanmin(vals)), fmax)


def _envelope_slope(d, q, bins: int = 12) -> float:
    ld = np.log(d)
    edges = np.linspace(ld.min(), ld.max() + 1e-12, bins + 1)
    xs, ys = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        s = (ld >= lo) & (ld < hi)
        if s.any() and np.max(q[s]) > 0:
            j = np.argmax(np.where(s, q, -np.inf))
            xs.append(ld[j])
            ys.append(np.log(q[j]))
    if len(xs) < 2:
        return float("nan")
    return float(np.polyfit(xs, ys, 1)[0])
