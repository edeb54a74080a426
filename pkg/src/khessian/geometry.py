"""Domains, boundary curvature, (k-1)-convexity and grid classification.

Conventions: every domain is ``{phi < 0}`` for a level-set function ``phi``,
normals point inward, and principal curvatures are positive on convex
boundaries.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GeometryError, InputError
from .expr import Expression, parse
from .hessop import BOUNDARY, EXTERIOR, INTERIOR, Cuts, Grid, Layout, directions
from .symfun import sigma

log = logging.getLogger(__name__)

KINDS = ("ball", "ellipsoid", "levelset", "box")
GRAD_FLOOR = 1e-8


@dataclass(frozen=True)
class DomainSpec:
    """``ball(center, radius)``, ``ellipsoid(center, semi_axes)``,
    ``levelset(expression, bbox_lo, bbox_hi)`` or ``box(center, semi_axes)``.

    ``box`` has corners; it is accepted by :func:`classify` but not by the
    curvature routines.
    """

    kind: str
    n: int
    center: tuple = None
    radius: float = None
    semi_axes: tuple = None
    expression: str = None
    bbox_lo: tuple = None
    bbox_hi: tuple = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown domain kind {self.kind!r}; expected one of {KINDS}")
        n = self.n
        if self.kind != "levelset":
            c = (0.0,) * n if self.center is None else tuple(float(v) for v in self.center)
            if len(c) != n:
                raise InputError(f"domain center must have {n} entries")
            object.__setattr__(self, "center", c)
        if self.kind == "ball":
            if self.radius is None or not self.radius > 0:
                raise InputError("ball needs a positive radius")
        elif self.kind in ("ellipsoid", "box"):
            a = self.semi_axes
            if a is None or len(a) != n or min(a) <= 0:
                raise InputError(f"{self.kind} needs {n} positive semi-axes")
            object.__setattr__(self, "semi_axes", tuple(float(v) for v in a))
        else:
            if self.expression is None or self.bbox_lo is None or self.bbox_hi is None:
                raise InputError("levelset domain needs expression, bbox_lo and bbox_hi")
            object.__setattr__(self, "bbox_lo", tuple(np.broadcast_to(self.bbox_lo, (n,)).astype(float).tolist()))
            object.__setattr__(self, "bbox_hi", tuple(np.broadcast_to(self.bbox_hi, (n,)).astype(float).tolist()))
            parse(self.expression)

    @classmethod
    def ball(cls, n, radius=1.0, center=None):
        return cls("ball", n, center=center, radius=float(radius))

    @classmethod
    def ellipsoid(cls, semi_axes, center=None):
        return cls("ellipsoid", len(semi_axes), center=center, semi_axes=tuple(semi_axes))

    @classmethod
    def box(cls, semi_axes, center=None):
        return cls("box", len(semi_axes), center=center, semi_axes=tuple(semi_axes))

    @classmethod
    def levelset(cls, n, expression, bbox_lo, bbox_hi):
        return cls("levelset", n, expression=str(expression), bbox_lo=bbox_lo, bbox_hi=bbox_hi)

    @classmethod
    def from_dict(cls, d: dict, n: int):
        d = dict(d)
        kind = d.pop("kind", None)
        allowed = {"center", "radius", "semi_axes", "expression", "bbox_lo", "bbox_hi"}
        extra = set(d) - allowed
        if extra:
            raise InputError(f"unknown domain keys: {sorted(extra)}")
        return cls(kind, n, **d)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for key in ("center", "radius", "semi_axes", "expression", "bbox_lo", "bbox_hi"):
            val = getattr(self, key)
            if val is not None:
                out[key] = list(val) if isinstance(val, tuple) else val
        return out

    @property
    def bbox(self):
        if self.kind == "ball":
            c = np.array(self.center)
            return c - self.radius, c + self.radius
        if self.kind in ("ellipsoid", "box"):
            c, a = np.array(self.center), np.array(self.semi_axes)
            return c - a, c + a
        return np.array(self.bbox_lo), np.array(self.bbox_hi)

    @property
    def centroid(self) -> np.ndarray:
        if self.kind == "levelset":
            lo, hi = self.bbox
            return 0.5 * (lo + hi)
        return np.array(self.center)

    @property
    def _expr(self) -> Expression:
        return parse(self.expression)

    def phi(self, x) -> np.ndarray:
        """Level-set function, negative inside."""
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            y = x - np.array(self.center)
            return (np.einsum("...i,...i", y, y) - self.radius**2) / (2 * self.radius)
        if self.kind == "ellipsoid":
            y = (x - np.array(self.center)) / np.array(self.semi_axes)
            return np.einsum("...i,...i", y, y) - 1.0
        if self.kind == "box":
            y = np.abs(x - np.array(self.center)) / np.array(self.semi_axes)
            return y.max(axis=-1) - 1.0
        return self._expr(x)

    def phi_jet(self, x):
        """Value, gradient and Hessian of the level-set function."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        n = self.n
        if self.kind == "ball":
            y = x - np.array(self.center)
            H = np.broadcast_to(np.eye(n) / self.radius, shape + (n, n)).copy()
            return self.phi(x), y / self.radius, H
        if self.kind == "ellipsoid":
            a2 = np.array(self.semi_axes) ** 2
            y = x - np.array(self.center)
            H = np.broadcast_to(np.diag(2.0 / a2), shape + (n, n)).copy()
            return self.phi(x), 2.0 * y / a2, H
        if self.kind == "box":
            raise GeometryError("box domains have corners; curvature is undefined")
        return self._expr.jet(x)

    def distance(self, x) -> np.ndarray:
        """Distance to the boundary for inside points (exact for balls, first order otherwise)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return self.radius - np.linalg.norm(x - np.array(self.center), axis=-1)
        if self.kind == "box":
            y = np.abs(x - np.array(self.center))
            return (np.array(self.semi_axes) - y).min(axis=-1)
        v, g, _ = self.phi_jet(x)
        return -v / np.linalg.norm(g, axis=-1)


@dataclass
class BoundarySample:
    x: np.ndarray
    normal: np.ndarray  # inward unit normal
    curvatures: np.ndarray


def principal_curvatures(grad, hess, inward: bool = True) -> np.ndarray:
    """Principal curvatures of a level set from the derivatives of its function.

    Eigenvalues of the Hessian restricted to the tangent plane, divided by
    the gradient norm; positive for convex boundaries with the inward normal.
    ``inward=False`` reports them for the outward normal (signs flip).
    """
    grad = np.atleast_2d(grad)
    hess = np.asarray(hess).reshape(grad.shape + (grad.shape[-1],))
    n = grad.shape[-1]
    gnorm = np.linalg.norm(grad, axis=-1)
    nu = grad / gnorm[:, None]
    out = np.empty((grad.shape[0], n - 1))
    for i in range(grad.shape[0]):
        # orthonormal basis of the tangent plane: the n-1 trailing left singular vectors
        U = np.linalg.svd(nu[i][:, None])[0][:, 1:]
        W = U.T @ hess[i] @ U / gnorm[i]
        out[i] = np.linalg.eigvalsh(0.5 * (W + W.T))[::-1]
    return out if inward else -out


def _sphere_points(n: int, count: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])[: max(count, 1)]
    if n == 2:
        t = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    if n == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        r = np.sqrt(1 - z**2)
        t = np.pi * (1 + 5**0.5) * i
        return np.stack([r * np.cos(t), r * np.sin(t), z], axis=-1)
    v = np.random.default_rng(0).normal(size=(count, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _project(domain: DomainSpec, x, tol: float, max_steps: int = 50) -> np.ndarray:
    """Newton projection onto ``phi = 0`` along the gradient."""
    x = np.array(x, dtype=float, copy=True)
    if domain.kind == "box":
        c, a = np.array(domain.center), np.array(domain.semi_axes)
        y = x - c
        gap = a - np.abs(y)
        ax = np.argmin(gap, axis=-1)
        rows = np.arange(len(y))
        y[rows, ax] = np.sign(y[rows, ax]) * a[ax] + (y[rows, ax] == 0) * a[ax]
        return c + np.clip(y, -a, a)
    active = np.ones(len(x), dtype=bool)
    for _ in range(max_steps):
        v, g, _ = domain.phi_jet(x[active])
        gg = np.einsum("ij,ij->i", g, g)
        if np.any(gg < GRAD_FLOOR**2):
            bad = x[active][gg < GRAD_FLOOR**2][0]
            raise GeometryError(f"|grad phi| below {GRAD_FLOOR} near {bad}", bad)
        step = (v / gg)[:, None] * g
        x[active] -= step
        done = np.linalg.norm(step, axis=1) <= tol
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            return x
    bad = x[active][0]
    raise GeometryError(f"boundary projection did not converge in {max_steps} steps near {bad}", bad)


def _levelset_crossings(domain: DomainSpec, count: int) -> np.ndarray:
    lo, hi = domain.bbox
    n = domain.n
    res = 16
    for _ in range(6):
        axes = [np.linspace(a, b, res) for a, b in zip(lo, hi)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        P = domain.phi(X)
        pts = []
        for ax in range(n):
            a = [slice(None)] * n
            b = [slice(None)] * n
            a[ax], b[ax] = slice(0, -1), slice(1, None)
            pa, pb = P[tuple(a)], P[tuple(b)]
            cross = (pa < 0) != (pb < 0)
            xa, xb = X[tuple(a)][cross], X[tuple(b)][cross]
            t = (pa[cross] / (pa[cross] - pb[cross]))[:, None]
            pts.append(xa + t * (xb - xa))
        pts = np.concatenate(pts)
        if len(pts) >= 2 * count or res >= (4000 if n == 2 else 320):
            break
        grow = (2.2 * count / max(len(pts), 1)) ** (1.0 / max(n - 1, 1))
        res = int(min(res * max(grow, 1.5), 4000 if n == 2 else 320))
    if len(pts) == 0:
        raise GeometryError("no boundary crossings found inside the declared bounding box")
    if len(pts) > count:
        pts = pts[np.linspace(0, len(pts) - 1, count).round().astype(int)]
    return pts


def boundary_samples(domain: DomainSpec, count: int) -> list:
    """Quasi-uniform boundary points with inward normals and principal curvatures."""
    if count < 1:
        raise DomainError("count must be >= 1")
    n = domain.n
    if domain.kind == "box":
        raise GeometryError("box domains have corners; curvature is undefined")
    if domain.kind == "ball":
        s = _sphere_points(n, count)
        x = np.array(domain.center) + domain.radius * s
        kappa = np.full((len(s), n - 1), 1.0 / domain.radius)
        return [BoundarySample(x[i], -s[i], kappa[i]) for i in range(len(s))]
    if domain.kind == "ellipsoid":
        x = np.array(domain.center) + np.array(domain.semi_axes) * _sphere_points(n, count)
    else:
        lo, hi = domain.bbox
        x = _levelset_crossings(domain, count)
        x = _project(domain, x, tol=1e-12 * float(np.max(hi - lo)))
    _, g, H = domain.phi_jet(x)
    gn = np.linalg.norm(g, axis=-1)
    if np.any(gn < GRAD_FLOOR):
        bad = x[np.argmin(gn)]
        raise GeometryError(f"boundary not regular: |grad phi| = {gn.min():.3g} at {bad}", bad)
    normal = -g / gn[:, None]
    kappa = principal_curvatures(g, H)
    return [BoundarySample(x[i], normal[i], kappa[i]) for i in range(len(x))]


@dataclass
class ConvexityResult:
    passed: bool
    margin: float
    worst_point: np.ndarray | None = None

    def to_dict(self):
        return {"pass": self.passed, "margin": self.margin,
                "worst_point": None if self.worst_point is None else self.worst_point.tolist()}


def is_k1_convex(domain: DomainSpec, k: int, count: int = 1000) -> ConvexityResult:
    """Sampled (k-1)-convexity: ``margin = min sigma_j(kappa)`` over samples and j < k."""
    n = domain.n
    if not 1 <= k <= n:
        raise DomainError(f"order k={k} outside [1, {n}]")
    if k == 1:
        return ConvexityResult(True, float("inf"))
    samples = boundary_samples(domain, count)
    kap = np.array([s.curvatures for s in samples])
    vals = np.stack([np.atleast_1d(sigma(kap, j)) for j in range(1, k)], axis=-1)
    per_point = vals.min(axis=-1)
    i = int(np.argmin(per_point))
    margin = float(per_point[i])
    return ConvexityResult(margin > 0, margin, samples[i].x)


def boundary_csv(samples) -> str:
    """CSV dump: coordinates, inward normal, curvatures."""
    if not samples:
        return ""
    n = samples[0].x.size
    head = [f"x{i+1}" for i in range(n)] + [f"normal{i+1}" for i in range(n)] + [f"kappa{i+1}" for i in range(n - 1)]
    rows = [",".join(head)]
    for s in samples:
        rows.append(",".join("%.17g" % v for v in np.concatenate([s.x, s.normal, s.curvatures])))
    return "\n".join(rows) + "\n"


def default_grid(domain: DomainSpec, m: int, margin: float = 2.0) -> Grid:
    """Grid whose box leaves ``margin`` spacings around the domain's bounding box."""
    lo, hi = domain.bbox
    if domain.kind == "box":
        return Grid(domain.n, tuple(lo), tuple(hi), m)
    h = (hi - lo) / (m - 1 - 2 * margin)
    return Grid(domain.n, tuple(lo - margin * h), tuple(hi + margin * h), m)


def _segment_root(domain: DomainSpec, a, b, iters: int = 60) -> np.ndarray:
    """Fraction t in (0, 1] with phi(a + t (b - a)) = 0; phi(a) < 0 <= phi(b)."""
    lo = np.zeros(len(a))
    hi = np.ones(len(a))
    d = b - a
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        neg = domain.phi(a + mid[:, None] * d) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    return 0.5 * (lo + hi)


def _boundary_function(phi_boundary):
    if callable(phi_boundary) and not isinstance(phi_boundary, Expression):
        return phi_boundary
    return parse(phi_boundary)


def classify(domain: DomainSpec, grid: Grid, phi_boundary=0.0, closure: str = "projection",
             snap: float = 1e-3) -> Layout:
    """Label grid points and attach Dirichlet data.

    ``closure="projection"``: interior points have their whole stencil inside
    the domain; the remaining inside points are BOUNDARY and carry
    ``phi_boundary`` at their nearest boundary point (first-order placement).

    ``closure="cut"``: every inside point is an unknown; stencil arms that
    leave the domain are shortened to end on the boundary, where they carry
    ``phi_boundary`` (second-order closure).  Points whose shortest arm is
    below ``snap`` become BOUNDARY points instead.
    """
    if grid.n != domain.n:
        raise DomainError("grid and domain dimensions differ")
    if closure not in ("projection", "cut"):
        raise InputError(f"unknown closure {closure!r}")
    bfun = _boundary_function(phi_boundary)
    pts = grid.points
    h = grid.h
    inside = domain.phi(pts) < 0
    lo, hi = domain.bbox
    if np.any(lo < np.array(grid.lo) - 1e-12) or np.any(hi > np.array(grid.hi) + 1e-12):
        if domain.kind != "levelset":
            raise DomainError("grid bounding box does not contain the domain")
    idx = grid.multi_index(np.arange(grid.size))
    m = np.array(grid.m)
    dirs = directions(grid.n)
    cand = np.flatnonzero(inside)
    cidx = idx[cand]
    # neighbour status for every candidate, direction and side
    regular = np.ones((len(dirs), 2, cand.size), dtype=bool)
    ends = np.empty((len(dirs), 2, cand.size, grid.n))
    for d, off in enumerate(dirs):
        for side, o in enumerate((off, -off)):
            nb = cidx + o
            ok = np.all((nb >= 0) & (nb < m), axis=1)
            flat = np.zeros(cand.size, dtype=int)
            flat[ok] = grid.flat_index(nb[ok])
            regular[d, side] = ok & inside[flat]
            ends[d, side] = np.where(ok[:, None], pts[flat], pts[cand] + o * h)
    mask = np.full(grid.size, EXTERIOR, dtype=np.int8)
    bvals = np.full(grid.size, np.nan)
    tol = 1e-10 * float(h.min())

    if closure == "projection":
        full = regular.all(axis=(0, 1))
        mask[cand[full]] = INTERIOR
        bnd = cand[~full]
        mask[bnd] = BOUNDARY
        if bnd.size:
            feet = _project(domain, pts[bnd], tol)
            bvals[bnd] = bfun(feet)
        feet = feet if bnd.size else np.zeros((0, grid.n))
        return Layout(grid, mask, None, bvals, feet)

    theta = np.ones((len(dirs), 2, cand.size))
    value = np.full((len(dirs), 2, cand.size), np.nan)
    where = np.full((len(dirs), 2, cand.size, grid.n), np.nan)
    for d, off in enumerate(dirs):
        for side, o in enumerate((off, -off)):
            cut = ~regular[d, side]
            if not cut.any():
                continue
            a = pts[cand[cut]]
            b = ends[d, side, cut]
            if np.any(domain.phi(b) < 0):
                raise DomainError("domain touches the grid frame; enlarge the bounding box")
            t = _segment_root(domain, a, b)
            theta[d, side, cut] = t
            foot = a + t[:, None] * (b - a)
            where[d, side, cut] = foot
            value[d, side, cut] = bfun(foot)
    shortest = theta.min(axis=(0, 1))
    snapped = shortest < snap
    keep = ~snapped
    mask[cand[keep]] = INTERIOR
    sb = cand[snapped]
    mask[sb] = BOUNDARY
    feet = np.zeros((0, grid.n))
    if sb.size:
        feet = _project(domain, pts[sb], tol)
        bvals[sb] = bfun(feet)
    cuts = Cuts(theta[:, :, keep], value[:, :, keep], where[:, :, keep])
    layout = Layout(grid, mask, cuts, bvals, feet)
    log.debug("classified %d interior, %d boundary, %d cut arms", keep.sum(), sb.size, cuts.count)
    return layout


def attachments(layout: Layout):
    """All Dirichlet attachment points and values (boundary feet and cut ends)."""
    feet = layout.boundary_feet
    if feet is None:
        feet = layout.grid.points[layout.boundary]
    pts = [feet]
    if layout.boundary_values is None:
        vals = [np.full(len(feet), np.nan)]
    else:
        vals = [layout.boundary_values[layout.boundary]]
    if layout.cuts is not None and layout.cuts.where is not None:
        sel = ~np.isnan(layout.cuts.value)
        pts.append(layout.cuts.where[sel])
        vals.append(layout.cuts.value[sel])
    return np.concatenate(pts), np.concatenate(vals)


def check_partition(layout: Layout) -> bool:
    """Every point carries exactly one of the three labels."""
    return bool(np.isin(layout.mask, [EXTERIOR, BOUNDARY, INTERIOR]).all())


def closed_stencils(layout: Layout) -> bool:
    """True when every interior stencil neighbour is interior or boundary (or a cut end)."""
    g = layout.grid
    idx = g.multi_index(layout.interior)
    m = np.array(g.m)
    for d, off in enumerate(directions(g.n)):
        for side, o in enumerate((off, -off)):
            nb = idx + o
            reg = np.ones(len(idx), dtype=bool)
            if layout.cuts is not None:
                reg = np.isnan(layout.cuts.value[d, side])
            inb = np.all((nb[reg] >= 0) & (nb[reg] < m), axis=1)
            if not inb.all():
                return False
            if np.any(layout.mask[g.flat_index(nb[reg])] == EXTERIOR):
                return False
    return True


def connected(layout: Layout) -> bool:
    """Interior plus boundary points form one face-connected component."""
    from scipy import ndimage

    live = (layout.mask != EXTERIOR).reshape(layout.grid.m)
    _, count = ndimage.label(live)
    return count == 1
