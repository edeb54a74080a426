"""Finite-difference Hessians on uniform Cartesian grids.

The discrete Hessian is built from centred second differences along the
direction set ``{e_i} u {e_i + e_j, e_i - e_j : i < j}``::

    H_ii = D2(e_i) / h_i^2
    H_ij = (D2(e_i + e_j) - D2(e_i - e_j)) / (4 h_i h_j)

With full arms this is the usual 3-point / 4-point cross stencil.  A layout
may shorten an arm to a fraction ``theta`` of the grid offset when the
segment leaves the domain; the arm then ends on the boundary and carries a
known Dirichlet value (Shortley-Weller style).  The unequal-arm second
difference is exact on quadratics, like the regular one.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, InadmissibleError, InputError
from .symfun import in_gamma, sigma, sigma_grad

EXTERIOR, BOUNDARY, INTERIOR = 0, 1, 2
LABELS = {EXTERIOR: "exterior", BOUNDARY: "boundary", INTERIOR: "interior"}

__all__ = [
    "Grid", "Cuts", "Layout", "GridField", "HessianOperator", "LinearizedOperator",
    "EXTERIOR", "BOUNDARY", "INTERIOR",
    "directions", "hessian_at", "hessians", "spectrum", "spectra", "newton_tensor",
    "sk_field", "admissibility_mask", "linearized", "full_layout",
    "save_field", "load_field",
]


@dataclass(frozen=True)
class Grid:
    """Uniform grid with ``m[i]`` points on ``[lo[i], hi[i]]`` along axis i."""

    n: int
    lo: tuple
    hi: tuple
    m: tuple

    def __post_init__(self):
        for name in ("lo", "hi", "m"):
            val = getattr(self, name)
            val = tuple(np.broadcast_to(np.asarray(val), (self.n,)).tolist())
            object.__setattr__(self, name, val)
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if self.n < 1:
            raise DomainError("grid dimension must be >= 1")
        if min(self.m) < 5:
            raise DomainError(f"need at least 5 points per axis, got m={self.m}")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise DomainError(f"empty bounding box lo={self.lo} hi={self.hi}")

    @property
    def h(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / (np.array(self.m) - 1)

    @property
    def shape(self) -> tuple:
        return self.m

    @property
    def size(self) -> int:
        return int(np.prod(self.m))

    def axes(self):
        return [np.linspace(a, b, k) for a, b, k in zip(self.lo, self.hi, self.m)]

    @functools.cached_property
    def points(self) -> np.ndarray:
        """Coordinates of all points in lexicographic (C) order, shape ``(size, n)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([c.ravel() for c in mesh], axis=-1)

    def multi_index(self, flat):
        return np.stack(np.unravel_index(np.asarray(flat), self.m), axis=-1)

    def flat_index(self, idx):
        idx = np.asarray(idx)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.m)


def directions(n: int):
    """Integer offsets of the stencil directions: axes first, then diagonal pairs."""
    out = []
    for i in range(n):
        e = np.zeros(n, dtype=int)
        e[i] = 1
        out.append(e)
    for i, j in combinations(range(n), 2):
        for s in (1, -1):
            e = np.zeros(n, dtype=int)
            e[i], e[j] = 1, s
            out.append(e)
    return out


@dataclass(frozen=True)
class Cuts:
    """Shortened stencil arms of interior points.

    ``theta[d, 0, p]`` / ``theta[d, 1, p]`` is the forward / backward arm of
    direction ``d`` at the p-th interior point, as a fraction of the grid
    offset; ``value`` holds the Dirichlet datum at the arm end, NaN where the
    arm is a regular grid neighbour.
    """

    theta: np.ndarray
    value: np.ndarray
    where: np.ndarray = field(default=None)  # boundary coordinates, (ndir, 2, n_int, n)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.value)))


@dataclass(eq=False)
class Layout:
    """Grid plus point classification (and optional cut arms); shared by fields."""

    grid: Grid
    mask: np.ndarray
    cuts: Cuts | None = None
    boundary_values: np.ndarray | None = None  # Dirichlet data at BOUNDARY points, NaN elsewhere
    boundary_feet: np.ndarray | None = None  # where that data was taken, one row per BOUNDARY point

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.int8).reshape(-1)
        if self.mask.size != self.grid.size:
            raise DomainError("mask size does not match grid")

    @functools.cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.mask == INTERIOR)

    @functools.cached_property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.mask == BOUNDARY)

    @functools.cached_property
    def operator(self) -> "HessianOperator":
        return HessianOperator(self)

    def interior_points(self) -> np.ndarray:
        return self.grid.points[self.interior]


def full_layout(grid: Grid) -> Layout:
    """Whole box: the outer frame is BOUNDARY, everything else INTERIOR."""
    idx = grid.multi_index(np.arange(grid.size))
    edge = np.any((idx == 0) | (idx == np.array(grid.m) - 1), axis=1)
    return Layout(grid, np.where(edge, BOUNDARY, INTERIOR))


class GridField:
    """Scalar values on a grid; values at EXTERIOR points are never read."""

    def __init__(self, layout: Layout, values):
        self.layout = layout
        self.values = np.asarray(values, dtype=float).reshape(-1)
        if self.values.size != layout.grid.size:
            raise DomainError("value count does not match grid")

    @classmethod
    def sample(cls, layout: Layout, func):
        """Evaluate ``func(points)`` at interior and boundary points."""
        vals = np.full(layout.grid.size, np.nan)
        live = layout.mask != EXTERIOR
        vals[live] = func(layout.grid.points[live])
        return cls(layout, vals)

    @property
    def grid(self) -> Grid:
        return self.layout.grid

    @property
    def mask(self) -> np.ndarray:
        return self.layout.mask

    def interior_values(self) -> np.ndarray:
        return self.values[self.layout.interior]

    def copy(self, values=None) -> "GridField":
        return GridField(self.layout, self.values.copy() if values is None else values)

    def __repr__(self):
        return f"GridField(n={self.grid.n}, m={self.grid.m}, interior={self.layout.interior.size})"


def _second_difference_weights(tp, tm):
    s = tp + tm
    return 2.0 / (tp * s), 2.0 / (tm * s), -2.0 / (tp * tm)


class HessianOperator:
    """Affine map from point values to the discrete Hessian at interior points.

    ``H[:, a, b] = A[a, b] @ u[interior] + B[a, b] @ u[boundary] + c[a, b]``.
    """

    def __init__(self, layout: Layout):
        g = layout.grid
        n = g.n
        self.layout = layout
        interior = layout.interior
        nint = interior.size
        h = g.h
        idx = g.multi_index(interior)
        dirs = directions(n)
        cuts = layout.cuts
        col_of = np.full(g.size, -1)
        col_of[interior] = np.arange(nint)
        bcol_of = np.full(g.size, -1)
        bcol_of[layout.boundary] = np.arange(layout.boundary.size)
        self.nint, self.nbnd = nint, layout.boundary.size

        d2 = []
        rows = np.arange(nint)
        for d, off in enumerate(dirs):
            if cuts is None:
                tp = tm = np.ones(nint)
                vp = vm = np.full(nint, np.nan)
            else:
                tp, tm = cuts.theta[d, 0], cuts.theta[d, 1]
                vp, vm = cuts.value[d, 0], cuts.value[d, 1]
            wp, wm, w0 = _second_difference_weights(tp, tm)
            ri, ci, vi = [rows], [interior], [w0]
            const = np.zeros(nint)
            for nb_off, w, val in ((off, wp, vp), (-off, wm, vm)):
                cut = ~np.isnan(val)
                const[cut] += w[cut] * val[cut]
                nb = idx[~cut] + nb_off
                if np.any(nb < 0) or np.any(nb >= np.array(g.m)):
                    raise DomainError("an interior stencil leaves the grid; enlarge the bounding box")
                ri.append(rows[~cut])
                ci.append(g.flat_index(nb))
                vi.append(w[~cut])
            r, c, v = np.concatenate(ri), np.concatenate(ci), np.concatenate(vi)
            lab = layout.mask[c]
            if np.any(lab == EXTERIOR):
                bad = g.points[c[lab == EXTERIOR][0]]
                raise DomainError(f"interior stencil reads an exterior point at {bad}")
            inner = lab == INTERIOR
            A = sp.csr_matrix((v[inner], (r[inner], col_of[c[inner]])), shape=(nint, nint))
            B = sp.csr_matrix((v[~inner], (r[~inner], bcol_of[c[~inner]])), shape=(nint, self.nbnd))
            d2.append((A, B, const))

        self.A = {}
        self.B = {}
        self.c = {}
        for a in range(n):
            A, B, const = d2[a]
            self.A[a, a], self.B[a, a], self.c[a, a] = A / h[a] ** 2, B / h[a] ** 2, const / h[a] ** 2
        k = n
        for a, b in combinations(range(n), 2):
            (Ap, Bp, cp), (Am, Bm, cm) = d2[k], d2[k + 1]
            s = 4.0 * h[a] * h[b]
            self.A[a, b], self.B[a, b], self.c[a, b] = (Ap - Am) / s, (Bp - Bm) / s, (cp - cm) / s
            k += 2

    def hessians(self, values) -> np.ndarray:
        """Discrete Hessians at interior points, shape ``(n_interior, n, n)``."""
        values = np.asarray(values, dtype=float).reshape(-1)
        lay = self.layout
        n = lay.grid.n
        ui, ub = values[lay.interior], values[lay.boundary]
        H = np.empty((self.nint, n, n))
        for (a, b), A in self.A.items():
            col = A @ ui + self.c[a, b]
            if self.nbnd:
                col = col + self.B[a, b] @ ub
            H[:, a, b] = col
            H[:, b, a] = col
        return H

    def weighted(self, coeff):
        """Sparse matrices of ``v -> sum_ab coeff[:, a, b] * (D^2 v)_ab`` (interior, boundary columns)."""
        n = self.layout.grid.n
        L = sp.csr_matrix((self.nint, self.nint))
        K = sp.csr_matrix((self.nint, self.nbnd))
        for (a, b), A in self.A.items():
            w = coeff[:, a, b] if a == b else coeff[:, a, b] + coeff[:, b, a]
            D = sp.diags(w)
            L = L + D @ A
            K = K + D @ self.B[a, b]
        return L.tocsr(), K.tocsr()


def hessian_at(u: GridField, p) -> np.ndarray:
    """Discrete Hessian of ``u`` at one interior point (multi-index or flat index)."""
    lay = u.layout
    g = lay.grid
    flat = int(g.flat_index(p)) if np.ndim(p) == 1 else int(p)
    if lay.mask[flat] != INTERIOR:
        raise DomainError(f"point {g.points[flat]} is not interior")
    pos = int(np.searchsorted(lay.interior, flat))
    idx = g.multi_index(flat)
    h = g.h
    vals = u.values
    d2 = []
    for d, off in enumerate(directions(g.n)):
        arms = []
        for side, nb_off in ((0, off), (1, -off)):
            if lay.cuts is not None and not np.isnan(lay.cuts.value[d, side, pos]):
                arms.append((lay.cuts.theta[d, side, pos], lay.cuts.value[d, side, pos]))
            else:
                arms.append((1.0, vals[g.flat_index(idx + nb_off)]))
        (tp, up), (tm, um) = arms
        wp, wm, w0 = _second_difference_weights(tp, tm)
        d2.append(wp * up + wm * um + w0 * vals[flat])
    H = np.empty((g.n, g.n))
    for a in range(g.n):
        H[a, a] = d2[a] / h[a] ** 2
    k = g.n
    for a, b in combinations(range(g.n), 2):
        H[a, b] = H[b, a] = (d2[k] - d2[k + 1]) / (4.0 * h[a] * h[b])
        k += 2
    return H


def hessians(u: GridField) -> np.ndarray:
    return u.layout.operator.hessians(u.values)


def spectrum(a) -> np.ndarray:
    """Eigenvalues of a symmetric matrix in non-increasing order.

    Closed forms for n <= 3 (trigonometric for n = 3); near a repeated root
    the trigonometric branch loses accuracy, so those cases go to LAPACK.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 1:
        return a[0].copy()[:1]
    if n == 2:
        mid = 0.5 * (a[0, 0] + a[1, 1])
        rad = np.hypot(0.5 * (a[0, 0] - a[1, 1]), a[0, 1])
        return np.array([mid + rad, mid - rad])
    if n == 3:
        q = np.trace(a) / 3.0
        p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
        p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * p1
        if p2 == 0.0:
            return np.full(3, q)
        p = np.sqrt(p2 / 6.0)
        r = np.linalg.det((a - q * np.eye(3)) / p) / 2.0
        if abs(r) < 1.0 - 1e-4:
            phi = np.arccos(r) / 3.0
            e1 = q + 2.0 * p * np.cos(phi)
            e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
            return np.array([e1, 3.0 * q - e1 - e3, e3])
    return np.linalg.eigvalsh(a)[::-1].copy()


def spectra(H) -> np.ndarray:
    """Batched eigenvalues (non-increasing) of symmetric matrices ``(..., n, n)``."""
    return np.linalg.eigvalsh(H)[..., ::-1]


def newton_tensor(H, k: int):
    """Return ``(lam, S)`` with ``S = d sigma_k(lambda(H)) / dH`` per matrix.

    ``S`` is obtained by rotating ``diag(sigma_grad)`` back through the
    eigenvector frame.
    """
    lam, Q = np.linalg.eigh(H)
    grad = sigma_grad(lam, k)
    S = np.einsum("...ij,...j,...kj->...ik", Q, grad, Q)
    return lam, S


def _with_unset(layout: Layout, interior_vals) -> np.ndarray:
    out = np.full(layout.grid.size, np.nan)
    out[layout.interior] = interior_vals
    return out


def sk_field(u: GridField, k: int) -> GridField:
    """S_k[u] at interior points; NaN (unset) elsewhere."""
    n = u.grid.n
    if not 1 <= k <= n:
        raise DomainError(f"order k={k} outside [1, {n}]")
    lam = spectra(hessians(u))
    return GridField(u.layout, _with_unset(u.layout, sigma(lam, k)))


def admissibility_mask(u: GridField, k: int, strict: bool = True) -> np.ndarray:
    """Per-point booleans: interior points whose discrete spectrum lies in the cone."""
    lam = spectra(hessians(u))
    out = np.zeros(u.grid.size, dtype=bool)
    out[u.layout.interior] = in_gamma(lam, k, strict=strict)
    return out


@dataclass
class LinearizedOperator:
    """``v -> sum_ij S_k^{ij}[u] (D^2 v)_ij`` on interior unknowns.

    ``matrix`` acts on interior values, ``boundary_matrix`` on values at
    BOUNDARY points (the eliminated Dirichlet columns).
    """

    layout: Layout
    matrix: sp.csr_matrix
    boundary_matrix: sp.csr_matrix
    coefficients: np.ndarray

    def apply(self, v) -> np.ndarray:
        vals = v.values if isinstance(v, GridField) else np.asarray(v, dtype=float).reshape(-1)
        out = self.matrix @ vals[self.layout.interior]
        if self.layout.boundary.size:
            out = out + self.boundary_matrix @ vals[self.layout.boundary]
        return out


def linearized(u: GridField, k: int, check: bool = True) -> LinearizedOperator:
    """Assemble the linearization of S_k at ``u`` (without any chain-rule factor)."""
    H = hessians(u)
    lam, S = newton_tensor(H, k)
    if check:
        ok = np.atleast_1d(in_gamma(lam, k, strict=True))
        if not np.all(ok):
            pts = u.layout.interior_points()[~ok]
            raise InadmissibleError(f"{len(pts)} interior point(s) not strictly {k}-admissible, first at {pts[0]}", pts)
    L, K = u.layout.operator.weighted(S)
    return LinearizedOperator(u.layout, L, K, S)


# -- serialization -----------------------------------------------------------

def _header(grid: Grid) -> str:
    parts = [str(grid.n)] + [str(m) for m in grid.m] + ["%.17g" % v for v in grid.lo + grid.hi]
    return " ".join(parts)


def _read_header(line: str, path) -> Grid:
    try:
        tok = line.split()
        n = int(tok[0])
        m = [int(t) for t in tok[1 : 1 + n]]
        lo = [float(t) for t in tok[1 + n : 1 + 2 * n]]
        hi = [float(t) for t in tok[1 + 2 * n : 1 + 3 * n]]
        if len(tok) != 1 + 3 * n:
            raise ValueError
    except (ValueError, IndexError):
        raise InputError(f"{path}: malformed field header {line.strip()!r}") from None
    return Grid(n, tuple(lo), tuple(hi), tuple(m))


def save_field(u: GridField, path, mask_path=None) -> None:
    """Write values (17 significant digits, ``nan`` for unset) and optionally the mask."""
    path = Path(path)
    head = _header(u.grid)
    body = "\n".join("%.17g" % v for v in u.values)
    path.write_text(head + "\n" + body + "\n")
    if mask_path is not None:
        Path(mask_path).write_text(head + "\n" + "\n".join(str(int(v)) for v in u.mask) + "\n")


def load_field(path, mask_path=None) -> GridField:
    lines = Path(path).read_text().splitlines()
    grid = _read_header(lines[0], path)
    try:
        vals = np.array([float(s) for s in lines[1:] if s.strip()])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if vals.size != grid.size:
        raise InputError(f"{path}: expected {grid.size} values, found {vals.size}")
    if mask_path is not None:
        mlines = Path(mask_path).read_text().splitlines()
        if _read_header(mlines[0], mask_path) != grid:
            raise InputError(f"{mask_path}: header does not match {path}")
        mask = np.array([int(s) for s in mlines[1:] if s.strip()], dtype=np.int8)
        if mask.size != grid.size or not np.isin(mask, list(LABELS)).all():
            raise InputError(f"{mask_path}: bad mask")
    else:
        mask = np.where(np.isnan(vals), EXTERIOR, INTERIOR)
    return GridField(Layout(grid, mask), vals)
