"""Independent reference implementations used only by the tests."""
from itertools import combinations
from math import prod

import numpy as np


def sigma_enum(lam, k):
    """sigma_k by summing products over all k-subsets."""
    lam = [float(v) for v in lam]
    if k == 0:
        return 1.0
    return float(sum(prod(c) for c in combinations(lam, k)))


def sigma_enum_exact(lam, k):
    from fractions import Fraction
    lam = [Fraction(float(v)) for v in lam]
    if k == 0:
        return Fraction(1)
    return sum((prod(c) for c in combinations(lam, k)), Fraction(0))


def sigma_enum_all_exact(lam):
    """Exact sigma_1..sigma_n by subset enumeration in scaled integer arithmetic, rounded once."""
    ratios = [float(v).as_integer_ratio() for v in lam]
    den = max(d for _, d in ratios)  # denominators are powers of two
    ints = [p * (den // d) for p, d in ratios]
    out = []
    for k in range(1, len(ints) + 1):
        total = sum(prod(c) for c in combinations(ints, k))
        out.append(total / den**k)  # int / int is correctly rounded
    return out


def central_gradient(func, x, eps=1e-6):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        out[i] = (func(x + e) - func(x - e)) / (2 * eps)
    return out


def laplacian_7pt(layout):
    """Cut-cell 2n+1 point Laplacian assembled point by point, returns (L dense-free csr, rhs offset)."""
    import scipy.sparse as sp
    g = layout.grid
    interior = layout.interior
    pos = {int(p): i for i, p in enumerate(interior)}
    h = g.h
    rows, cols, vals = [], [], []
    offset = np.zeros(interior.size)
    for i, p in enumerate(interior):
        idx = g.multi_index(int(p))
        for a in range(g.n):
            arms = []
            for side, s in ((0, 1), (1, -1)):
                th = 1.0
                val = None
                if layout.cuts is not None and not np.isnan(layout.cuts.value[a, side, i]):
                    th = layout.cuts.theta[a, side, i]
                    val = layout.cuts.value[a, side, i]
                arms.append((th, val, s))
            tp, tm = arms[0][0], arms[1][0]
            wts = (2.0 / (tp * (tp + tm)), 2.0 / (tm * (tp + tm)))
            rows.append(i)
            cols.append(i)
            vals.append(-2.0 / (tp * tm) / h[a] ** 2)
            for (th, val, s), w in zip(arms, wts):
                w = w / h[a] ** 2
                if val is not None:
                    offset[i] += w * val
                    continue
                nb = idx.copy()
                nb[a] += s
                q = int(g.flat_index(nb))
                if q in pos:
                    rows.append(i)
                    cols.append(pos[q])
                    vals.append(w)
                else:
                    offset[i] += w * layout.boundary_values[q]
    L = sp.csr_matrix((vals, (rows, cols)), shape=(interior.size, interior.size))
    return L, offset
