"""Elementary symmetric polynomials, Garding cones and the inequalities around them.

Every function accepts either a single spectrum (shape ``(n,)``) or a batch
(shape ``(..., n)``); batched inputs return batched outputs.
"""
from __future__ import annotations

from math import comb

import numpy as np

from .errors import DomainError

__all__ = [
    "sigma",
    "sigma_all",
    "sigma_grad",
    "in_gamma",
    "maclaurin_chain",
    "fk_value",
    "sample_cone",
    "maclaurin_bound",
]


def _as_spectrum(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 0 or lam.shape[-1] < 1:
        raise DomainError("a spectrum needs at least one eigenvalue")
    return lam


def _check_order(k: int, n: int, lowest: int = 1) -> None:
    if not (lowest <= k <= n):
        raise DomainError(f"order k={k} outside [{lowest}, {n}]")


def _coefficients(lam: np.ndarray, kmax: int) -> np.ndarray:
    # Expand prod_i (t + lam_i) one factor at a time; entry j of the last
    # axis ends up holding sigma_j. Only degrees <= kmax are tracked.
    e = np.zeros(lam.shape[:-1] + (kmax + 1,))
    e[..., 0] = 1.0
    for i in range(lam.shape[-1]):
        li = lam[..., i, None]
        top = min(i + 1, kmax)
        e[..., 1 : top + 1] = e[..., 1 : top + 1] + li * e[..., 0:top]
    return e


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def sigma(lam, k: int):
    """Return sigma_k(lam) by the polynomial coefficient recurrence."""
    lam = _as_spectrum(lam)
    _check_order(k, lam.shape[-1])
    return _scalar(_coefficients(lam, k)[..., k])


def sigma_all(lam):
    """Return ``(sigma_1, ..., sigma_n)`` from a single recurrence pass."""
    lam = _as_spectrum(lam)
    return _coefficients(lam, lam.shape[-1])[..., 1:]


def sigma_grad(lam, k: int):
    """Gradient of sigma_k: entry i is sigma_{k-1} of lam with lam_i removed."""
    lam = _as_spectrum(lam)
    n = lam.shape[-1]
    _check_order(k, n)
    out = np.empty_like(lam)
    for i in range(n):
        rest = np.delete(lam, i, axis=-1)
        if k == 1:
            out[..., i] = 1.0
        else:
            out[..., i] = _coefficients(rest, k - 1)[..., k - 1]
    return out


def in_gamma(lam, k: int, strict: bool = True):
    """Membership in the Garding cone Gamma_k (strict) or its closure.

    The test is an exact sign test on sigma_1..sigma_k; callers that want
    slack perturb the spectrum themselves.
    """
    lam = _as_spectrum(lam)
    _check_order(k, lam.shape[-1])
    s = _coefficients(lam, k)[..., 1:]
    ok = np.all(s > 0, axis=-1) if strict else np.all(s >= 0, axis=-1)
    return bool(ok) if np.ndim(ok) == 0 else ok


def maclaurin_chain(lam, k: int):
    """Normalized means ``(sigma_j / C(n, j)) ** (1/j)`` for j = 1..k.

    Only defined on the open cone; the chain is non-increasing there.
    """
    lam = _as_spectrum(lam)
    n = lam.shape[-1]
    _check_order(k, n)
    s = _coefficients(lam, k)[..., 1:]
    if np.any(s <= 0):
        raise DomainError("maclaurin_chain needs a spectrum in the open cone Gamma_k")
    j = np.arange(1, k + 1)
    binom = np.array([comb(n, int(i)) for i in j], dtype=float)
    return (s / binom) ** (1.0 / j)


def fk_value(lam, k: int):
    """The concave operator sigma_k(lam) ** (1/k)."""
    s = np.asarray(sigma(lam, k))
    if np.any(s < 0):
        raise DomainError("sigma_k is negative; the k-th root is undefined")
    return _scalar(s ** (1.0 / k))


def maclaurin_bound(n: int, k: int) -> float:
    """Sharp constant c with sigma_{k-1} >= c * sigma_k ** ((k-1)/k) on Gamma_k."""
    _check_order(k, n)
    if k == 1:
        return 1.0
    return comb(n, k - 1) / comb(n, k) ** ((k - 1) / k)


def sample_cone(n: int, k: int, size: int, rng, strict: bool = True,
                low: float = -1.0, high: float = 2.0) -> np.ndarray:
    """Draw ``size`` spectra uniformly from ``[low, high]^n`` restricted to Gamma_k.

    ``rng`` is a ``numpy.random.Generator`` (or a seed); rejection is done in
    batches so the draw order only depends on the seed.
    """
    _check_order(k, n)
    rng = np.random.default_rng(rng)
    kept = []
    have = 0
    batch = max(64, 2 * size)
    while have < size:
        cand = rng.uniform(low, high, size=(batch, n))
        ok = in_gamma(cand, k, strict=strict)
        cand = cand[np.atleast_1d(ok)]
        kept.append(cand)
        have += len(cand)
    return np.concatenate(kept)[:size]
