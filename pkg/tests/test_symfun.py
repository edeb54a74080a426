from math import comb, sqrt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from khessian.errors import DomainError
from khessian.symfun import (fk_value, in_gamma, maclaurin_bound, maclaurin_chain, sample_cone, sigma,
                             sigma_all, sigma_grad)
from oracles import central_gradient, sigma_enum, sigma_enum_exact

spectra_st = st.integers(1, 6).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(-3, 3, allow_nan=False, width=64)))


def test_sigma_examples():
    assert sigma([6, 3, 3], 2) == pytest.approx(45.0, abs=1e-12)
    assert np.allclose(sigma_all([6, 3, 3]), [12, 45, 54])
    assert sigma([1, -1], 2) == -1.0
    assert sigma([2.0], 1) == 2.0


def test_sigma_rejects_bad_order():
    with pytest.raises(DomainError):
        sigma([1, 2, 3], 4)
    with pytest.raises(DomainError):
        sigma([1, 2, 3], 0)


@given(spectra_st, st.data())
@settings(max_examples=200, deadline=None)
def test_sigma_matches_enumeration(lam, data):
    k = data.draw(st.integers(1, lam.size))
    exact = float(sigma_enum_exact(lam, k))
    scale = sum(abs(v) for v in lam) ** k + 1.0
    assert abs(sigma(lam, k) - exact) <= 1e-12 * scale


def test_sigma_batched_shape():
    lam = np.random.default_rng(0).normal(size=(4, 5, 3))
    out = sigma(lam, 2)
    assert out.shape == (4, 5)
    assert out[1, 2] == pytest.approx(sigma_enum(lam[1, 2], 2))


@given(spectra_st, st.data())
@settings(max_examples=100, deadline=None)
def test_sigma_grad_matches_differences(lam, data):
    k = data.draw(st.integers(1, lam.size))
    g = sigma_grad(lam, k)
    fd = central_gradient(lambda x: sigma(x, k), lam, 1e-5)
    assert np.allclose(g, fd, rtol=5e-6, atol=5e-6 * (1 + np.abs(lam).sum()) ** max(k - 1, 0))


@given(spectra_st, st.data())
@settings(max_examples=100, deadline=None)
def test_euler_identity(lam, data):
    k = data.draw(st.integers(1, lam.size))
    lhs = float(np.dot(sigma_grad(lam, k), lam))
    scale = (1 + np.abs(lam).sum()) ** k
    assert abs(lhs - k * sigma(lam, k)) <= 1e-12 * scale


def test_sigma_grad_example():
    assert np.allclose(sigma_grad([6, 3, 3], 2), [6, 9, 9])


def test_in_gamma():
    assert in_gamma([6, 3, 3], 2)
    assert not in_gamma([1, -1, 0], 2)
    assert in_gamma([1, 0, 0], 1)
    assert not in_gamma([1, 0, 0], 2, strict=True)
    assert in_gamma([1, 0, 0], 2, strict=False)
    assert not in_gamma([0, 0, 0], 1)
    assert in_gamma([0, 0, 0], 3, strict=False)


def test_maclaurin_chain_example():
    chain = maclaurin_chain([6, 3, 3], 2)
    assert np.allclose(chain, [4.0, sqrt(15.0)])
    assert chain[0] >= chain[1]
    with pytest.raises(DomainError):
        maclaurin_chain([1, -2, 0], 2)


@given(st.integers(2, 5), st.data())
@settings(max_examples=50, deadline=None)
def test_maclaurin_chain_decreasing(n, data):
    k = data.draw(st.integers(1, n))
    lam = sample_cone(n, k, 20, data.draw(st.integers(0, 2**31)))
    chain = maclaurin_chain(lam, k)
    assert np.all(np.diff(chain, axis=-1) <= 1e-12 * chain[..., :-1])


def test_fk_value():
    assert fk_value([6, 3, 3], 2) == pytest.approx(sqrt(45))
    assert fk_value([2, 2, 2], 3) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        fk_value([1, -2, 0], 2)


def test_maclaurin_bound():
    assert maclaurin_bound(3, 2) == pytest.approx(sqrt(3))
    assert maclaurin_bound(4, 1) == 1.0
    assert maclaurin_bound(5, 3) == pytest.approx(comb(5, 2) / comb(5, 3) ** (2 / 3))


def test_sample_cone_reproducible_and_inside():
    a = sample_cone(4, 3, 500, 7)
    b = sample_cone(4, 3, 500, 7)
    assert a.shape == (500, 4)
    assert np.array_equal(a, b)
    assert np.all(in_gamma(a, 3))
    assert np.all((a >= -1) & (a <= 2))
