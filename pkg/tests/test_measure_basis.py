import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from gkdiff import (ConditioningError, DimensionError, InputError, Marginal, build_basis, expect,
                    quad_expect)
from oracles import gram_schmidt_table


def test_bernoulli_basis_by_hand():
    b = build_basis(Marginal.bernoulli(), 2)
    assert np.allclose(b.table[0], [1, 1])
    assert np.allclose(b.table[1], [-1, 1])


@pytest.mark.parametrize("m", [Marginal.bernoulli("1/3"), Marginal.uniform([0, 1, 2, 5]),
                               Marginal.gamma(1.0), Marginal.gamma(2.5, 0.7)])
def test_size_one_basis_is_constant(m):
    b = build_basis(m, 1)
    assert b.size == 1
    x = np.array([0.0, 1.0]) if m.is_finite else np.array([0.3, 4.0])
    assert np.allclose(b(0, x), 1.0)


def test_exponential_laguerre_basis_orthonormal_by_64_point_quadrature():
    m = Marginal.gamma(1.0, 1.0)
    b = build_basis(m, 3)
    x, w = special.roots_laguerre(64)
    vals = b.evaluate_all(x)
    gram = (vals * w) @ vals.T
    assert np.allclose(gram, np.eye(3), atol=1e-10)
    # normalized Laguerre polynomials up to sign
    ref = np.stack([special.eval_laguerre(n, x) for n in range(3)])
    assert np.allclose(np.abs(vals), np.abs(ref), atol=1e-9)


def test_gamma_basis_gram_under_scipy_integration():
    m = Marginal.gamma(2.0, 1.5)
    b = build_basis(m, 4)
    for i in range(4):
        for j in range(i, 4):
            val, _ = integrate.quad(lambda x: b(i, np.array([x]))[0] * b(j, np.array([x]))[0] * m.pdf(x),
                                    0, np.inf)
            assert val == pytest.approx(float(i == j), abs=1e-9)


@given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=6), st.integers(0, 10**6))
@settings(max_examples=60, deadline=None)
def test_finite_basis_complete_and_orthonormal(raw, seed):
    rng = np.random.default_rng(seed)
    w = np.array(raw) / np.sum(raw)
    w[-1] = 1.0 - w[:-1].sum()
    atoms = np.sort(rng.choice(np.arange(-10, 11), size=len(raw), replace=False)).astype(float)
    m = Marginal.finite(atoms, w)
    b = build_basis(m)
    assert b.is_complete and b.size == len(atoms)
    assert np.allclose(b.gram(), np.eye(b.size), atol=1e-10)
    assert np.allclose(b.table[0], 1.0)
    # reconstruction of an arbitrary single-site function
    f = rng.standard_normal(len(atoms))
    coeffs = b.coefficients_of(f)
    assert np.allclose(coeffs @ b.table, f, atol=1e-10)
    # agreement with the classical recursion, up to sign
    ref = gram_schmidt_table(atoms, m.weight_array())
    assert np.allclose(np.abs(b.table), np.abs(ref), atol=1e-7)


def test_expectation_examples():
    assert expect(Marginal.bernoulli(), lambda x: x) == pytest.approx(0.5)
    m = Marginal.finite((0, 1, 2), ("1/4", "1/2", "1/4"))
    assert expect(m, lambda x: x**2) == pytest.approx(1.5, abs=1e-15)


@pytest.mark.parametrize("d,T", [(1, 1.0), (2, 0.5), (3, 2.0), (4, 1.3)])
def test_gamma_mean_matches_closed_form(d, T):
    m = Marginal.gamma(d / 2, T)
    val, err = quad_expect(m, lambda x: x)
    assert val == pytest.approx(T * d / 2, rel=1e-10)
    assert m.variance() == pytest.approx(T**2 * d / 2)
    var, _ = quad_expect(m, lambda x: (x - T * d / 2) ** 2)
    assert var == pytest.approx(T**2 * d / 2, rel=1e-8)


def test_marginal_validation():
    with pytest.raises(InputError):
        Marginal.finite((0, 1), (0.5, 0.6))
    with pytest.raises(InputError):
        Marginal.finite((0, 1), (1.0, 0.0))
    with pytest.raises(InputError):
        Marginal.finite((1, 0), (0.5, 0.5))
    with pytest.raises(InputError):
        Marginal.gamma(-1.0)
    with pytest.raises(InputError):
        expect(Marginal.bernoulli(), lambda x: np.full_like(x, np.nan))
    with pytest.raises(InputError):
        Marginal.from_dict({"kind": "finite", "atoms": [0], "weights": [1], "extra": 1})


def test_basis_errors():
    with pytest.raises(DimensionError):
        build_basis(Marginal.bernoulli(), 3)
    with pytest.raises(ConditioningError):
        build_basis(Marginal.finite((0.0, 1e-9, 2e-9, 1.0), (0.25,) * 4))


def test_marginal_roundtrip():
    for m in (Marginal.finite((0, 1, 2), ("1/4", "1/2", "1/4")), Marginal.gamma(1.5, 2.0)):
        assert Marginal.from_dict(m.to_dict()) == m
    assert math.isclose(Marginal.gamma(1.5, 2.0).mean(), 3.0)
