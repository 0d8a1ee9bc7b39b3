import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkdiff import (CapacityError, CompletenessError, InputError, LocalFunction, Marginal, MultiIndex,
                    PreconditionError, build_basis, expectation, fourier, inner, orbit_decompose, shift)
from gkdiff.local_fn import OrbitRep
from oracles import enum_expect, table_eval
from strategies import bernoulli, marginals, random_function, random_sites, seeds, three_point


def eta(site=0, m=bernoulli, dim=None):
    return LocalFunction.occupation(m, site, dim=dim)


def test_shift_examples():
    f = eta(0)
    g = shift(f, 1)
    assert g.sites == ((1,),)
    assert np.array_equal(g.values, eta(1).values)
    assert shift(f, 0) is f


@given(seeds, st.integers(-5, 5), st.integers(-5, 5))
@settings(max_examples=50, deadline=None)
def test_shift_composes_by_direct_evaluation(seed, a, b):
    rng = np.random.default_rng(seed)
    f = random_function(three_point, random_sites(rng, 1, 2, 3), rng, centered=False)
    lhs, rhs = shift(shift(f, a), b), shift(f, a + b)
    assert lhs.sites == rhs.sites
    for idx in np.ndindex(lhs.values.shape):
        config = dict(zip(lhs.sites, idx))
        # tau_z f(eta) = f(eta_{. + z})
        orig = {s: config[(s[0] + a + b,)] for s in f.sites}
        assert lhs.values[idx] == pytest.approx(table_eval(f.sites, f.values, orig))


def test_expectation_examples():
    basis = build_basis(three_point)
    assert expectation(LocalFunction.constant(three_point, 2.5)) == 2.5
    phi = LocalFunction.basis_product(basis, MultiIndex.from_mapping({0: 1, 1: 2}))
    assert abs(expectation(phi)) < 1e-15
    assert expectation(eta(0) * eta(1)) == pytest.approx(0.25)
    assert expectation(eta(0) * eta(1)) == pytest.approx(
        enum_expect(lambda c: c[(0,)] * c[(1,)], [(0,), (1,)], [0.5, 0.5]))


@given(marginals, seeds)
@settings(max_examples=40, deadline=None)
def test_inner_properties(m, seed):
    rng = np.random.default_rng(seed)
    f = random_function(m, random_sites(rng, 1, 2, 3), rng, centered=False)
    g = random_function(m, random_sites(rng, 1, 2, 3), rng, centered=False)
    assert inner(f, g) == pytest.approx(inner(g, f), abs=1e-12)
    assert inner(f, LocalFunction.constant(m, 1.0)) == pytest.approx(f.mean, abs=1e-12)
    union = sorted(set(f.sites) | set(g.sites))
    w = m.weight_array()
    ref = enum_expect(lambda c: table_eval(f.sites, f.values, c) * table_eval(g.sites, g.values, c), union, w)
    assert inner(f, g) == pytest.approx(ref, abs=1e-10)


def test_basis_products_orthonormal():
    basis = build_basis(three_point)
    idx = [MultiIndex.from_mapping(d) for d in ({}, {0: 1}, {0: 2}, {1: 1}, {0: 1, 1: 1}, {0: 2, 2: 1})]
    for i, a in enumerate(idx):
        for j, b in enumerate(idx):
            pa, pb = LocalFunction.basis_product(basis, a), LocalFunction.basis_product(basis, b)
            assert inner(pa, pb) == pytest.approx(float(i == j), abs=1e-12)


def test_fourier_examples():
    basis = build_basis(bernoulli)
    phi1 = LocalFunction.basis_product(basis, MultiIndex.from_mapping({0: 1}))
    coeffs = {n: c for n, c in fourier(phi1).items() if abs(c) > 1e-14}
    assert coeffs == {MultiIndex.from_mapping({0: 1}): pytest.approx(1.0)}
    c = fourier(eta(0))
    assert c[MultiIndex.zero()] == pytest.approx(0.5)
    assert c[MultiIndex.from_mapping({0: 1})] == pytest.approx(0.5)


@given(marginals, seeds, st.sampled_from([1, 2]))
@settings(max_examples=40, deadline=None)
def test_parseval_and_roundtrip(m, seed, dim):
    rng = np.random.default_rng(seed)
    f = random_function(m, random_sites(rng, dim, 1, 3), rng, dim=dim, centered=False)
    coeffs = fourier(f)
    assert sum(c * c for c in coeffs.values()) == pytest.approx(inner(f, f), rel=1e-10)
    back = LocalFunction.from_fourier(coeffs, build_basis(m), dim=dim, sites=f.sites)
    assert np.max(np.abs(back.values - f.values)) <= 1e-12 * max(1.0, f.max_abs())


def test_orbit_decompose_examples():
    x, rep = orbit_decompose(MultiIndex.from_mapping({5: 1}))
    assert x == (5,) and rep.index == MultiIndex.from_mapping({0: 1})
    x, rep = orbit_decompose(MultiIndex.from_mapping({-1: 2, 3: 1}))
    assert x == (-1,) and rep.index == MultiIndex.from_mapping({0: 2, 4: 1})
    x, rep = orbit_decompose(MultiIndex.from_mapping({(2, 7): 1}, dim=2))
    assert x == (2, 7) and rep.index == MultiIndex.from_mapping({(0, 0): 1}, dim=2)
    with pytest.raises(PreconditionError):
        orbit_decompose(MultiIndex.zero())


@given(st.dictionaries(st.tuples(st.integers(-4, 4), st.integers(-4, 4)), st.integers(1, 3),
                       min_size=1, max_size=4), st.tuples(st.integers(-9, 9), st.integers(-9, 9)))
@settings(max_examples=80, deadline=None)
def test_orbit_rep_is_unique_and_translation_invariant(mapping, z):
    n = MultiIndex.from_mapping(mapping, dim=2)
    x, rep = orbit_decompose(n)
    assert rep.index.shift(x) == n
    assert orbit_decompose(rep.index)[1] == rep
    assert orbit_decompose(n.shift(z))[1] == rep
    sup = n.support
    assert rep.rad == max(max(s[a] for s in sup) - min(s[a] for s in sup) for a in range(2))
    assert isinstance(rep, OrbitRep)


def test_evaluation_ignores_outside_sites():
    f = eta(0, three_point) + 2.0 * eta(1, three_point)
    base = f.evaluate({(0,): 2, (1,): 1})
    assert f.evaluate({(0,): 2, (1,): 1, (7,): 0}) == base


def test_errors():
    with pytest.raises(InputError):
        LocalFunction(bernoulli, [(0,)], [0.0, np.inf])
    with pytest.raises(CapacityError):
        LocalFunction.from_callable(three_point, range(16), lambda v: 0.0)
    small = build_basis(three_point, 2)
    with pytest.raises(CompletenessError):
        fourier(eta(0, three_point), small)
    with pytest.raises(InputError):
        Marginal.gamma(1.0) and LocalFunction(Marginal.gamma(1.0), [(0,)], [1.0])


def test_dict_roundtrip():
    rng = np.random.default_rng(4)
    f = random_function(three_point, [(0, 0), (1, 0), (0, 1)], rng, dim=2, centered=False)
    g = LocalFunction.from_dict(f.to_dict())
    assert g.sites == f.sites and np.array_equal(g.values, f.values) and g.marginal == f.marginal


@given(marginals, seeds, st.sampled_from([1, 2]))
@settings(max_examples=40, deadline=None)
def test_coefficient_locality(m, seed, dim):
    from gkdiff.local_fn import orbit_profiles
    rng = np.random.default_rng(seed)
    f = random_function(m, random_sites(rng, dim, 1, 3), rng, dim=dim, centered=False)
    s_f = max(max(abs(c) for c in s) for s in f.sites)
    for rep, prof in orbit_profiles(f).items():
        if rep.rad >= 2 * s_f + 1:
            assert all(v == 0.0 for v in prof.values())
        for x, v in prof.items():
            if max(abs(c) for c in x) >= s_f + 1:
                assert v == 0.0


@given(marginals, seeds, st.integers(-4, 4))
@settings(max_examples=40, deadline=None)
def test_shift_covariance_of_coefficients(m, seed, z):
    rng = np.random.default_rng(seed)
    f = random_function(m, random_sites(rng, 1, 2, 3), rng, centered=False)
    a, b = fourier(f), fourier(shift(f, z))
    assert len(a) == len(b)
    for n, c in b.items():
        assert a[n.shift(-z)] == c


@given(marginals, seeds)
@settings(max_examples=40, deadline=None)
def test_product_measure_independence(m, seed):
    rng = np.random.default_rng(seed)
    f = random_function(m, [(0,), (1,)], rng, centered=False)
    g = random_function(m, [(2,), (5,)], rng, centered=False)
    assert inner(f, g) == pytest.approx(f.mean * g.mean, abs=1e-12)
