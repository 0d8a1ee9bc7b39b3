import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkdiff import (DetailedBalanceError, InputError, LocalFunction, Marginal, ModelError, inner,
                    make_gep, make_ssep, make_zero_range, model_from_config, shift)
from gkdiff.dynamics import BondGenerator, BondRule, rule_from_callable, self_check
from oracles import gep_bond_action
from strategies import random_function, seeds

MODELS = {
    "ssep": lambda: make_ssep(),
    "ssep-p0.3": lambda: make_ssep(Fraction(3, 10)),
    "ssep-neighbour": lambda: make_ssep(c="neighbour:0.5"),
    "ssep-product": lambda: make_ssep(c="product:0.7"),
    "ssep-2d": lambda: make_ssep(dim=2),
    "gep2": lambda: make_gep(2),
    "gep3": lambda: make_gep(3),
    "gep2-2d": lambda: make_gep(2, dim=2),
    "zr": lambda: make_zero_range("linear", 3),
    "zr-const": lambda: make_zero_range("constant", 2),
}


def occ(model, site):
    return model.xi_function(site)


def table(f, config):
    return f.values[tuple(config[s] for s in f.sites)]


def test_ssep_examples():
    m = make_ssep()
    e0, e1, em1 = occ(m, (0,)), occ(m, (1,)), occ(m, (-1,))
    assert (m.bond_apply((0,), (1,), e0) - 0.5 * (e1 - e0)).max_abs() == 0.0
    assert (m.bond_current((1,)) - (e1 - e0)).max_abs() == 0.0
    assert m.bond_apply((0,), (1,), e0 + e1).max_abs() == 0.0
    assert (m.apply(e0) - (e1 + em1 - 2 * e0)).max_abs() < 1e-15


def test_gep_bond_action_case_and_enumeration():
    m = make_gep(2)
    e0 = occ(m, (0,))
    lf = m.bond_apply((0,), (1,), e0)
    # eta = (1, 2): 0 -> 1 blocked, 1 -> 0 allowed
    assert table(lf, {(0,): 1, (1,): 2}) == pytest.approx(0.5)
    for a, b in itertools.product(range(3), repeat=2):
        ref = gep_bond_action(2, a, b, lambda x, y: x)
        assert table(lf, {(0,): a, (1,): b}) == pytest.approx(ref)
    cons = m.bond_apply((0,), (1,), e0 + occ(m, (1,)))
    assert cons.max_abs() == 0.0


def test_zero_range_action_and_reversibility():
    m = make_zero_range("linear", 3)
    lf = m.bond_apply((0,), (1,), occ(m, (0,)))
    for a, b in itertools.product(range(4), repeat=2):
        val = table(lf, {(0,): a, (1,): b})
        if a < 3 and b < 3:
            assert val == pytest.approx(0.5 * (b - a))
    assert m.bond_apply((0,), (1,), occ(m, (0,)) + occ(m, (1,))).max_abs() == 0.0
    w = m.marginal.weight_array()
    fact = np.array([1, 1, 2, 6], float)
    assert np.allclose(w, (1 / fact) / (1 / fact).sum())
    (rule,) = m.rules
    q = rule.rates
    for a, b, a2, b2 in itertools.product(range(4), repeat=4):
        if (a, b) != (a2, b2):
            assert abs(w[a] * w[b] * q[a, b, a2, b2] - w[a2] * w[b2] * q[a2, b2, a, b]) <= 1e-12


@pytest.mark.parametrize("name", sorted(MODELS))
def test_generator_bullets(name):
    model = MODELS[name]()
    rep = self_check(model, samples=5, seed=7)
    assert rep["reversibility"] <= 1e-12 and rep["dirichlet"] <= 1e-12
    assert rep["symmetry"] <= 1e-12 and rep["translation"] <= 1e-12
    o = (0,) * model.dim
    const = LocalFunction.constant(model.marginal, 3.0, dim=model.dim)
    for z in model.directions:
        assert model.bond_apply(o, z, const).max_abs() <= 1e-13
        assert model.dirichlet(z, const) == pytest.approx(0.0, abs=1e-13)
        far = tuple(5 if i == 0 else 0 for i in range(model.dim))
        assert model.bond_apply(o, z, occ(model, far)).max_abs() == 0.0
        # 2 D_{0,z}(xi_0) = -<xi_0, j_{0,z}>
        xi0 = occ(model, o)
        assert 2 * model.dirichlet(z, xi0) == pytest.approx(-inner(xi0, model.bond_current(z)), abs=1e-12)


@pytest.mark.parametrize("name", ["ssep", "gep2", "zr", "ssep-2d", "gep2-2d"])
@given(seed=seeds)
@settings(max_examples=10, deadline=None)
def test_full_generator_is_stationary(name, seed):
    model = MODELS[name]()
    rng = np.random.default_rng(seed)
    sites = [(0,) * model.dim, tuple(1 if i == 0 else 0 for i in range(model.dim))]
    f = random_function(model.marginal, sites, rng, dim=model.dim, centered=False)
    assert abs(model.apply(f).mean) <= 1e-12
    g = random_function(model.marginal, sites, rng, dim=model.dim, centered=False)
    assert inner(model.apply(f), g) == pytest.approx(inner(f, model.apply(g)), abs=1e-11)
    assert -inner(model.apply(f), f) >= -1e-12


@pytest.mark.parametrize("p", [Fraction(1, 2), Fraction(1, 3), Fraction(4, 5)])
def test_ssep_dirichlet_closed_form(p):
    m = make_ssep(p)
    assert m.dirichlet((1,), occ(m, (0,))) == pytest.approx(0.5 * float(p) * (1 - float(p)))
    assert m.apply(LocalFunction.constant(m.marginal, 1.0)).max_abs() == 0.0


@pytest.mark.parametrize("name", ["ssep", "gep2", "gep3", "zr", "ssep-2d", "gep2-2d", "ssep-product"])
def test_current_remark_identity(name):
    model = MODELS[name]()
    for axis in range(model.dim):
        e = tuple(1 if i == axis else 0 for i in range(model.dim))
        jb = model.bond_current(e)
        other = jb + shift(jb, tuple(-c for c in e))
        assert (model.current(axis) - other).max_abs() == 0.0


def _bad_rule(kind):
    m = Marginal.uniform((0, 1, 2))

    def fn(env, a2, b2):
        a, b = env
        if kind == "irreversible":
            return 1.0 if (a >= 1 and b <= 1 and (a2, b2) == (a - 1, b + 1)) else 0.0
        if kind == "nonconserving":
            return 1.0 if (a2, b2) == (b, b) and a != b else 0.0
        return -1.0 if (a2, b2) == (b, a) and a != b else 0.0

    return m, rule_from_callable(m, (1,), fn)


@pytest.mark.parametrize("kind,exc,invariant", [("irreversible", DetailedBalanceError, "reversibility"),
                                                 ("nonconserving", ModelError, "conservation"),
                                                 ("negative", ModelError, "non-positivity")])
def test_self_check_names_the_violation(kind, exc, invariant):
    m, rule = _bad_rule(kind)
    with pytest.raises(exc) as err:
        BondGenerator(m, m.atom_array().copy(), (rule,), 1, "bad")
    assert err.value.invariant == invariant


def test_model_from_config():
    assert model_from_config({"model": "ssep", "p": 0.5, "c": "const:1.0"}).config["c"] == "const:1.0"
    assert model_from_config({"model": "gep", "kappa": 3}).marginal.size == 4
    with pytest.raises(InputError):
        model_from_config({"model": "ssep", "speed": 2})
    with pytest.raises(InputError):
        model_from_config({"model": "tasep"})
    with pytest.raises(InputError):
        make_ssep(c="sqrt:2")
    with pytest.raises(InputError):
        BondRule((-1,), ((0,), (-1,)), np.zeros((2,) * 4))


@given(st.floats(-0.4, 2.0))
@settings(max_examples=15, deadline=None)
def test_environment_rates_valid(g):
    for c in (f"neighbour:{g}", f"product:{g}"):
        model = make_ssep(c=c)
        assert model.bond_apply((0,), (1,), occ(model, (0,)) + occ(model, (1,))).max_abs() <= 1e-15
