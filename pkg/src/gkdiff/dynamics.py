"""Bond generators of symmetric conservative lattice dynamics.

A model is a finite family of bond rules, one per lattice-positive
direction ``z``. A rule stores a rate tensor ``Q`` over the states of the
bond neighbourhood ``origin + offsets``: ``Q[e..., a', b']`` with ``e`` the
current states at ``offsets`` (``offsets[0] = 0`` and ``offsets[1] = z`` are
the two bond sites) and ``(a', b')`` the new states of the two bond sites.
The diagonal carries minus the exit rate, so

    (L_{x,x+z} f)(eta) = sum_{a',b'} Q[eta_{x+offsets}, a', b'] f(eta^{x,x+z -> a',b'}).

The full generator is the sum of ``L_{x,y}`` over *ordered* pairs, i.e.
twice the sum over unordered bonds.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DetailedBalanceError, InputError, ModelError
from .local_fn import (
    LocalFunction,
    add_sites,
    as_site,
    inner,
    linear_combination,
    shift,
    sub_sites,
    unit,
)
from .measure_basis import Marginal

TOLERANCE = 1e-12


def is_positive(z) -> bool:
    """Lattice-positive: the first nonzero coordinate is positive."""
    for c in z:
        if c:
            return c > 0
    return False


def _neg(z):
    return tuple(-c for c in z)


@dataclass(frozen=True, eq=False)
class BondRule:
    """Rates of ``L_{0,z}`` for one lattice-positive ``z``."""

    z: tuple
    offsets: tuple
    rates: np.ndarray

    def __post_init__(self):
        if len(self.offsets) < 2 or any(self.offsets[0]) or self.offsets[1] != self.z:
            raise InputError("offsets must start with the bond sites 0 and z")
        if len(set(self.offsets)) != len(self.offsets):
            raise InputError("bond neighbourhood offsets must be distinct")
        if not is_positive(self.z):
            raise InputError(f"bond direction {self.z} is not lattice-positive")
        k = self.rates.shape[0]
        if self.rates.shape != (k,) * (len(self.offsets) + 2):
            raise InputError("rate tensor shape does not match the neighbourhood")
        self.rates.setflags(write=False)

    @property
    def size(self) -> int:
        return self.rates.shape[0]

    def transitions(self):
        """Yield ``(env, a, b, a2, b2, rate)`` for every positive off-diagonal rate."""
        k = self.size
        for idx in itertools.product(range(k), repeat=len(self.offsets)):
            a, b = idx[0], idx[1]
            for a2, b2 in itertools.product(range(k), repeat=2):
                if (a2, b2) == (a, b):
                    continue
                r = self.rates[idx + (a2, b2)]
                if r != 0:
                    yield idx, a, b, a2, b2, float(r)


def rule_from_callable(marginal: Marginal, z, rate: Callable, extra_offsets: Sequence = (),
                       dim: int = 1) -> BondRule:
    """Build a rule from ``rate(env, a2, b2)``.

    ``env`` is the tuple of current atom *values* at ``(0, z, *extra_offsets)``;
    the callable returns the rate of moving the bond sites to atoms
    ``(a2, b2)``. The diagonal is filled in automatically.
    """
    z = as_site(z, dim)
    offsets = ((0,) * dim, z) + tuple(as_site(o, dim) for o in extra_offsets)
    atoms = marginal.atom_array()
    k = marginal.size
    q = np.zeros((k,) * (len(offsets) + 2))
    for idx in itertools.product(range(k), repeat=len(offsets)):
        env = tuple(float(atoms[i]) for i in idx)
        exits = []
        for a2, b2 in itertools.product(range(k), repeat=2):
            if (a2, b2) == (idx[0], idx[1]):
                continue
            r = float(rate(env, float(atoms[a2]), float(atoms[b2])))
            if not math.isfinite(r):
                raise ModelError("non-finite rate", invariant="finite rates")
            q[idx + (a2, b2)] = r
            exits.append(r)
        q[idx + (idx[0], idx[1])] = -math.fsum(exits)
    return BondRule(z, offsets, q)


@dataclass(frozen=True, eq=False)
class BondGenerator:
    """Immutable, self-checked family of bond operators ``L_{0,z}``."""

    marginal: Marginal
    xi: np.ndarray
    rules: tuple
    dim: int = 1
    name: str = "custom"
    config: dict = field(default_factory=dict)
    notes: tuple = ()
    check: bool = True

    def __post_init__(self):
        if self.xi.shape != (self.marginal.size,):
            raise InputError("conserved quantity must be a table over the atoms")
        self.xi.setflags(write=False)
        dirs = [r.z for r in self.rules]
        if len(set(dirs)) != len(dirs):
            raise InputError("duplicate bond directions")
        for r in self.rules:
            if len(r.z) != self.dim or r.size != self.marginal.size:
                raise InputError("bond rule does not match the lattice or state space")
        if self.check:
            self_check(self)

    # ------------------------------------------------------------------ metadata
    @property
    def range(self) -> int:
        return max(max(abs(c) for c in r.z) for r in self.rules) if self.rules else 0

    @property
    def approximate(self) -> bool:
        return self.marginal.approximate

    @property
    def directions(self) -> list:
        """All ``z`` (both signs) with a nonzero bond operator."""
        return [r.z for r in self.rules] + [_neg(r.z) for r in self.rules]

    def rule(self, z) -> tuple[BondRule, tuple]:
        """``(rule, origin_offset)``: ``L_{x,x+z}`` is the rule applied at ``x + origin_offset``."""
        z = as_site(z, self.dim)
        for r in self.rules:
            if r.z == z:
                return r, (0,) * self.dim
            if r.z == _neg(z):
                return r, z
        raise InputError(f"no bond operator for direction {z}")

    def to_dict(self) -> dict:
        return dict(self.config, dim=self.dim, approximate=self.approximate)

    # ------------------------------------------------------------------ actions
    def xi_function(self, site=None) -> LocalFunction:
        site = (0,) * self.dim if site is None else as_site(site, self.dim)
        return LocalFunction.site_function(self.marginal, site, self.xi, dim=self.dim)

    def bond_apply(self, x, z, f: LocalFunction) -> LocalFunction:
        """``L_{x,x+z} f``."""
        x = as_site(x, self.dim)
        r, off = self.rule(z)
        return _rule_action(r, add_sites(x, off), f)

    def local_bonds(self, f: LocalFunction) -> list:
        """Unordered bonds ``(rule, origin)`` whose operator can act on ``f``."""
        out = []
        for r in self.rules:
            origins = sorted({s for s in f.sites} | {sub_sites(s, r.z) for s in f.sites})
            out.extend((r, x) for x in origins)
        return out

    def apply(self, f: LocalFunction) -> LocalFunction:
        """Full generator ``L f = sum_{x,y} L_{x,y} f`` (ordered pairs)."""
        if not f.sites:
            return LocalFunction.constant(f.marginal, 0.0, dim=f.dim)
        terms = [(2.0, _rule_action(r, x, f)) for r, x in self.local_bonds(f)]
        return linear_combination(terms, f.marginal, f.dim).trim()

    def dirichlet(self, z, f: LocalFunction) -> float:
        """``D_{0,z}(f) = <-L_{0,z} f, f>``."""
        return -inner(self.bond_apply((0,) * self.dim, z, f), f)

    def bond_current(self, z) -> LocalFunction:
        """``j_{0,z} = 2 L_{0,z} xi_0``."""
        return (2.0 * self.bond_apply((0,) * self.dim, z, self.xi_function())).trim()

    def current(self, axis: int) -> LocalFunction:
        """``j_alpha = sum_z z_alpha j_{0,z}``."""
        terms = [(float(z[axis]), self.bond_current(z)) for z in self.directions if z[axis]]
        if not terms:
            return LocalFunction.constant(self.marginal, 0.0, dim=self.dim)
        return linear_combination(terms, self.marginal, self.dim).trim()

    def current_along(self, direction: Sequence[float]) -> LocalFunction:
        """``j_l = sum_alpha l_alpha j_alpha``."""
        if len(direction) != self.dim:
            raise InputError("direction length must equal the lattice dimension")
        terms = [(float(c), self.current(a)) for a, c in enumerate(direction) if c]
        if not terms:
            return LocalFunction.constant(self.marginal, 0.0, dim=self.dim)
        return linear_combination(terms, self.marginal, self.dim).trim()


def _rule_action(r: BondRule, origin, f: LocalFunction) -> LocalFunction:
    nb = [add_sites(origin, o) for o in r.offsets]
    union = tuple(sorted(set(f.sites) | set(nb)))
    pos = {s: i for i, s in enumerate(union)}
    n = len(union)
    if n + 2 > 52:
        raise InputError("window too large for the bond contraction")
    values = f.extend(union)
    f_axes = list(range(n))
    f_axes[pos[nb[0]]] = n
    f_axes[pos[nb[1]]] = n + 1
    q_axes = [pos[s] for s in nb] + [n, n + 1]
    out = np.einsum(r.rates, q_axes, values, f_axes, list(range(n)), optimize=True)
    return LocalFunction(f.marginal, union, out, dim=f.dim)


# --------------------------------------------------------------------------- self-check
def self_check(model: BondGenerator, samples: int = 3, seed: int = 20240611) -> dict:
    """Verify the structural generator properties; raise :class:`ModelError` on failure.

    Returns a mapping invariant name -> measured worst defect.
    """
    m = model.marginal
    w = m.weight_array()
    xi = model.xi
    report = {}
    for r in model.rules:
        q = r.rates
        rows = q.reshape(q.shape[: len(r.offsets)] + (-1,)).sum(axis=-1)
        scale = max(1.0, float(np.abs(q).max()))
        defect = float(np.abs(rows).max()) if rows.size else 0.0
        report["annihilates constants"] = max(report.get("annihilates constants", 0.0), defect)
        if defect > 1e-13 * scale:
            raise ModelError(f"L_0,{r.z} 1 = {defect:.3e} != 0", invariant="annihilates constants")
        worst_db = 0.0
        for env, a, b, a2, b2, rate in r.transitions():
            if rate < 0:
                raise ModelError(f"negative rate {rate} in bond {r.z}", invariant="non-positivity")
            if xi[a] + xi[b] != xi[a2] + xi[b2]:
                raise ModelError(
                    f"bond {r.z} moves ({a},{b}) -> ({a2},{b2}) and changes xi_0 + xi_z",
                    invariant="conservation")
            back = float(q[(a2, b2) + env[2:] + (a, b)])
            lhs, rhs = w[a] * w[b] * rate, w[a2] * w[b2] * back
            worst_db = max(worst_db, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
        report["detailed balance"] = max(report.get("detailed balance", 0.0), worst_db)
        if worst_db > TOLERANCE:
            raise DetailedBalanceError(
                f"bond {r.z} violates detailed balance (relative defect {worst_db:.3e})",
                invariant="reversibility")

    rng = np.random.default_rng(seed)
    o = (0,) * model.dim
    worst = {"reversibility": 0.0, "dirichlet": 0.0, "symmetry": 0.0, "translation": 0.0}
    for r in model.rules:
        z = r.z
        sites = sorted({o, z} | set(r.offsets))
        for _ in range(samples):
            f = LocalFunction(m, sites, rng.standard_normal((m.size,) * len(sites)), dim=model.dim)
            g = LocalFunction(m, sites, rng.standard_normal((m.size,) * len(sites)), dim=model.dim)
            lf = model.bond_apply(o, z, f)
            worst["reversibility"] = max(worst["reversibility"],
                                         abs(inner(lf, g) - inner(f, model.bond_apply(o, z, g))))
            worst["dirichlet"] = max(worst["dirichlet"], -model.dirichlet(z, f))
            other = model.bond_apply(z, _neg(z), f)
            worst["symmetry"] = max(worst["symmetry"], (lf - other).max_abs())
            x = tuple(int(c) for c in rng.integers(-3, 4, size=model.dim))
            moved = model.bond_apply(x, z, shift(f, x))
            worst["translation"] = max(worst["translation"], (moved - shift(lf, x)).max_abs())
    for name, val in worst.items():
        report[name] = val
        if val > TOLERANCE * 10:
            raise ModelError(f"{name} check failed (defect {val:.3e})", invariant=name)
    xi0 = model.xi_function(o)
    for z in model.directions:
        lf = model.bond_apply(o, z, xi0 + model.xi_function(z))
        if lf.max_abs() > TOLERANCE:
            raise ModelError(f"L_0,{z} does not conserve xi", invariant="conservation")
    return report


def check_report(model: BondGenerator) -> dict:
    """Self-check defects without raising for a model that already passed construction."""
    return self_check(model)


# --------------------------------------------------------------------------- models
def _axis_rules(dim: int, range_: int = 1) -> list:
    return [tuple(k * c for c in unit(dim, a)) for a in range(dim) for k in range(1, range_ + 1)]


def _parse_rate(c):
    if isinstance(c, (int, float)):
        return "const", float(c)
    if isinstance(c, str):
        kind, _, val = c.partition(":")
        if kind in ("const", "neighbour", "neighbor", "product") and val:
            return ("neighbour" if kind.startswith("neighb") else kind), float(val)
    raise InputError(f"unrecognised jump rate {c!r}; use a number, 'const:v', 'neighbour:g' or 'product:g'")


def make_ssep(p=Fraction(1, 2), c=1.0, dim: int = 1, range_: int = 1,
              extra_offsets: Sequence = ()) -> BondGenerator:
    """Symmetric exclusion, ``L_{x,y} f = c/2 (f(eta^{x,y}) - f(eta))``.

    ``c`` may be a constant, ``"const:v"``, ``"neighbour:g"`` (rate
    ``1 + g (eta_{x-e} + eta_{x+2e})`` for the bond ``(x, x+e)``; still a
    gradient model), ``"product:g"`` (rate ``1 + g eta_{x-e} eta_{x+2e}``;
    not gradient), or a callable ``c(env)`` of the occupations at
    ``(0, z, *extra_offsets)``.
    """
    m = Marginal.bernoulli(p)
    rules = []
    if callable(c):
        if range_ != 1:
            raise InputError("callable rates are only supported for nearest-neighbour bonds")
        kind, label = "callable", getattr(c, "__name__", "callable")
        for z in _axis_rules(dim):
            fn = (lambda env, a2, b2: 0.5 * c(env) if (a2, b2) == (env[1], env[0]) else 0.0)
            rules.append(rule_from_callable(m, z, fn, extra_offsets, dim))
    else:
        kind, val = _parse_rate(c)
        if kind == "const" and val <= 0:
            raise InputError("jump rate must be positive")
        label = f"{kind}:{val}"
        for z in _axis_rules(dim, range_):
            if kind == "const":
                fn = (lambda env, a2, b2, v=val: 0.5 * v if (a2, b2) == (env[1], env[0]) else 0.0)
                rules.append(rule_from_callable(m, z, fn, (), dim))
            else:
                if range_ != 1:
                    raise InputError("environment-dependent rates are nearest-neighbour only")
                if val <= -0.5:
                    raise InputError("rate must stay positive")
                extras = (_neg(z), tuple(2 * c_ for c_ in z))
                if kind == "neighbour":
                    rate = (lambda env, g=val: 1.0 + g * (env[2] + env[3]))
                else:
                    rate = (lambda env, g=val: 1.0 + g * env[2] * env[3])
                fn = (lambda env, a2, b2, rate=rate:
                      0.5 * rate(env) if (a2, b2) == (env[1], env[0]) else 0.0)
                rules.append(rule_from_callable(m, z, fn, extras, dim))
    cfg = {"model": "ssep", "p": float(p), "c": label, "range": range_}
    return BondGenerator(m, m.atom_array().copy(), tuple(rules), dim, "ssep", cfg)


def make_gep(kappa: int = 2, fugacity=1, dim: int = 1) -> BondGenerator:
    """Generalized exclusion with at most ``kappa`` particles per site.

    A particle hops across a bond at rate 1/2 when the source is occupied and
    the target is below capacity. The marginal is ``nu(k) ∝ fugacity^k``.
    """
    kappa = int(kappa)
    if kappa < 2:
        raise InputError("generalized exclusion needs capacity >= 2")
    m = Marginal.geometric_tilt(kappa, fugacity)

    def fn(env, a2, b2):
        a, b = env[0], env[1]
        rate = 0.0
        if a >= 1 and b <= kappa - 1 and (a2, b2) == (a - 1, b + 1):
            rate += 0.5
        if b >= 1 and a <= kappa - 1 and (a2, b2) == (a + 1, b - 1):
            rate += 0.5
        return rate

    rules = tuple(rule_from_callable(m, z, fn, (), dim) for z in _axis_rules(dim))
    cfg = {"model": "gep", "kappa": kappa, "fugacity": float(fugacity)}
    return BondGenerator(m, m.atom_array().copy(), rules, dim, "gep", cfg)


def _rate_table(g, kappa: int) -> list:
    if g in (None, "linear"):
        return [float(k) for k in range(kappa + 1)]
    if g == "constant":
        return [0.0] + [1.0] * kappa
    if callable(g):
        return [float(g(k)) for k in range(kappa + 1)]
    vals = [float(v) for v in g]
    if len(vals) != kappa + 1:
        raise InputError("rate table must list g(0..kappa)")
    return vals


def make_zero_range(g="linear", kappa: int = 3, fugacity=1, dim: int = 1) -> BondGenerator:
    """Zero-range process truncated at ``kappa`` particles per site.

    A particle leaves a site holding ``k`` at rate ``g(k)/2`` per bond
    direction; jumps onto a site already at level ``kappa`` are suppressed.
    ``nu(k) ∝ fugacity^k / (g(1) ... g(k))`` restricted to ``0..kappa``.
    """
    kappa = int(kappa)
    if kappa < 1:
        raise InputError("truncation level must be >= 1")
    gk = _rate_table(g, kappa)
    if gk[0] != 0 or any(v <= 0 for v in gk[1:]):
        raise InputError("zero-range rate needs g(0) = 0 and g(k) > 0 for k >= 1")
    phi = Fraction(fugacity)
    base, acc = [], Fraction(1)
    exact = all(float(Fraction(v)) == v for v in gk)
    for k in range(kappa + 1):
        if k:
            acc = acc * phi / (Fraction(gk[k]) if exact else Fraction(repr(gk[k])))
        base.append(acc)
    m = Marginal.geometric_tilt(kappa, 1, base=base, approximate=True,
                                note=f"zero-range marginal truncated at {kappa}")

    def fn(env, a2, b2):
        a, b = int(env[0]), int(env[1])
        rate = 0.0
        if a >= 1 and b < kappa and (a2, b2) == (a - 1, b + 1):
            rate += 0.5 * gk[a]
        if b >= 1 and a < kappa and (a2, b2) == (a + 1, b - 1):
            rate += 0.5 * gk[b]
        return rate

    rules = tuple(rule_from_callable(m, z, fn, (), dim) for z in _axis_rules(dim))
    label = g if isinstance(g, str) else "table"
    cfg = {"model": "zero_range", "g": label, "kappa": kappa, "fugacity": float(fugacity)}
    notes = ("truncated state space: jumps onto full sites are suppressed; not claimed gradient",)
    return BondGenerator(m, m.atom_array().copy(), rules, dim, "zero_range", cfg, notes)


def make_trivial(marginal: Marginal, dim: int = 1) -> BondGenerator:
    """Zero dynamics on ``marginal`` (useful for degenerate-marginal checks)."""
    rule = rule_from_callable(marginal, unit(dim, 0), lambda env, a2, b2: 0.0, (), dim)
    return BondGenerator(marginal, marginal.atom_array().copy(), (rule,), dim, "trivial",
                         {"model": "trivial"})


MODEL_KEYS = {
    "ssep": {"model", "p", "c", "range", "dim"},
    "gep": {"model", "kappa", "fugacity", "dim"},
    "zero_range": {"model", "g", "kappa", "fugacity", "dim"},
}


def model_from_config(cfg: Mapping) -> BondGenerator:
    """Build a model from ``{"model": "ssep", "p": 0.5, "c": "const:1.0"}`` and friends."""
    cfg = dict(cfg)
    name = cfg.get("model")
    if name not in MODEL_KEYS:
        raise InputError(f"unknown model {name!r}; choose from {sorted(MODEL_KEYS)}")
    extra = set(cfg) - MODEL_KEYS[name]
    if extra:
        raise InputError(f"unknown keys for model {name}: {sorted(extra)}")
    dim = int(cfg.get("dim", 1))
    if name == "ssep":
        p = cfg.get("p", 0.5)
        p = Fraction(repr(p)) if isinstance(p, float) else Fraction(p)
        return make_ssep(p, cfg.get("c", 1.0), dim=dim, range_=int(cfg.get("range", 1)))
    if name == "gep":
        return make_gep(int(cfg.get("kappa", 2)), Fraction(repr(float(cfg.get("fugacity", 1)))), dim)
    return make_zero_range(cfg.get("g", "linear"), int(cfg.get("kappa", 3)),
                           Fraction(repr(float(cfg.get("fugacity", 1)))), dim)
