"""Exact algebra of local (cylinder) functions under a product measure.

A :class:`LocalFunction` is a dense value table over ``X^window`` for a
finite single-site marginal. Shifts move the window: ``shift(f, z)`` depends
on the sites ``window + z``, so ``shift(eta_0, 1) = eta_1``.

Generalized Fourier coefficients are taken against products of an
orthonormal single-site basis. A multi-index is a finitely supported map
``site -> basis index``; its translation orbit is labelled by the canonical
translate whose lexicographically smallest support site is the origin (in
one dimension: ``n_x = 0`` for ``x < 0`` and ``n_0 != 0``).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import CapacityError, CompletenessError, InputError, PreconditionError
from .measure_basis import Marginal, OrthonormalBasis, build_basis

Site = tuple

#: Maximal number of entries in a dense value table.
ENUMERATION_CAP = 10 ** 7


def as_site(x, dim: int | None = None) -> Site:
    if isinstance(x, (int, np.integer)):
        site = (int(x),)
    else:
        site = tuple(int(c) for c in x)
    if dim is not None and len(site) != dim:
        raise InputError(f"site {site} has dimension {len(site)}, expected {dim}")
    return site


def add_sites(a: Site, b: Site) -> Site:
    return tuple(p + q for p, q in zip(a, b))


def sub_sites(a: Site, b: Site) -> Site:
    return tuple(p - q for p, q in zip(a, b))


def unit(dim: int, axis: int, sign: int = 1) -> Site:
    return tuple(sign if k == axis else 0 for k in range(dim))


@dataclass(frozen=True)
class Window:
    """Finite ordered set of lattice sites."""

    dim: int
    sites: tuple

    @property
    def radius(self) -> int:
        """Largest sup-norm of a site; equals ``s_f`` for a trimmed support."""
        return max((max(abs(c) for c in s) for s in self.sites), default=0)

    def shift(self, z: Site) -> "Window":
        return Window(self.dim, tuple(add_sites(s, z) for s in self.sites))

    def __len__(self) -> int:
        return len(self.sites)


def cube_window(dim: int, radius: int) -> Window:
    """All sites with sup-norm at most ``radius``."""
    rng = range(-radius, radius + 1)
    return Window(dim, tuple(itertools.product(rng, repeat=dim)))


# --------------------------------------------------------------------------- multi-indices
@dataclass(frozen=True)
class MultiIndex:
    """Finitely supported map ``Z^d -> N_0`` stored as sorted ``(site, n)`` pairs."""

    entries: tuple
    dim: int = 1

    @classmethod
    def from_mapping(cls, mapping: Mapping, dim: int = 1) -> "MultiIndex":
        items = []
        for site, n in mapping.items():
            n = int(n)
            if n < 0:
                raise InputError("multi-index entries must be nonnegative")
            if n:
                items.append((as_site(site, dim), n))
        return cls(tuple(sorted(items)), dim)

    @classmethod
    def zero(cls, dim: int = 1) -> "MultiIndex":
        return cls((), dim)

    @property
    def is_zero(self) -> bool:
        return not self.entries

    @property
    def support(self) -> tuple:
        return tuple(s for s, _ in self.entries)

    def __getitem__(self, site) -> int:
        site = as_site(site, self.dim)
        for s, n in self.entries:
            if s == site:
                return n
        return 0

    def shift(self, z) -> "MultiIndex":
        """``(tau_z n)_x = n_{x-z}``: the support moves by ``+z``."""
        z = as_site(z, self.dim)
        return MultiIndex(tuple((add_sites(s, z), n) for s, n in self.entries), self.dim)

    @property
    def rad(self) -> int:
        """Largest coordinate spread of the support along any axis."""
        if not self.entries:
            return 0
        sup = self.support
        return max(max(s[a] for s in sup) - min(s[a] for s in sup) for a in range(self.dim))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "entries": [[list(s), n] for s, n in self.entries]}

    def __repr__(self) -> str:
        body = ", ".join(f"{n}@{s[0] if self.dim == 1 else s}" for s, n in self.entries)
        return f"MultiIndex({body})"


@dataclass(frozen=True)
class OrbitRep:
    """Canonical representative of a translation orbit of nonzero multi-indices."""

    index: MultiIndex

    @property
    def rad(self) -> int:
        return self.index.rad

    def translate(self, x) -> MultiIndex:
        return self.index.shift(x)


def orbit_decompose(n: MultiIndex) -> tuple[Site, OrbitRep]:
    """Split a nonzero multi-index as ``n = tau_x rep`` with ``rep`` canonical."""
    if n.is_zero:
        raise PreconditionError("the zero multi-index has no orbit representative")
    x = n.entries[0][0]
    neg = tuple(-c for c in x)
    return x, OrbitRep(n.shift(neg))


def _canonical_entries(entries: tuple) -> tuple[Site, tuple]:
    # fast path of orbit_decompose on raw sorted entry tuples
    x = entries[0][0]
    return x, tuple((sub_sites(s, x), n) for s, n in entries)


# --------------------------------------------------------------------------- helpers
def _check_capacity(k: int, m: int) -> None:
    if m and k ** m > ENUMERATION_CAP:
        raise CapacityError(f"table with {k}^{m} entries exceeds cap {ENUMERATION_CAP}")


def full_expectation(arr: np.ndarray, weights) -> object:
    """Contract every axis of ``arr`` with ``weights``; works for object dtype."""
    w = np.asarray(weights, dtype=arr.dtype if arr.dtype == object else float)
    out = arr
    for _ in range(arr.ndim):
        out = np.tensordot(w, out, axes=([0], [0]))
    return out[()] if isinstance(out, np.ndarray) else out


class LocalFunction:
    """Function of finitely many coordinates, stored as a dense value table.

    Parameters
    ----------
    marginal : Marginal
        Finite single-site law; the table axis ``a`` corresponds to
        ``marginal.atoms[a]``.
    sites : sequence of sites
        Window. Reordered lexicographically (the table is transposed to
        match).
    values : array_like
        Table of shape ``(K,) * len(sites)``.
    dim : int, optional
        Lattice dimension; inferred from the sites when possible.
    """

    def __init__(self, marginal: Marginal, sites: Iterable, values, dim: int | None = None):
        if not marginal.is_finite:
            raise InputError("local functions need a finite single-site marginal")
        sites = [as_site(s) for s in sites]
        if dim is None:
            if not sites:
                raise InputError("dim is required for functions with an empty window")
            dim = len(sites[0])
        sites = [as_site(s, dim) for s in sites]
        if len(set(sites)) != len(sites):
            raise InputError("window sites must be distinct")
        k = marginal.size
        _check_capacity(k, len(sites))
        arr = np.asarray(values, dtype=float)
        if arr.shape != (k,) * len(sites):
            raise InputError(f"value table has shape {arr.shape}, expected {(k,) * len(sites)}")
        if not np.all(np.isfinite(arr)):
            raise InputError("value table has non-finite entries")
        order = sorted(range(len(sites)), key=lambda i: sites[i])
        if order != list(range(len(sites))):
            arr = np.transpose(arr, order)
            sites = [sites[i] for i in order]
        arr = np.array(arr, order="C")  # ascontiguousarray would promote 0-d tables to 1-d
        arr.setflags(write=False)
        self.marginal = marginal
        self.dim = dim
        self.sites = tuple(sites)
        self.values = arr

    # ------------------------------------------------------------------ constructors
    @classmethod
    def constant(cls, marginal: Marginal, c: float, dim: int = 1) -> "LocalFunction":
        return cls(marginal, (), np.asarray(float(c)), dim=dim)

    @classmethod
    def from_callable(cls, marginal: Marginal, sites: Iterable, fn: Callable,
                      dim: int | None = None) -> "LocalFunction":
        """Tabulate ``fn(values)`` where ``values`` lists atom values in site order."""
        sites = [as_site(s) for s in sites]
        _check_capacity(marginal.size, len(sites))
        atoms = marginal.atoms
        table = np.array([float(fn(tuple(atoms[i] for i in idx)))
                          for idx in itertools.product(range(marginal.size), repeat=len(sites))])
        return cls(marginal, sites, table.reshape((marginal.size,) * len(sites)), dim=dim)

    @classmethod
    def site_function(cls, marginal: Marginal, site, table, dim: int | None = None) -> "LocalFunction":
        """``f(eta) = table(eta_site)``; ``table`` is a sequence over atoms or a callable."""
        if callable(table):
            table = [float(table(a)) for a in marginal.atoms]
        return cls(marginal, [as_site(site, dim)], np.asarray(table, dtype=float), dim=dim)

    @classmethod
    def occupation(cls, marginal: Marginal, site=0, dim: int | None = None) -> "LocalFunction":
        """The coordinate ``eta_site`` itself."""
        return cls.site_function(marginal, site, marginal.atoms, dim=dim)

    @classmethod
    def basis_product(cls, basis: OrthonormalBasis, n: MultiIndex) -> "LocalFunction":
        """``phi_n(eta) = prod_x phi_{n_x}(eta_x)``."""
        m = basis.marginal
        if n.is_zero:
            return cls.constant(m, 1.0, dim=n.dim)
        factors = [basis.table[k] for _, k in n.entries]
        arr = factors[0]
        for fac in factors[1:]:
            arr = np.multiply.outer(arr, fac)
        return cls(m, n.support, arr, dim=n.dim)

    @classmethod
    def from_fourier(cls, coeffs: Mapping, basis: OrthonormalBasis, dim: int = 1,
                     sites: Iterable | None = None) -> "LocalFunction":
        """Inverse of :func:`fourier`: sum ``c_n phi_n`` on the smallest window."""
        m = basis.marginal
        if sites is None:
            sites = sorted({s for n in coeffs for s in n.support})
        else:
            sites = sorted(as_site(s, dim) for s in sites)
        pos = {s: i for i, s in enumerate(sites)}
        k = basis.size
        _check_capacity(k, len(sites))
        c = np.zeros((k,) * len(sites))
        for n, v in coeffs.items():
            idx = [0] * len(sites)
            for s, j in n.entries:
                if s not in pos:
                    raise InputError(f"coefficient at {n} lies outside the window")
                idx[pos[s]] = j
            c[tuple(idx)] += v
        return cls(m, sites, _inverse_transform(c, basis), dim=dim)

    # ------------------------------------------------------------------ basic views
    @property
    def window(self) -> Window:
        return Window(self.dim, self.sites)

    @property
    def support_radius(self) -> int:
        """``s_f`` of the window (call :meth:`trim` first for the true support)."""
        return self.window.radius

    @cached_property
    def mean(self) -> float:
        return float(full_expectation(self.values, self.marginal.weight_array()))

    def __repr__(self) -> str:
        return f"LocalFunction(sites={list(self.sites)}, mean={self.mean:.6g})"

    def evaluate(self, config: Mapping) -> float:
        """Value at a configuration given as ``site -> atom value``."""
        atoms = self.marginal.atom_array()
        idx = []
        for s in self.sites:
            if s in config:
                v = config[s]
            elif self.dim == 1 and s[0] in config:
                v = config[s[0]]
            else:
                raise InputError(f"configuration has no value at site {s}")
            j = int(np.searchsorted(atoms, v))
            if j >= len(atoms) or atoms[j] != v:
                raise InputError(f"{v!r} is not an atom")
            idx.append(j)
        return float(self.values[tuple(idx)])

    __call__ = evaluate

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def trim(self) -> "LocalFunction":
        """Drop window sites the function does not depend on (exact test)."""
        arr, sites = self.values, list(self.sites)
        axis = 0
        while axis < len(sites):
            first = np.take(arr, [0], axis=axis)
            if np.array_equal(np.broadcast_to(first, arr.shape), arr):
                arr = np.take(arr, 0, axis=axis)
                sites.pop(axis)
            else:
                axis += 1
        return LocalFunction(self.marginal, sites, arr, dim=self.dim)

    def centered(self) -> "LocalFunction":
        return self - self.mean

    # ------------------------------------------------------------------ alignment
    def extend(self, sites: Iterable) -> np.ndarray:
        """Value table broadcast to the window ``sites`` (a superset of ours)."""
        union = tuple(sorted(as_site(s, self.dim) for s in sites))
        if not set(self.sites) <= set(union):
            raise InputError("extension window must contain the function's window")
        k = self.marginal.size
        _check_capacity(k, len(union))
        mine = set(self.sites)
        shape = tuple(k if s in mine else 1 for s in union)
        return np.broadcast_to(self.values.reshape(shape), (k,) * len(union))

    def _check_compatible(self, other: "LocalFunction") -> None:
        if other.marginal != self.marginal or other.dim != self.dim:
            raise InputError("local functions live on different state spaces")

    def _binary(self, other, op) -> "LocalFunction":
        if isinstance(other, LocalFunction):
            self._check_compatible(other)
            union = tuple(sorted(set(self.sites) | set(other.sites)))
            return LocalFunction(self.marginal, union, op(self.extend(union), other.extend(union)),
                                 dim=self.dim)
        return LocalFunction(self.marginal, self.sites, op(self.values, float(other)), dim=self.dim)

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, c: float):
        return self * (1.0 / float(c))

    def __neg__(self):
        return LocalFunction(self.marginal, self.sites, -self.values, dim=self.dim)

    # ------------------------------------------------------------------ serialization
    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "sites": [list(s) for s in self.sites],
            "values": self.values.ravel().tolist(),
            "marginal": self.marginal.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping, marginal: Marginal | None = None) -> "LocalFunction":
        extra = set(doc) - {"dim", "sites", "values", "marginal"}
        if extra:
            raise InputError(f"unknown local-function keys: {sorted(extra)}")
        if marginal is None:
            if "marginal" not in doc:
                raise InputError("local function JSON needs a marginal")
            marginal = Marginal.from_dict(doc["marginal"])
        sites = [as_site(s) for s in doc["sites"]]
        dim = int(doc.get("dim", len(sites[0]) if sites else 1))
        shape = (marginal.size,) * len(sites)
        values = np.asarray(doc["values"], dtype=float)
        if values.size != math.prod(shape):
            raise InputError(f"expected {math.prod(shape)} values, got {values.size}")
        return cls(marginal, sites, values.reshape(shape), dim=dim)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# --------------------------------------------------------------------------- operations
def shift(f: LocalFunction, z) -> LocalFunction:
    """``tau_z f``: same table, window translated by ``z``."""
    z = as_site(z, f.dim)
    if not any(z):
        return f
    return LocalFunction(f.marginal, [add_sites(s, z) for s in f.sites], f.values, dim=f.dim)


def expectation(f: LocalFunction, m: Marginal | None = None) -> float:
    """Exact product-measure expectation ``<f>``."""
    if m is not None and m != f.marginal:
        raise InputError("marginal does not match the function's state space")
    return f.mean


def inner(f: LocalFunction, g: LocalFunction) -> float:
    """``<f g>`` under the product measure."""
    f._check_compatible(g)
    union = tuple(sorted(set(f.sites) | set(g.sites)))
    w = f.marginal.weight_array()
    return float(full_expectation(np.asarray(f.extend(union) * g.extend(union)), w))


def linear_combination(terms: Sequence[tuple[float, LocalFunction]], marginal: Marginal,
                       dim: int) -> LocalFunction:
    """``sum c_i f_i`` assembled once on the union window."""
    union = tuple(sorted({s for _, f in terms for s in f.sites}))
    k = marginal.size
    _check_capacity(k, len(union))
    acc = np.zeros((k,) * len(union))
    for c, f in terms:
        if c:
            acc += c * f.extend(union)
    return LocalFunction(marginal, union, acc, dim=dim)


def _forward_transform(values: np.ndarray, basis: OrthonormalBasis) -> np.ndarray:
    c = basis.table * basis.marginal.weight_array()  # c[n, a] = w_a phi_n(a)
    out = values
    for _ in range(values.ndim):
        out = np.tensordot(out, c, axes=([0], [1]))
    return np.asarray(out)


def _inverse_transform(coeffs: np.ndarray, basis: OrthonormalBasis) -> np.ndarray:
    out = coeffs
    for _ in range(coeffs.ndim):
        out = np.tensordot(out, basis.table, axes=([0], [0]))
    return np.asarray(out)


def _require_complete(f: LocalFunction, basis: OrthonormalBasis | None) -> OrthonormalBasis:
    if basis is None:
        basis = build_basis(f.marginal)
    if basis.marginal != f.marginal:
        raise InputError("basis belongs to a different marginal")
    if not basis.is_complete:
        raise CompletenessError(f"basis of size {basis.size} is incomplete for "
                                f"{basis.marginal.size} atoms")
    return basis


def fourier_tensor(f: LocalFunction, basis: OrthonormalBasis | None = None) -> np.ndarray:
    """Dense coefficient tensor ``c[n_1..n_m] = <f phi_n>`` over the window."""
    basis = _require_complete(f, basis)
    return _forward_transform(f.values, basis)


def fourier(f: LocalFunction, basis: OrthonormalBasis | None = None) -> dict:
    """Generalized Fourier coefficients ``{MultiIndex: <f phi_n>}``.

    Every multi-index supported in the window appears, including the zero
    index (the mean); indices reaching outside the window have coefficient
    exactly zero and are omitted.
    """
    c = fourier_tensor(f, basis)
    out = {}
    for idx in np.ndindex(c.shape):
        entries = tuple((s, int(n)) for s, n in zip(f.sites, idx) if n)
        out[MultiIndex(entries, f.dim)] = float(c[idx])
    return out


def fourier_coefficient(f: LocalFunction, n: MultiIndex,
                        basis: OrthonormalBasis | None = None) -> float:
    """Single coefficient ``<f phi_n>``; exactly 0 when ``n`` leaves the window."""
    pos = {s: i for i, s in enumerate(f.sites)}
    if any(s not in pos for s in n.support):
        return 0.0
    idx = [0] * len(f.sites)
    for s, k in n.entries:
        idx[pos[s]] = k
    return float(fourier_tensor(f, basis)[tuple(idx)])


def reconstruct(coeffs: Mapping, basis: OrthonormalBasis, dim: int = 1,
                sites: Iterable | None = None) -> LocalFunction:
    return LocalFunction.from_fourier(coeffs, basis, dim=dim, sites=sites)


def orbit_profiles(f: LocalFunction, basis: OrthonormalBasis | None = None) -> dict:
    """Fourier coefficients grouped by translation orbit.

    Returns ``{rep: {x: coefficient of tau_x rep}}`` keyed by canonical
    :class:`MultiIndex` representatives; the zero index is skipped.
    """
    c = fourier_tensor(f, basis)
    sites = f.sites
    out: dict = {}
    for idx in zip(*np.nonzero(c)):
        entries = tuple((sites[i], int(n)) for i, n in enumerate(idx) if n)
        if not entries:
            continue
        x, rep = _canonical_entries(entries)
        out.setdefault(MultiIndex(rep, f.dim), {})[x] = float(c[idx])
    return out


def exact_values(f: LocalFunction) -> np.ndarray:
    """Value table as an object array of exact ``Fraction`` (binary-exact)."""
    return np.vectorize(Fraction, otypes=[object])(f.values)


def exact_weights(m: Marginal) -> np.ndarray:
    if m.exact_weights is None:
        raise PreconditionError("marginal has no exact rational weights")
    return np.array(m.exact_weights, dtype=object)
