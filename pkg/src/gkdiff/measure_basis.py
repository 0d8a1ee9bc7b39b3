"""Single-site marginals and orthonormal bases of L^2 of a marginal.

Two kinds of marginal are supported: a finite discrete law (exact
arithmetic, used by every enumeration-based module) and a Gamma law, the
equilibrium marginal of the energy exchange models in ``montecarlo``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, roots_genlaguerre

from .errors import ConditioningError, DimensionError, InputError

FINITE = "finite"
GAMMA = "gamma"

#: Default number of Gauss-Laguerre nodes used for Gamma expectations.
QUADRATURE_NODES = 64
#: Largest Gamma basis that ``build_basis`` will construct.
GAMMA_TRUNCATION_CAP = 40
#: Condition-number ceiling for the weighted monomial Gram matrix.
CONDITION_LIMIT = 1e12


def _as_fraction(w) -> Fraction | None:
    if isinstance(w, Fraction):
        return w
    if isinstance(w, (int, np.integer)):
        return Fraction(int(w))
    if isinstance(w, str):
        return Fraction(w)
    if isinstance(w, (float, np.floating)):
        # decimal literal the user most likely meant, e.g. 0.3 -> 3/10
        return Fraction(repr(float(w)))
    return None


@dataclass(frozen=True)
class Marginal:
    """Single-site probability law ``nu``.

    Use the constructors :meth:`finite`, :meth:`bernoulli`, :meth:`uniform`
    and :meth:`gamma` rather than the raw initializer.

    Attributes
    ----------
    kind : {"finite", "gamma"}
    atoms, weights : tuple of float
        Support points (strictly increasing) and their probabilities.
    shape, temperature : float
        Gamma parameters; the density is
        ``x**(shape-1) exp(-x/T) / (T**shape Gamma(shape))``.
    exact_weights : tuple of Fraction or None
        Rational weights summing exactly to one, when they are available.
        Enables the exact-arithmetic code paths.
    approximate : bool
        Set for truncations of infinite state spaces.
    """

    kind: str
    atoms: tuple = ()
    weights: tuple = ()
    shape: float = 0.0
    temperature: float = 0.0
    exact_weights: tuple | None = field(default=None, compare=False, repr=False)
    approximate: bool = False
    note: str = ""

    # ------------------------------------------------------------------ constructors
    @classmethod
    def finite(cls, atoms: Sequence, weights: Sequence, approximate: bool = False,
               note: str = "") -> "Marginal":
        if len(atoms) != len(weights) or len(atoms) == 0:
            raise InputError("atoms and weights must be non-empty and of equal length")
        fatoms = tuple(float(a) for a in atoms)
        fracs = [_as_fraction(w) for w in weights]
        fweights = tuple(float(w) if f is None else float(f) for w, f in zip(weights, fracs))
        if not all(math.isfinite(a) for a in fatoms) or not all(math.isfinite(w) for w in fweights):
            raise InputError("atoms and weights must be finite")
        if any(b <= a for a, b in zip(fatoms, fatoms[1:])):
            raise InputError("atoms must be strictly increasing")
        if any(w <= 0 for w in fweights):
            raise InputError("every weight must be positive (zero-weight atoms are rejected)")
        if abs(math.fsum(fweights) - 1.0) > 1e-14:
            raise InputError(f"weights sum to {math.fsum(fweights)!r}, not 1")
        exact = None
        if all(f is not None for f in fracs) and sum(fracs) == 1:
            exact = tuple(fracs)
        return cls(FINITE, fatoms, fweights, exact_weights=exact,
                   approximate=approximate, note=note)

    @classmethod
    def bernoulli(cls, p=Fraction(1, 2)) -> "Marginal":
        pf = _as_fraction(p)
        return cls.finite((0, 1), (1 - pf, pf))

    @classmethod
    def uniform(cls, atoms: Sequence) -> "Marginal":
        k = len(atoms)
        return cls.finite(atoms, [Fraction(1, k)] * k)

    @classmethod
    def geometric_tilt(cls, levels: int, fugacity=1, base: Sequence | None = None,
                       approximate: bool = False, note: str = "") -> "Marginal":
        """Law on ``{0..levels}`` with ``nu(k) ~ fugacity**k * base[k]``."""
        lam = _as_fraction(fugacity)
        base = [Fraction(1)] * (levels + 1) if base is None else [_as_fraction(b) for b in base]
        raw = [lam ** k * base[k] for k in range(levels + 1)]
        z = sum(raw)
        return cls.finite(range(levels + 1), [r / z for r in raw],
                          approximate=approximate, note=note)

    @classmethod
    def gamma(cls, shape: float, temperature: float = 1.0) -> "Marginal":
        shape, temperature = float(shape), float(temperature)
        if not (shape > 0 and temperature > 0 and math.isfinite(shape) and math.isfinite(temperature)):
            raise InputError("Gamma marginal needs shape > 0 and temperature > 0")
        m = cls(GAMMA, shape=shape, temperature=temperature)
        total, _ = quad_expect(m, lambda x: np.ones_like(x))
        if abs(total - 1.0) > 1e-10:
            raise InputError(f"Gamma density integrates to {total}, not 1")
        return m

    # ------------------------------------------------------------------ serialization
    @classmethod
    def from_dict(cls, doc: dict) -> "Marginal":
        kind = doc.get("kind")
        if kind == FINITE:
            extra = set(doc) - {"kind", "atoms", "weights"}
            if extra:
                raise InputError(f"unknown marginal keys: {sorted(extra)}")
            return cls.finite(doc["atoms"], doc["weights"])
        if kind == GAMMA:
            extra = set(doc) - {"kind", "shape", "temperature"}
            if extra:
                raise InputError(f"unknown marginal keys: {sorted(extra)}")
            return cls.gamma(doc["shape"], doc.get("temperature", 1.0))
        raise InputError(f"unknown marginal kind {kind!r}")

    @classmethod
    def from_json(cls, text: str) -> "Marginal":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        if self.kind == FINITE:
            weights = ([str(w) for w in self.exact_weights] if self.exact_weights
                       else list(self.weights))
            out = {"kind": FINITE, "atoms": list(self.atoms), "weights": weights}
        else:
            out = {"kind": GAMMA, "shape": self.shape, "temperature": self.temperature}
        if self.approximate:
            out["approximate"] = True
            out["note"] = self.note
        return out

    # ------------------------------------------------------------------ properties
    @property
    def is_finite(self) -> bool:
        return self.kind == FINITE

    @property
    def size(self) -> int:
        """Number of atoms (finite case)."""
        return len(self.atoms)

    def atom_array(self) -> np.ndarray:
        return np.asarray(self.atoms, dtype=float)

    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def mean(self) -> float:
        if self.kind == GAMMA:
            return self.shape * self.temperature
        return float(np.dot(self.weight_array(), self.atom_array()))

    def variance(self) -> float:
        if self.kind == GAMMA:
            return self.shape * self.temperature ** 2
        a, w = self.atom_array(), self.weight_array()
        mu = np.dot(w, a)
        return float(np.dot(w, (a - mu) ** 2))

    def pdf(self, x):
        if self.kind != GAMMA:
            raise InputError("pdf is only defined for Gamma marginals")
        x = np.asarray(x, dtype=float)
        k, t = self.shape, self.temperature
        with np.errstate(divide="ignore"):
            logp = (k - 1) * np.log(x) - x / t - k * math.log(t) - gammaln(k)
        return np.where(x > 0, np.exp(logp), 0.0)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == GAMMA:
            return rng.gamma(self.shape, self.temperature, size=size)
        return rng.choice(self.size, size=size, p=self.weight_array())


# ---------------------------------------------------------------------- expectations
@lru_cache(maxsize=64)
def _laguerre_rule(alpha: float, nodes: int):
    x, w = roots_genlaguerre(nodes, alpha)
    return x, w / w.sum()


def _finite_values(m: Marginal, f) -> np.ndarray:
    if callable(f):
        vals = np.asarray(f(m.atom_array()), dtype=float)
        if vals.shape != (m.size,):
            vals = np.array([float(f(a)) for a in m.atoms])
    else:
        vals = np.asarray(f, dtype=float)
        if vals.shape != (m.size,):
            raise InputError(f"table has shape {vals.shape}, expected ({m.size},)")
    if not np.all(np.isfinite(vals)):
        raise InputError("function takes non-finite values")
    return vals


def quad_expect(m: Marginal, f, nodes: int = QUADRATURE_NODES) -> tuple[float, float]:
    """Expectation of ``f`` under ``m`` together with an error estimate.

    For finite marginals the sum is exact and the error is 0. For Gamma
    marginals Gauss-generalized-Laguerre quadrature with ``nodes`` points is
    compared against the rule with ``2*nodes`` points; the difference is
    returned as the error estimate.
    """
    if m.is_finite:
        return float(np.dot(m.weight_array(), _finite_values(m, f))), 0.0
    results = []
    for n in (nodes, 2 * nodes):
        x, w = _laguerre_rule(m.shape - 1.0, n)
        vals = np.asarray(f(x * m.temperature), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise InputError("function takes non-finite values at quadrature nodes")
        results.append(float(np.dot(w, vals)))
    return results[0], abs(results[1] - results[0])


def expect(m: Marginal, f, nodes: int = QUADRATURE_NODES) -> float:
    """Single-site expectation ``<f>`` under ``m``.

    ``f`` is a callable on atom values (vectorized or scalar) or, for finite
    marginals, a table indexed like ``m.atoms``.
    """
    return quad_expect(m, f, nodes)[0]


# ---------------------------------------------------------------------- bases
@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    """Orthonormal functions ``phi_0 = 1, phi_1, ...`` in L^2(marginal).

    For finite marginals ``table[n, a]`` holds ``phi_n(atoms[a])``. For Gamma
    marginals ``coefficients[n]`` holds the monomial coefficients of
    ``phi_n`` (lowest degree first); evaluation uses the three-term
    recurrence instead, which is far better conditioned.
    """

    marginal: Marginal
    size: int
    table: np.ndarray | None = None
    coefficients: tuple | None = None

    @property
    def is_complete(self) -> bool:
        return self.marginal.is_finite and self.size == self.marginal.size

    def __call__(self, n: int, x) -> np.ndarray:
        """Evaluate ``phi_n`` at atom values ``x``."""
        if not 0 <= n < self.size:
            raise DimensionError(f"basis index {n} outside 0..{self.size - 1}")
        if self.marginal.is_finite:
            x = np.asarray(x, dtype=float)
            idx = np.searchsorted(self.marginal.atom_array(), x)
            idx = np.clip(idx, 0, self.marginal.size - 1)
            if not np.allclose(self.marginal.atom_array()[idx], x):
                raise InputError("evaluation point is not an atom")
            return self.table[n, idx]
        return _laguerre_values(self.marginal, n + 1, np.asarray(x, dtype=float))[n]

    def evaluate_all(self, x) -> np.ndarray:
        """Matrix ``[phi_n(x_i)]`` of shape ``(size, len(x))``."""
        if self.marginal.is_finite:
            return np.stack([self(n, x) for n in range(self.size)])
        return _laguerre_values(self.marginal, self.size, np.asarray(x, dtype=float))

    def gram(self, nodes: int = QUADRATURE_NODES) -> np.ndarray:
        if self.marginal.is_finite:
            w = self.marginal.weight_array()
            return (self.table * w) @ self.table.T
        x, w = _laguerre_rule(self.marginal.shape - 1.0, nodes)
        vals = self.evaluate_all(x * self.marginal.temperature)
        return (vals * w) @ vals.T

    def coefficients_of(self, f) -> np.ndarray:
        """Generalized Fourier coefficients ``<f phi_n>`` of a single-site ``f``."""
        if self.marginal.is_finite:
            vals = _finite_values(self.marginal, f)
            return (self.table * self.marginal.weight_array()) @ vals
        x, w = _laguerre_rule(self.marginal.shape - 1.0, QUADRATURE_NODES)
        xs = x * self.marginal.temperature
        return (self.evaluate_all(xs) * w) @ np.asarray(f(xs), dtype=float)


def _laguerre_values(m: Marginal, count: int, x: np.ndarray) -> np.ndarray:
    # orthonormal, sign-flipped generalized Laguerre polynomials in x/T
    alpha = m.shape - 1.0
    y = x / m.temperature
    out = np.empty((count,) + y.shape)
    prev = np.zeros_like(y)
    cur = np.ones_like(y)
    out[0] = cur
    norm = 1.0  # Gamma(n+alpha+1) / (n! Gamma(alpha+1))
    for n in range(count - 1):
        nxt = ((2 * n + 1 + alpha - y) * cur - (n + alpha) * prev) / (n + 1)
        prev, cur = cur, nxt
        norm *= (n + 1 + alpha) / (n + 1)
        out[n + 1] = (-1) ** (n + 1) * cur / math.sqrt(norm)
    return out


def _laguerre_monomials(m: Marginal, count: int) -> tuple:
    alpha = m.shape - 1.0
    t = m.temperature
    coeffs = []
    for n in range(count):
        lognorm = gammaln(n + alpha + 1) - gammaln(n + 1) - gammaln(alpha + 1)
        c = np.array([
            (-1) ** j * math.exp(gammaln(n + alpha + 1) - gammaln(n - j + 1)
                                 - gammaln(alpha + j + 1) - gammaln(j + 1))
            / t ** j
            for j in range(n + 1)
        ])
        coeffs.append((-1) ** n * c / math.exp(0.5 * lognorm))
    return tuple(coeffs)


def _gram_schmidt(m: Marginal, size: int) -> np.ndarray:
    a, w = m.atom_array(), m.weight_array()
    vander = np.vander(a, size, increasing=True).T  # rows: 1, x, x^2, ...
    sw = np.sqrt(w)
    if size > 1:
        cond = np.linalg.cond((vander * sw).T)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise ConditioningError(f"monomial Gram matrix condition {cond:.3g} exceeds "
                                    f"{CONDITION_LIMIT:.0e}")
    table = np.zeros((size, m.size))
    table[0] = 1.0
    for n in range(1, size):
        v = vander[n].copy()
        start = math.sqrt(np.dot(w, v * v))
        for _ in range(2):  # second pass re-orthogonalizes
            for k in range(n):
                v -= np.dot(w, v * table[k]) * table[k]
        nrm = math.sqrt(np.dot(w, v * v))
        if nrm <= 1e-10 * start:
            raise ConditioningError(f"basis function {n} lost all precision")
        table[n] = v / nrm
    return table


@lru_cache(maxsize=128)
def build_basis(m: Marginal, size: int | None = None) -> OrthonormalBasis:
    """Orthonormal basis of L^2(m) with ``phi_0 = 1``.

    Finite marginals use two-pass modified Gram-Schmidt on the monomials
    ``1, x, x^2, ...``; ``size`` defaults to the number of atoms, which gives
    a complete basis. Gamma marginals use the closed-form normalized
    generalized Laguerre polynomials.

    Raises
    ------
    DimensionError
        ``size`` exceeds the number of atoms, or the Gamma truncation cap.
    ConditioningError
        The atoms are too close for a stable orthogonalization.
    """
    if m.is_finite:
        size = m.size if size is None else int(size)
        if size < 1 or size > m.size:
            raise DimensionError(f"basis size {size} not in 1..{m.size} for {m.size} atoms")
        table = _gram_schmidt(m, size)
        table.setflags(write=False)
        return OrthonormalBasis(m, size, table=table)
    if size is None:
        raise DimensionError("Gamma bases need an explicit size")
    size = int(size)
    if size < 1 or size > GAMMA_TRUNCATION_CAP:
        raise DimensionError(f"Gamma basis size {size} not in 1..{GAMMA_TRUNCATION_CAP}")
    return OrthonormalBasis(m, size, coefficients=_laguerre_monomials(m, size))


def single_site_table(m: Marginal, f: Callable | Sequence) -> np.ndarray:
    """Tabulate a single-site function over the atoms of a finite marginal."""
    return _finite_values(m, f)
