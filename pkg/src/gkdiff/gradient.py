"""Gradient-space membership and explicit gradient decompositions.

For a mean-zero local function ``f`` the seminorm
``||f||^2 = sum_x <f tau_x f>`` equals the sum over translation orbits of
the squared orbit sums of Fourier coefficients. ``f`` is a gradient,
``f = sum_a (tau^a g_a - g_a)``, exactly when every orbit sum vanishes, and
``decompose`` then builds the ``g_a`` orbit by orbit by telescoping the
shift profile along a unit-step Hamiltonian path of its bounding box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import CapacityError, InputError, NotGradientError, PreconditionError
from .local_fn import (
    LocalFunction,
    MultiIndex,
    add_sites,
    as_site,
    exact_values,
    exact_weights,
    full_expectation,
    inner,
    linear_combination,
    orbit_profiles,
    shift,
    sub_sites,
    unit,
)
from .measure_basis import OrthonormalBasis, build_basis

MEAN_TOLERANCE = 1e-12
ORBIT_TOLERANCE = 1e-10


def _require_centered(f: LocalFunction) -> None:
    if abs(f.mean) > MEAN_TOLERANCE:
        raise PreconditionError(f"function has mean {f.mean:.3e}; centre it first")


def orbit_sums(f: LocalFunction, basis: OrthonormalBasis | None = None) -> dict:
    """``{rep: sum_x f~_{tau_x rep}}`` over all orbits meeting the window."""
    return {rep: math.fsum(prof.values()) for rep, prof in orbit_profiles(f, basis).items()}


def seminorm_sq(f: LocalFunction, basis: OrthonormalBasis | None = None) -> float:
    """``||f||^2`` as the sum over orbits of squared coefficient sums."""
    _require_centered(f)
    return math.fsum(s * s for s in orbit_sums(f, basis).values())


def _overlap_shifts(f: LocalFunction, g: LocalFunction) -> list:
    # shifts x with (f.window + x) meeting g.window
    return sorted({sub_sites(t, s) for s in f.sites for t in g.sites})


def _exact_aligned(f: LocalFunction, union: tuple, offset) -> np.ndarray:
    k = f.marginal.size
    moved = {add_sites(s, offset) for s in f.sites}
    shape = tuple(k if s in moved else 1 for s in union)
    return np.broadcast_to(exact_values(f).reshape(shape), (k,) * len(union))


def seminorm_brute(f: LocalFunction, exact: bool = False):
    """Defining sum ``sum_x (<tau_x f . f> - <f>^2)`` over overlapping shifts.

    With ``exact=True`` the sum is done in rational arithmetic (the table
    entries are taken as exact binary fractions and the marginal must carry
    rational weights) and a :class:`~fractions.Fraction` is returned.
    """
    _require_centered(f)
    if not f.sites:
        return Fraction(0) if exact else 0.0
    shifts = _overlap_shifts(f, f)
    if not exact:
        mu2 = f.mean ** 2
        return math.fsum(inner(shift(f, x), f) - mu2 for x in shifts)
    w = exact_weights(f.marginal)
    base_union = f.sites
    mean = full_expectation(_exact_aligned(f, base_union, (0,) * f.dim), w)
    total = Fraction(0)
    for x in shifts:
        union = tuple(sorted(set(f.sites) | {add_sites(s, x) for s in f.sites}))
        prod = _exact_aligned(f, union, x) * _exact_aligned(f, union, (0,) * f.dim)
        total += full_expectation(np.asarray(prod), w) - mean * mean
    return total


# --------------------------------------------------------------------------- profiles
@dataclass(frozen=True)
class CoefficientProfile:
    """Finitely supported ``a: Z^d -> R``; zero entries are dropped."""

    entries: tuple
    dim: int = 1

    @classmethod
    def from_mapping(cls, mapping: Mapping, dim: int = 1) -> "CoefficientProfile":
        items = sorted((as_site(x, dim), float(v)) for x, v in mapping.items() if v != 0)
        return cls(tuple(items), dim)

    def as_dict(self) -> dict:
        return dict(self.entries)

    @property
    def support(self) -> tuple:
        return tuple(x for x, _ in self.entries)

    @property
    def total(self) -> float:
        return math.fsum(v for _, v in self.entries)

    @property
    def l2(self) -> float:
        return math.fsum(v * v for _, v in self.entries)

    @property
    def m_a(self) -> int:
        return min((c for x in self.support for c in x), default=0)

    @property
    def M_a(self) -> int:
        return max((c for x in self.support for c in x), default=0)

    @property
    def cube(self) -> tuple:
        """``Lambda_a``: hypercube ``[m_a, M_a]^d`` (shared bounds on every axis)."""
        return (self.m_a,) * self.dim, (self.M_a,) * self.dim

    @property
    def box(self) -> tuple:
        """Tightest axis-aligned box containing the support."""
        if not self.entries:
            return (0,) * self.dim, (0,) * self.dim
        sup = self.support
        return (tuple(min(x[a] for x in sup) for a in range(self.dim)),
                tuple(max(x[a] for x in sup) for a in range(self.dim)))

    @property
    def s_a(self) -> int:
        lo, hi = self.cube
        return math.prod(h - l + 1 for l, h in zip(lo, hi))

    @property
    def box_size(self) -> int:
        lo, hi = self.box
        return math.prod(h - l + 1 for l, h in zip(lo, hi))


def snake_path(lower: Sequence[int], upper: Sequence[int]) -> list:
    """Boustrophedon enumeration of the box ``lower <= x <= upper``.

    Axis 0 sweeps fastest and each higher-axis layer is traversed in the
    reverse order of the previous one, so consecutive sites differ by one
    unit lattice step.
    """
    lower, upper = tuple(lower), tuple(upper)
    if len(lower) != len(upper) or any(h < l for l, h in zip(lower, upper)):
        raise InputError("box bounds must satisfy lower <= upper on every axis")
    if len(lower) == 1:
        return [(x,) for x in range(lower[0], upper[0] + 1)]
    layer = snake_path(lower[:-1], upper[:-1])
    path = []
    for t, last in enumerate(range(lower[-1], upper[-1] + 1)):
        seq = layer if t % 2 == 0 else layer[::-1]
        path.extend(s + (last,) for s in seq)
    return path


def telescope_weights(a: CoefficientProfile, region: str = "cube",
                      tol: float | None = 1e-14) -> list:
    """Shift weights of the telescoping construction.

    Returns one list per axis ``alpha`` of ``(coefficient, site)`` pairs such
    that ``g_alpha = sum coefficient * tau_site h`` satisfies
    ``sum_alpha (tau^alpha g_alpha - g_alpha) = sum_x a_x tau_x h``.
    ``region`` selects the box traversed by the snake path: the hypercube
    ``Lambda_a`` (``"cube"``) or the tight bounding box (``"box"``).
    """
    per_axis: list = [[] for _ in range(a.dim)]
    if not a.entries:
        return per_axis
    if tol is not None and abs(a.total) > tol:
        raise NotGradientError(f"coefficients sum to {a.total:.3e}, not 0", orbit_sum=a.total)
    lower, upper = a.cube if region == "cube" else a.box
    path = snake_path(lower, upper)
    vals = a.as_dict()
    tail = np.cumsum([vals.get(x, 0.0) for x in reversed(path)])[::-1]  # tail[k] = sum_{l>=k}
    for k in range(1, len(path)):
        coef = float(tail[k])
        if coef == 0.0:
            continue
        step = sub_sites(path[k], path[k - 1])
        axis = next(i for i, c in enumerate(step) if c)
        if step[axis] == 1:
            per_axis[axis].append((coef, path[k - 1]))
        else:
            per_axis[axis].append((-coef, path[k]))
    return per_axis


def telescope_1d(a: CoefficientProfile, h: LocalFunction, tol: float = 1e-14) -> LocalFunction:
    """The unique mean-zero ``g`` with ``tau g - g = sum_x a_x tau_x h`` (d = 1).

    ``g = sum_{x=m}^{M} (sum_{y>=x} a_y) tau_{x-1} h``.
    """
    if a.dim != 1 or h.dim != 1:
        raise PreconditionError("telescope_1d is one-dimensional")
    _require_centered(h)
    if abs(a.total) > tol:
        raise NotGradientError(f"coefficients sum to {a.total:.3e}, not 0", orbit_sum=a.total)
    if not a.entries:
        return LocalFunction.constant(h.marginal, 0.0, dim=1)
    vals = a.as_dict()
    m, M = a.m_a, a.M_a
    terms = []
    for x in range(m, M + 1):
        weight = math.fsum(vals.get((y,), 0.0) for y in range(x, M + 1))
        if weight != 0.0:
            terms.append((weight, shift(h, x - 1)))
    return linear_combination(terms, h.marginal, 1)


def telescope_nd(a: CoefficientProfile, h: LocalFunction, region: str = "cube",
                 tol: float = 1e-14) -> list:
    """``(g_1..g_d)`` with ``sum_alpha (tau^alpha g_alpha - g_alpha) = sum_x a_x tau_x h``."""
    if a.dim != h.dim:
        raise InputError("profile and function dimensions differ")
    _require_centered(h)
    out = []
    for weights in telescope_weights(a, region, tol):
        terms = [(c, shift(h, x)) for c, x in weights]
        if terms:
            out.append(linear_combination(terms, h.marginal, h.dim))
        else:
            out.append(LocalFunction.constant(h.marginal, 0.0, dim=h.dim))
    return out


def gradient_of(components: Sequence[LocalFunction]) -> LocalFunction:
    """``sum_alpha (tau^alpha g_alpha - g_alpha)``."""
    g0 = components[0]
    dim = g0.dim
    terms = []
    for axis, g in enumerate(components):
        terms += [(1.0, shift(g, unit(dim, axis))), (-1.0, g)]
    return linear_combination(terms, g0.marginal, dim)


# --------------------------------------------------------------------------- decomposition
@dataclass
class GradientDecomposition:
    """Result of a successful :func:`decompose`."""

    components: list
    residual: float
    energy: float
    seminorm_sq: float
    orbits: int
    max_orbit_sum: float
    exact_verdict: bool = False
    construction: str = "per-orbit telescoping along a boustrophedon path of the tight box"

    def to_dict(self) -> dict:
        return {
            "verdict": "gradient",
            "seminorm_sq": self.seminorm_sq,
            "components": [g.to_dict() for g in self.components],
            "residual": self.residual,
            "energy": self.energy,
            "orbits": self.orbits,
            "max_orbit_sum": self.max_orbit_sum,
            "exact_verdict": self.exact_verdict,
            "construction": self.construction,
        }


def decompose(f: LocalFunction, tol: float = ORBIT_TOLERANCE, exact: bool = False,
              basis: OrthonormalBasis | None = None) -> GradientDecomposition:
    """Write a mean-zero ``f`` as ``sum_alpha (tau^alpha g_alpha - g_alpha)``.

    Every orbit sum of Fourier coefficients must vanish within ``tol``. With
    ``exact=True`` the verdict instead comes from the rational-arithmetic
    seminorm, so rounding can neither create nor hide a gradient.

    Raises
    ------
    NotGradientError
        Carries the orbit with the largest absolute sum as the witness.
    """
    _require_centered(f)
    basis = build_basis(f.marginal) if basis is None else basis
    profiles = orbit_profiles(f, basis)
    sums = {rep: math.fsum(p.values()) for rep, p in profiles.items()}
    total = math.fsum(s * s for s in sums.values())
    witness, worst = None, 0.0
    for rep, s in sums.items():
        if abs(s) > abs(worst) or witness is None:
            witness, worst = rep, s
    if exact:
        ok = seminorm_brute(f, exact=True) == 0
    else:
        ok = all(abs(s) <= tol for s in sums.values())
    if not ok:
        raise NotGradientError(
            f"not a gradient: orbit {witness} sums to {worst:.6g}",
            witness=witness, orbit_sum=worst, seminorm_sq=total)

    dim = f.dim
    coeffs: list = [dict() for _ in range(dim)]
    for rep, prof in profiles.items():
        per_axis = telescope_weights(CoefficientProfile.from_mapping(prof, dim), "box", tol=None)
        for axis, weights in enumerate(per_axis):
            bucket = coeffs[axis]
            for c, y in weights:
                key = rep.shift(y)
                bucket[key] = bucket.get(key, 0.0) + c
    comps = []
    for bucket in coeffs:
        if bucket:
            comps.append(LocalFunction.from_fourier(bucket, basis, dim=dim))
        else:
            comps.append(LocalFunction.constant(f.marginal, 0.0, dim=dim))
    try:
        residual = linear_combination([(1.0, f), (-1.0, gradient_of(comps))], f.marginal, dim).max_abs()
    except CapacityError:
        residual = _coefficient_residual(profiles, coeffs, basis, dim)
    energy = math.fsum(inner(g, g) for g in comps)
    return GradientDecomposition(
        components=comps, residual=residual, energy=energy, seminorm_sq=total,
        orbits=len(sums), max_orbit_sum=abs(worst), exact_verdict=exact)


def _coefficient_residual(profiles: dict, coeffs: list, basis: OrthonormalBasis, dim: int) -> float:
    """Sup-norm bound on ``f - grad`` from Fourier coefficients.

    Used when the union window of the components is too large to tabulate.
    """
    sup = np.max(np.abs(basis.evaluate_all(basis.marginal.atom_array())), axis=1)
    diff: dict = {}
    for rep, prof in profiles.items():
        for x, v in prof.items():
            key = rep.shift(x)
            diff[key] = diff.get(key, 0.0) + v
    for axis, bucket in enumerate(coeffs):
        e = unit(dim, axis)
        for n, v in bucket.items():
            up = n.shift(e)
            diff[up] = diff.get(up, 0.0) - v
            diff[n] = diff.get(n, 0.0) + v
    return math.fsum(abs(v) * math.prod(float(sup[j]) for _, j in n.entries) for n, v in diff.items())


def is_gradient(f: LocalFunction, tol: float = ORBIT_TOLERANCE, exact: bool = False) -> bool:
    try:
        decompose(f, tol=tol, exact=exact)
    except NotGradientError:
        return False
    return True


def report(f: LocalFunction, tol: float = ORBIT_TOLERANCE, exact: bool = False) -> dict:
    """JSON-ready verdict: a decomposition, or the witness of non-membership."""
    try:
        return decompose(f, tol=tol, exact=exact).to_dict()
    except NotGradientError as err:
        return {
            "verdict": "not-gradient",
            "seminorm_sq": err.seminorm_sq,
            "witness_orbit": err.witness.to_dict() if err.witness is not None else None,
            "witness_orbit_sum": err.orbit_sum,
        }
