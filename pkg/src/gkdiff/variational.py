"""Static diffusion matrix and the variational correction over finite bases.

The semi-inner product only sees a local function through its vector of
orbit sums ``P(f)[rep] = sum_x f~_{tau_x rep}``, and the generator commutes
with shifts, so ``<f|L f>`` depends on ``P(f)`` alone. The minimisation over
all mean-zero functions on the radius-``r`` window therefore reduces to a
problem over the orbits that fit in that window:

    inf_u { -2 b.u + u.(-A) u } = -b.(-A)^+ b,

with ``b = P(j_l)`` and ``A[p, q] = P(L phi_q)[p]``. ``L phi_q`` is assembled
bond by bond from small precomputed matrices of each bond operator in the
product basis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import BondGenerator
from .errors import (
    CapacityError,
    DegenerateMarginalError,
    InputError,
    PreconditionError,
    VariationalError,
)
from .gradient import orbit_sums, seminorm_sq
from .local_fn import (
    ENUMERATION_CAP,
    LocalFunction,
    MultiIndex,
    _canonical_entries,
    add_sites,
    cube_window,
    fourier,
    inner,
    linear_combination,
    shift,
    sub_sites,
)
from .dynamics import _rule_action
from .measure_basis import build_basis

KERNEL_THRESHOLD = 1e-10
POSITIVITY_TOLERANCE = 1e-9
CHI_TOLERANCE = 1e-14
# <j|(-L)^-1 j> with j_alpha summing the two bonds next to the origin is four
# times the per-bond current correlation entering the bulk coefficient.
CURRENT_NORMALISATION = 4.0
# dense eigendecomposition of the reduced form beyond this size is impractical
MAX_ORBITS = 6000


def semi_inner(f: LocalFunction, g: LocalFunction) -> float:
    """``<f|g> = sum_x (<tau_x f . g> - <f><g>)`` over overlapping shifts."""
    f._check_compatible(g)
    if not f.sites or not g.sites:
        return 0.0
    shifts = sorted({sub_sites(t, s) for s in f.sites for t in g.sites})
    mfg = f.mean * g.mean
    return math.fsum(inner(shift(f, x), g) - mfg for x in shifts)


def semi_inner_fourier(f: LocalFunction, g: LocalFunction) -> float:
    """Same form via orbit sums: ``P(f) . P(g)``."""
    pf, pg = orbit_sums(f), orbit_sums(g)
    return math.fsum(v * pg[k] for k, v in pf.items() if k in pg)


def compressibility(model: BondGenerator) -> float:
    """``chi = Var xi_0`` under the product measure."""
    w = model.marginal.weight_array()
    xi = np.asarray(model.xi, dtype=float)
    mu = float(w @ xi)
    return float(w @ (xi - mu) ** 2)


def static_D(model: BondGenerator) -> np.ndarray:
    """``D^s_ab = (1/chi) sum_z z_a z_b D_{0,z}(xi_0)``."""
    chi = compressibility(model)
    if chi <= CHI_TOLERANCE:
        raise DegenerateMarginalError(f"compressibility {chi:.3e} vanishes; D^s is undefined")
    d = model.dim
    out = np.zeros((d, d))
    xi0 = model.xi_function()
    for z in model.directions:
        dz = model.dirichlet(z, xi0)
        out += np.outer(z, z) * dz
    return out / chi


# --------------------------------------------------------------------------- orbit-space assembly
def orbit_reps(k: int, dim: int, radius: int) -> list:
    """Canonical orbit representatives having a translate inside the radius window."""
    window = cube_window(dim, radius).sites
    if k ** len(window) > ENUMERATION_CAP:
        raise CapacityError(f"{k}^{len(window)} multi-indices exceed the enumeration cap")
    reps = set()
    for idx in itertools.product(range(k), repeat=len(window)):
        entries = tuple((s, n) for s, n in zip(window, idx) if n)
        if entries:
            reps.add(_canonical_entries(entries)[1])
    return [MultiIndex(e, dim) for e in sorted(reps)]


def _bond_matrices(model: BondGenerator, basis) -> list:
    """Per rule: ``(rule, offsets, {in_entries: [(out_entries, value)]})`` relative to the origin."""
    out = []
    k = basis.size
    for r in model.rules:
        offs = r.offsets
        table = {}
        for idx in itertools.product(range(k), repeat=len(offs)):
            if idx[0] == 0 and idx[1] == 0:
                continue  # the bond operator annihilates functions of the environment
            n_in = MultiIndex(tuple(sorted((o, n) for o, n in zip(offs, idx) if n)), model.dim)
            phi = LocalFunction.basis_product(basis, n_in)
            image = _rule_action(r, (0,) * model.dim, phi)
            coeffs = [(n_out.entries, c) for n_out, c in fourier(image, basis).items()
                      if abs(c) > 1e-15]
            table[n_in.entries] = coeffs
        out.append((r, offs, table))
    return out


def _generator_orbit_image(n: MultiIndex, bond_data: list) -> dict:
    """``P(L phi_n)`` as ``{rep entries: value}`` (full generator, ordered pairs)."""
    img: dict = {}
    sup = set(n.support)
    vals = dict(n.entries)
    for r, offs, table in bond_data:
        origins = sup | {sub_sites(s, r.z) for s in sup}
        for x in origins:
            sites = [add_sites(x, o) for o in offs]
            if sites[0] not in sup and sites[1] not in sup:
                continue
            local = tuple(sorted((o, vals[s]) for o, s in zip(offs, sites) if s in vals))
            rest = [(s, v) for s, v in n.entries if s not in sites]
            for out_entries, c in table.get(local, ()):
                entries = tuple(sorted(rest + [(add_sites(o, x), v) for o, v in out_entries]))
                if not entries:
                    continue
                key = _canonical_entries(entries)[1]
                img[key] = img.get(key, 0.0) + 2.0 * c
    return img


@dataclass
class OrbitForm:
    """Reduced quadratic form of ``-L`` on the orbits fitting a radius-``r`` window."""

    radius: int
    reps: list
    matrix: np.ndarray  # A[p, q] = P(L phi_q)[p]
    span_dim: int
    eigenvalues: np.ndarray = field(repr=False, default=None)
    eigenvectors: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return len(self.reps)

    def index(self) -> dict:
        return {rep.entries: i for i, rep in enumerate(self.reps)}


def assemble(model: BondGenerator, radius: int) -> OrbitForm:
    if radius < 1:
        raise PreconditionError("basis radius must be >= 1")
    basis = build_basis(model.marginal)
    reps = orbit_reps(basis.size, model.dim, radius)
    if len(reps) > MAX_ORBITS:
        raise CapacityError(f"{len(reps)} orbits at radius {radius} exceed the cap {MAX_ORBITS}")
    pos = {rep.entries: i for i, rep in enumerate(reps)}
    bond_data = _bond_matrices(model, basis)
    a = np.zeros((len(reps), len(reps)))
    for q, rep in enumerate(reps):
        for key, val in _generator_orbit_image(rep, bond_data).items():
            p = pos.get(key)
            if p is not None:
                a[p, q] += val
    asym = float(np.abs(a - a.T).max()) if a.size else 0.0
    scale = max(1.0, float(np.abs(a).max())) if a.size else 1.0
    if asym > 1e-10 * scale:
        raise VariationalError(f"assembled form is not symmetric (defect {asym:.3e})")
    a = 0.5 * (a + a.T)
    lam, vec = np.linalg.eigh(-a)
    if lam.size and lam.min() < -POSITIVITY_TOLERANCE:
        raise VariationalError(
            f"<f|Lf> has a positive eigenvalue {-lam.min():.3e}; the generator is not nonpositive")
    span = basis.size ** len(cube_window(model.dim, radius).sites) - 1
    return OrbitForm(radius, reps, a, span, lam, vec)


def _orbit_vector(f: LocalFunction, form: OrbitForm) -> tuple[np.ndarray, float]:
    pos = form.index()
    b = np.zeros(form.dim)
    outside = 0.0
    for rep, s in orbit_sums(f).items():
        i = pos.get(rep.entries)
        if i is None:
            outside = max(outside, abs(s))
        else:
            b[i] = s
    return b, outside


@dataclass
class VariationalResult:
    """Correction to ``l^T D^s l`` from the best test function at radius ``r``."""

    radius: int
    direction: tuple
    Ds: np.ndarray
    static: float
    chi: float
    raw_infimum: float
    correction: float
    D: float
    kernel_dim: int
    reduced_dim: int
    reduced_kernel_dim: int
    span_dim: int
    minimizer: dict
    max_eigenvalue: float
    label: str = "upper bound at radius r"

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "direction": list(self.direction),
            "Ds": self.Ds.tolist(),
            "static": self.static,
            "chi": self.chi,
            "raw_infimum": self.raw_infimum,
            "correction": self.correction,
            "D_upper_bound": self.D,
            "kernel_dim": self.kernel_dim,
            "reduced_dim": self.reduced_dim,
            "span_dim": self.span_dim,
            "max_eigenvalue_of_form": self.max_eigenvalue,
            "label": self.label,
        }


def _solve(form: OrbitForm, b: np.ndarray) -> tuple[float, np.ndarray, int]:
    lam, vec = form.eigenvalues, form.eigenvectors
    if lam.size == 0:
        return 0.0, np.zeros(0), 0
    thr = KERNEL_THRESHOLD * max(float(lam.max()), 0.0)
    keep = lam > thr
    proj = vec.T @ b
    leak = float(np.abs(proj[~keep]).max()) if (~keep).any() else 0.0
    if leak > 1e-8 * max(1.0, float(np.abs(b).max())):
        raise VariationalError(
            f"linear term has a component {leak:.3e} along the kernel; the infimum is -inf")
    u = vec[:, keep] @ (proj[keep] / lam[keep])
    value = -float(np.dot(proj[keep], proj[keep] / lam[keep]))
    return value, u, int((~keep).sum())


def correction_matrix(model: BondGenerator, radius: int, form: OrbitForm | None = None) -> np.ndarray:
    """``C_ab`` with ``l^T C l`` the radius-``r`` correction for every direction ``l``."""
    form = assemble(model, radius) if form is None else form
    chi = compressibility(model)
    bs = [_orbit_vector(model.current(a), form)[0] for a in range(model.dim)]
    lam, vec = form.eigenvalues, form.eigenvectors
    thr = KERNEL_THRESHOLD * max(float(lam.max()), 0.0) if lam.size else 0.0
    keep = lam > thr
    proj = [vec.T @ b for b in bs]
    out = np.zeros((model.dim, model.dim))
    for i in range(model.dim):
        for j in range(model.dim):
            out[i, j] = -float(np.dot(proj[i][keep], proj[j][keep] / lam[keep]))
    return out / (CURRENT_NORMALISATION * chi)


def minimize(model: BondGenerator, direction: Sequence[float] | None = None, radius: int = 1,
             form: OrbitForm | None = None) -> VariationalResult:
    """Variational correction over all mean-zero functions on the radius-``r`` window.

    ``raw_infimum`` is ``inf_f {-2 <j_l|f> - <f|L f>}``; the reported
    ``correction`` divides it by ``4 chi`` (see the module constant) so that
    ``D = l^T D^s l + correction`` is the bulk coefficient's upper bound.
    """
    direction = tuple(float(c) for c in (direction or (1.0,) + (0.0,) * (model.dim - 1)))
    if len(direction) != model.dim:
        raise InputError("direction length must match the lattice dimension")
    ds = static_D(model)
    chi = compressibility(model)
    form = assemble(model, radius) if form is None else form
    j = model.current_along(direction)
    b, _ = _orbit_vector(j, form)
    raw, u, red_kernel = _solve(form, b)
    rank = form.dim - red_kernel
    l = np.asarray(direction)
    static = float(l @ ds @ l)
    corr = raw / (CURRENT_NORMALISATION * chi)
    lam = form.eigenvalues
    return VariationalResult(
        radius=radius, direction=direction, Ds=ds, static=static, chi=chi,
        raw_infimum=raw, correction=corr, D=static + corr,
        kernel_dim=form.span_dim - rank, reduced_dim=form.dim, reduced_kernel_dim=red_kernel,
        span_dim=form.span_dim,
        minimizer={rep: float(c) for rep, c in zip(form.reps, u) if abs(c) > 1e-14},
        max_eigenvalue=float(-lam.min()) if lam.size else 0.0)


def corrections_by_radius(model: BondGenerator, radii: Sequence[int],
                          direction: Sequence[float] | None = None) -> list:
    return [minimize(model, direction, r) for r in radii]


# --------------------------------------------------------------------------- oracles
def span_functions(model: BondGenerator, radius: int) -> list:
    """Centered basis products on the radius window (constants excluded)."""
    basis = build_basis(model.marginal)
    window = cube_window(model.dim, radius).sites
    out = []
    for idx in itertools.product(range(basis.size), repeat=len(window)):
        n = MultiIndex(tuple((s, v) for s, v in zip(window, idx) if v), model.dim)
        if not n.is_zero:
            out.append(LocalFunction.basis_product(basis, n))
    return out


def minimize_dense(model: BondGenerator, functions: Sequence[LocalFunction],
                   direction: Sequence[float] | None = None) -> tuple[float, int]:
    """Brute assembly of ``b_k = <j|f_k>``, ``A_kl = <f_k|L f_l>`` on explicit functions.

    Returns ``(raw infimum, kernel dimension)``. Independent of the orbit
    reduction; intended for small spans.
    """
    direction = tuple(direction or (1.0,) + (0.0,) * (model.dim - 1))
    j = model.current_along(direction)
    lf = [model.apply(f) for f in functions]
    n = len(functions)
    b = np.array([semi_inner(j, f) for f in functions])
    a = np.zeros((n, n))
    for p in range(n):
        for q in range(p, n):
            a[p, q] = a[q, p] = semi_inner(functions[p], lf[q])
    lam, vec = np.linalg.eigh(-a)
    thr = KERNEL_THRESHOLD * max(float(lam.max()), 0.0)
    keep = lam > thr
    proj = vec.T @ b
    return -float(np.dot(proj[keep], proj[keep] / lam[keep])), int((~keep).sum())


def probe_infimum(model: BondGenerator, direction: Sequence[float] | None = None) -> float:
    """``inf_c {-2c <j|j> - c^2 <j|L j>}`` over multiples of the current itself."""
    direction = tuple(direction or (1.0,) + (0.0,) * (model.dim - 1))
    j = model.current_along(direction)
    jj = semi_inner(j, j)
    jlj = semi_inner(j, model.apply(j))
    if jlj >= 0:
        return 0.0
    return -jj * jj / (-jlj)


@dataclass
class Lemma2Report:
    current_seminorm: float
    corrections: dict
    consistent: bool
    note: str

    def to_dict(self) -> dict:
        return {"current_seminorm_sq": self.current_seminorm,
                "correction_by_radius": {str(k): v for k, v in self.corrections.items()},
                "consistent": self.consistent, "note": self.note}


def lemma2_check(model: BondGenerator, radii: Sequence[int] = (1, 2), tol: float = 1e-10) -> Lemma2Report:
    """Compare current seminorms with radius-indexed corrections.

    A strictly positive ``<j|j>`` must come with a strictly negative
    correction at some finite radius (the current itself is a feasible test
    function once the window contains it); a vanishing one with zero
    corrections.
    """
    jj = max(seminorm_sq(model.current(a).centered()) for a in range(model.dim))
    corr, monotone, prev = {}, True, None
    for r in radii:
        worst = min(minimize(model, tuple(1.0 if i == a else 0.0 for i in range(model.dim)), r).correction
                    for a in range(model.dim))
        corr[r] = worst
        if prev is not None and worst > prev + 1e-12:
            monotone = False
        prev = worst
    if jj > tol:
        ok = any(c < -tol for c in corr.values())
        note = "current is not a gradient; some radius gives a strictly negative correction"
    else:
        ok = all(abs(c) <= tol for c in corr.values())
        note = "current is a gradient; every correction vanishes"
    return Lemma2Report(jj, corr, ok and monotone,
                        note + ("" if monotone else "; corrections are not monotone in r"))
