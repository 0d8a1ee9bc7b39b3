"""Invariant suite behind ``gkdiff selftest``.

Each check returns ``(name, passed, detail)``; nothing raises except for
malformed input, so a failing invariant shows up as a row of the matrix.
"""

from __future__ import annotations

import numpy as np

from . import gradient, montecarlo, variational
from .dynamics import make_gep, make_ssep, make_zero_range, self_check
from .errors import GKDiffError
from .local_fn import LocalFunction, shift, unit
from .measure_basis import Marginal

SEED = 20240611


def random_function(marginal: Marginal, sites, rng, dim: int = 1, centered: bool = True) -> LocalFunction:
    """Gaussian value table on ``sites``; centered under the product measure by default."""
    f = LocalFunction(marginal, sites, rng.standard_normal((marginal.size,) * len(sites)), dim=dim)
    return f.centered() if centered else f


def random_gradient(marginal: Marginal, rng, dim: int = 1, width: int = 2) -> LocalFunction:
    """``sum_alpha (tau^alpha g_alpha - g_alpha)`` for random local ``g_alpha``."""
    total = None
    for a in range(dim):
        sites = sorted({tuple(int(c) for c in rng.integers(0, width, size=dim)) for _ in range(2)})
        g = random_function(marginal, sites, rng, dim=dim, centered=False)
        term = shift(g, unit(dim, a)) - g
        total = term if total is None else total + term
    return total.trim()


def _models():
    return [("ssep", make_ssep()), ("gep(2)", make_gep(2)), ("gep(3)", make_gep(3)),
            ("zero_range(k,3)", make_zero_range("linear", 3))]


def _guard(name, fn):
    try:
        ok, detail = fn()
    except GKDiffError as exc:
        return name, False, f"{type(exc).__name__}: {exc}"
    return name, bool(ok), detail


def _generator_rows():
    rows = []
    for label, model in _models():
        def check(model=model):
            rep = self_check(model)
            return True, "worst defect {:.1e}".format(max(rep.values()))
        rows.append(_guard(f"generator[{label}]", check))
    return rows


def _norm_equivalence(marginal, rng, cases=20):
    worst = 0.0
    for _ in range(cases):
        size = int(rng.integers(1, 4))
        sites = sorted({(int(v),) for v in rng.choice(np.arange(-2, 3), size=size, replace=False)})
        f = random_function(marginal, sites, rng)
        worst = max(worst, abs(gradient.seminorm_sq(f) - gradient.seminorm_brute(f)))
    return worst <= 1e-10, f"max |fourier - brute| = {worst:.1e}"


def _round_trip(marginal, rng, cases=20):
    worst = 0.0
    for _ in range(cases):
        f = random_gradient(marginal, rng)
        d = gradient.decompose(f)
        worst = max(worst, d.residual)
    return worst <= 1e-10, f"max residual = {worst:.1e}"


def _witness(marginal, rng, cases=10):
    bad = 0
    for _ in range(cases):
        f = random_gradient(marginal, rng) + random_function(marginal, [(0,)], rng)
        if gradient.is_gradient(f):
            bad += 1
    return bad == 0, f"{cases - bad}/{cases} perturbed gradients rejected"


def _corollary():
    ssep = variational.minimize(make_ssep(), radius=2)
    gep = variational.minimize(make_gep(2), radius=1)
    ok = abs(ssep.correction) <= 1e-10 and abs(ssep.D - 1.0) <= 1e-10 and gep.correction < 0
    return ok, f"ssep correction {ssep.correction:.1e}, gep(2) correction {gep.correction:.4f}"


def _kernel_rows(inject: bool):
    exp1 = Marginal.gamma(1.0, 1.0)
    kernels = [("uniform", montecarlo.ExchangeKernel.uniform(), exp1),
               ("sqrt_rate", montecarlo.ExchangeKernel.sqrt_rate(1.0), exp1)]
    if inject:
        kernels.append(("asymmetric Beta(2,1)",
                        montecarlo.ExchangeKernel.custom({"alpha": 2.0, "beta": 1.0}), exp1))
    rows = []
    for label, kernel, marg in kernels:
        def check(kernel=kernel, marg=marg):
            defect = montecarlo.check_detailed_balance(kernel, marg)
            return True, f"relative defect {defect:.1e}"
        rows.append(_guard(f"detailed balance[{label}]", check))
    return rows


def run_selftest(inject_asymmetric_kernel: bool = False, marginal: dict | None = None) -> list:
    rng = np.random.default_rng(SEED)
    marg = Marginal.from_dict(marginal) if marginal else Marginal.uniform([0, 1, 2])
    if not marg.is_finite:
        marg = Marginal.uniform([0, 1, 2])
    rows = _generator_rows()
    rows.append(_guard("seminorm fourier = brute", lambda: _norm_equivalence(marg, rng)))
    rows.append(_guard("decomposition round-trip", lambda: _round_trip(marg, rng)))
    rows.append(_guard("non-gradient witness", lambda: _witness(marg, rng)))
    rows.append(_guard("gradient <=> zero correction", _corollary))
    rows.extend(_kernel_rows(inject_asymmetric_kernel))
    return rows
