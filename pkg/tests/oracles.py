"""Reference computations that share no code with the package.

Everything here works from raw value tables and explicit configuration
enumeration, so agreement with the library is independent evidence.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl


def table_eval(sites, values, config):
    """Value of a dense table at ``config`` (mapping site -> atom index)."""
    return values[tuple(config[s] for s in sites)]


def enum_expect(fn, sites, weights):
    """``E[fn(config)]`` by summing over every configuration on ``sites``."""
    total = 0.0
    for idx in itertools.product(range(len(weights)), repeat=len(sites)):
        w = 1.0
        for i in idx:
            w *= weights[i]
        total += w * fn(dict(zip(sites, idx)))
    return total


def brute_seminorm(sites, values, weights, dim=1):
    """``sum_x (<tau_x f . f> - <f>^2)`` by enumeration over each union window.

    ``tau_x f`` reads the coordinates ``s + x`` (window moved by ``+x``).
    """
    sites = [tuple(s) for s in sites]
    values = np.asarray(values)
    mean = enum_expect(lambda c: table_eval(sites, values, c), sites, weights)
    shifts = {tuple(a - b for a, b in zip(s, t)) for s in sites for t in sites}
    total = 0.0
    for x in shifts:
        moved = [tuple(a + b for a, b in zip(s, x)) for s in sites]
        union = sorted(set(sites) | set(moved))

        def prod(c, moved=moved):
            shifted = {s: c[m] for s, m in zip(sites, moved)}
            return table_eval(sites, values, shifted) * table_eval(sites, values, c)

        total += enum_expect(prod, union, weights) - mean * mean
    return total


def gram_schmidt_table(atoms, weights):
    """Orthonormal polynomials on a finite law by the classical (unmodified) recursion."""
    atoms = np.asarray(atoms, float)
    w = np.asarray(weights, float)
    rows = []
    for k in range(len(atoms)):
        v = atoms ** k
        for r in rows:
            v = v - np.dot(w, v * r) * r
        rows.append(v / np.sqrt(np.dot(w, v * v)))
    return np.array(rows)


def ssep_two_site():
    """``(dirichlet_{0,1}(eta_0), chi)`` for unit-rate exchange on two sites, Bernoulli(1/2).

    ``L_{0,1} f(a, b) = 1/2 (f(b, a) - f(a, b))``.
    """
    p = Fraction(1, 2)
    w = {0: 1 - p, 1: p}
    dirichlet = Fraction(0)
    for a, b in itertools.product((0, 1), repeat=2):
        lf = Fraction(1, 2) * (b - a)
        dirichlet += w[a] * w[b] * (-lf) * a
    return dirichlet, p * (1 - p)


def gep_bond_action(kappa, a, b, f):
    """``L_{0,1} f`` at ``(eta_0, eta_1) = (a, b)`` for capacity-``kappa`` exclusion.

    A single particle hops each way at rate 1/2 when the source is
    occupied and the target is below capacity.
    """
    out = 0.0
    if a >= 1 and b <= kappa - 1:
        out += 0.5 * (f(a - 1, b + 1) - f(a, b))
    if b >= 1 and a <= kappa - 1:
        out += 0.5 * (f(a + 1, b - 1) - f(a, b))
    return out


def ring_diffusion_gep(N, kappa=2):
    """Exact finite-ring ``(D^s, D_N)`` for capacity-``kappa`` exclusion.

    Builds the full generator on ``{0..kappa}^N`` (hops at rate 1 across
    each bond in each allowed direction), solves ``(-G) u = J`` for the total
    current ``J`` and returns ``D_N = D^s - <J, u>/(chi N)``.
    """
    K = kappa + 1
    states = np.array(list(itertools.product(range(K), repeat=N)))
    pw = K ** np.arange(N - 1, -1, -1)
    code = states @ pw
    n = len(states)
    rows, cols = [], []
    J = np.zeros(n)
    activity = np.zeros(n)
    for x in range(N):
        y = (x + 1) % N
        a, b = states[:, x], states[:, y]
        right = (a >= 1) & (b <= kappa - 1)
        left = (b >= 1) & (a <= kappa - 1)
        for mask, tgt in ((right, code - pw[x] + pw[y]), (left, code + pw[x] - pw[y])):
            ii = np.nonzero(mask)[0]
            rows.extend(ii)
            cols.extend(tgt[ii])
        J += right.astype(float) - left.astype(float)
        activity += right.astype(float) + left.astype(float)
    G = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    G = G - sp.diags(np.asarray(G.sum(axis=1)).ravel())
    u = spl.minres(-G, J, rtol=1e-12, maxiter=50000)[0]
    chi = np.var(np.arange(K))
    ds = activity.mean() / N / (2 * chi)
    return ds, ds - (J @ u / n) / (chi * N)


def is_snake(path, lower, upper):
    """Bijection onto the box and unit steps between consecutive sites."""
    box = set(itertools.product(*[range(l, u + 1) for l, u in zip(lower, upper)]))
    if len(path) != len(box) or set(map(tuple, path)) != box:
        return False
    return all(sum(abs(a - b) for a, b in zip(p, q)) == 1 for p, q in zip(path, path[1:]))
