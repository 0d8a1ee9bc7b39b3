"""Hypothesis strategies and random builders shared by the test modules."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from gkdiff import LocalFunction, Marginal

bernoulli = Marginal.bernoulli()
three_point = Marginal.finite((0, 1, 2), ("1/4", "1/2", "1/4"))
uniform3 = Marginal.uniform((0, 1, 2))

marginals = st.sampled_from([bernoulli, three_point, uniform3, Marginal.finite((-1, 0.5, 3), (0.2, 0.3, 0.5))])
seeds = st.integers(0, 2**32 - 1)


def random_sites(rng, dim, radius, max_size):
    pool = [tuple(int(c) for c in p) for p in np.ndindex(*(2 * radius + 1,) * dim)]
    pool = [tuple(c - radius for c in p) for p in pool]
    size = int(rng.integers(1, max_size + 1))
    pick = rng.choice(len(pool), size=min(size, len(pool)), replace=False)
    return sorted(pool[i] for i in pick)


def random_function(marginal, sites, rng, dim=1, centered=True):
    vals = rng.standard_normal((marginal.size,) * len(sites))
    f = LocalFunction(marginal, sites, vals, dim=dim)
    return f.centered() if centered else f
