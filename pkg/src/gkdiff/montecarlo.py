"""Continuous-time Monte Carlo on a ring of ``N`` sites.

Two families are simulated, both in lockstep over a batch of independent
trajectories:

* lattice gases built from a one-dimensional nearest-neighbour
  :class:`~gkdiff.dynamics.BondGenerator`, run by uniformization with the
  generator's own rate tables;
* the energy-exchange model with Gamma marginals, run event by event
  (Gillespie), where a bond with pair energy ``s`` fires at rate
  ``Lambda(s)`` and redistributes ``s`` with a Beta-distributed split.

Per trajectory we record on a uniform time grid the site values, the
integrated rightward flow ``X(t) = sum_x Q_x(t)`` and the instantaneous
expected total current ``J(t) = sum_x w_x(eta(t))``. From these:

* ``H(t) = E[(X(t0+t) - X(t0))^2]/N`` grows like ``2 chi D t``;
* ``C(t) = E[J(t0) J(t0+t)]/N`` gives ``D = D^s - (1/chi) int_0^inf C``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np
from scipy import integrate, stats

from .dynamics import BondGenerator
from .errors import DetailedBalanceError, InputError, QuadratureError, StatisticsError
from .measure_basis import GAMMA, Marginal, _laguerre_rule

DB_TOLERANCE = 1e-6


# --------------------------------------------------------------------------- kernels
@dataclass(frozen=True, eq=False)
class ExchangeKernel:
    """Pair-energy exchange: rate ``Lambda(s)``, new left share ``V s`` with ``V ~ Beta(alpha, beta)``."""

    name: str
    rate: Callable
    alpha: float
    beta: float
    rate_label: str = ""

    @classmethod
    def uniform(cls, rate: float = 1.0) -> "ExchangeKernel":
        return cls("uniform", lambda s, c=float(rate): np.full_like(np.asarray(s, float), c),
                   1.0, 1.0, f"const:{float(rate)}")

    @classmethod
    def sqrt_rate(cls, shape: float = 1.0) -> "ExchangeKernel":
        return cls("sqrt_rate", lambda s: np.sqrt(np.asarray(s, float)), float(shape), float(shape),
                   "sqrt")

    @classmethod
    def zero(cls) -> "ExchangeKernel":
        return cls("zero", lambda s: np.zeros_like(np.asarray(s, float)), 1.0, 1.0, "const:0")

    @classmethod
    def custom(cls, doc: Mapping) -> "ExchangeKernel":
        """``{"alpha":..,"beta":..,"rate_power":g,"rate_scale":c}``: ``Lambda(s) = c s^g``."""
        extra = set(doc) - {"alpha", "beta", "rate_power", "rate_scale"}
        if extra:
            raise InputError(f"unknown kernel keys {sorted(extra)}")
        a, b = float(doc.get("alpha", 1.0)), float(doc.get("beta", doc.get("alpha", 1.0)))
        g, c = float(doc.get("rate_power", 0.0)), float(doc.get("rate_scale", 1.0))
        if a <= 0 or b <= 0 or c < 0:
            raise InputError("kernel needs alpha, beta > 0 and rate_scale >= 0")
        return cls("custom", lambda s: c * np.power(np.asarray(s, float), g), a, b, f"{c}*s^{g}")

    @classmethod
    def from_config(cls, doc, shape: float = 1.0) -> "ExchangeKernel":
        if doc == "uniform":
            return cls.uniform()
        if doc == "sqrt_rate":
            return cls.sqrt_rate(shape)
        if isinstance(doc, Mapping) and set(doc) == {"custom"}:
            return cls.custom(doc["custom"])
        raise InputError(f"unknown kernel {doc!r}")

    @property
    def mean_fraction(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def split_moments(self) -> tuple[float, float]:
        a, b = self.alpha, self.beta
        return a / (a + b), a * (a + 1) / ((a + b) * (a + b + 1))

    def split_density(self, v):
        return stats.beta.pdf(v, self.alpha, self.beta)

    def to_dict(self) -> dict:
        return {"name": self.name, "alpha": self.alpha, "beta": self.beta, "rate": self.rate_label}


def check_detailed_balance(kernel: ExchangeKernel, marginal: Marginal, nodes: int = 24) -> float:
    """Worst relative asymmetry of ``nu(a)nu(b) W(a', b' | a, b)`` under the exchange map.

    Evaluated at Gauss-Laguerre nodes for the pair total and Gauss-Legendre
    nodes for the two shares. Raises :class:`DetailedBalanceError` above 1e-6.
    """
    if marginal.kind != GAMMA:
        raise InputError("energy-exchange kernels act on Gamma marginals")
    s_nodes, _ = _laguerre_rule(2 * marginal.shape - 1, nodes)
    s_nodes = s_nodes * marginal.temperature
    v_nodes = 0.5 * (np.polynomial.legendre.leggauss(nodes)[0] + 1.0)
    worst = 0.0
    for s in s_nodes:
        lam = float(np.asarray(kernel.rate(np.array([s])))[0])
        if lam == 0.0:
            continue
        v, w = np.meshgrid(v_nodes, v_nodes, indexing="ij")  # before share v, after share w
        a, b, a2, b2 = v * s, (1 - v) * s, w * s, (1 - w) * s
        lhs = marginal.pdf(a) * marginal.pdf(b) * lam * kernel.split_density(w)
        rhs = marginal.pdf(a2) * marginal.pdf(b2) * lam * kernel.split_density(v)
        scale = np.maximum(np.abs(lhs), np.abs(rhs))
        ok = scale > 0
        if ok.any():
            worst = max(worst, float((np.abs(lhs - rhs)[ok] / scale[ok]).max()))
    if worst > DB_TOLERANCE:
        raise DetailedBalanceError(
            f"kernel {kernel.name} is not reversible for {marginal.kind}(shape={marginal.shape}) "
            f"(relative asymmetry {worst:.3e})", invariant="detailed balance")
    return worst


def static_quadrature(kernel: ExchangeKernel, marginal: Marginal, nodes: int = 48,
                      rtol: float = 1e-8) -> dict:
    """``D^s = 2 D_{0,1}(eta_0)/chi`` for the energy-exchange model.

    ``D_{0,1}(eta_0) = (1/4) E[Lambda(s) E_split (a' - a)^2]``: the ordered bond
    operator runs at half the bond clock. Under the product measure the pair
    total ``s ~ Gamma(2k, T)`` and the share ``a/s ~ Beta(k, k)`` are
    independent, so every split average is a closed-form Beta moment and only
    ``E[Lambda(s) s^2]`` needs a 1D rule: Gauss-Laguerre at ``n`` and ``2n``
    nodes, with adaptive quadrature as fallback when the two disagree.
    """
    if marginal.kind != GAMMA:
        raise InputError("static_quadrature needs a Gamma marginal")
    m1, m2 = kernel.split_moments()
    k, temp = marginal.shape, marginal.temperature
    v1 = 0.5
    v2 = (k + 1) / (2 * (2 * k + 1))
    split = m2 - 2 * m1 * v1 + v2  # E[(V' - v)^2] with V' ~ kernel split, v ~ Beta(k, k)
    # E[Lambda(s) s^2] for s ~ Gamma(2k, T) equals T^2 (2k)(2k+1) E[Lambda(s')], s' ~ Gamma(2k+2, T)
    pre = temp * temp * (2 * k) * (2 * k + 1)

    def rule(n):
        x, w = _laguerre_rule(2 * k + 1, n)
        return pre * float(np.dot(w, np.asarray(kernel.rate(x * temp), float)))

    coarse, fine = rule(nodes), rule(2 * nodes)
    err = abs(fine - coarse)
    method = "quadrature"
    if err > rtol * max(abs(fine), 1e-300) and err > 1e-14:
        dist = stats.gamma(2 * k + 2, scale=temp)
        val, qerr = integrate.quad(lambda t: float(np.asarray(kernel.rate(np.array([t])))[0]) * dist.pdf(t),
                                   0, np.inf, epsabs=0.0, epsrel=rtol * 0.1, limit=400)
        fine, err = pre * val, pre * qerr
        method = "adaptive quadrature"
        if err > rtol * max(abs(fine), 1e-300) and err > 1e-14:
            raise QuadratureError(f"Dirichlet-form quadrature did not converge (error {err:.3e})",
                                  achieved=err)
    dirichlet = 0.25 * fine * split
    chi = marginal.variance()
    return {"dirichlet": dirichlet, "chi": chi, "Ds": 2 * dirichlet / chi,
            "error": 2 * 0.25 * err * abs(split) / chi, "method": method}


def static_mc(kernel: ExchangeKernel, marginal: Marginal, samples: int, seed: int) -> tuple[float, float]:
    """Independent MC estimate of ``D^s``: sample pairs and splits directly."""
    rng = np.random.Generator(np.random.Philox(seed))
    a = marginal.sample(rng, samples)
    b = marginal.sample(rng, samples)
    s = a + b
    a2 = rng.beta(kernel.alpha, kernel.beta, samples) * s
    vals = 0.25 * np.asarray(kernel.rate(s)) * (a2 - a) ** 2 * 2 / marginal.variance()
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


# --------------------------------------------------------------------------- ring models
@dataclass(frozen=True)
class RingState:
    N: int
    values: np.ndarray
    time: float


class LatticeRing:
    """Uniformized ring dynamics of a 1D nearest-neighbour bond generator."""

    kind = "lattice"

    def __init__(self, model: BondGenerator):
        if model.dim != 1 or len(model.rules) != 1 or model.rules[0].z != (1,):
            raise InputError("the ring simulator needs a one-dimensional nearest-neighbour model")
        self.model = model
        rule = model.rules[0]
        self.offsets = np.array([o[0] for o in rule.offsets])
        k = model.marginal.size
        self.k = k
        n_env = k ** len(self.offsets)
        q = 2.0 * np.asarray(rule.rates).reshape(n_env, k, k).copy()
        a_idx = np.indices((k,) * len(self.offsets)).reshape(len(self.offsets), -1)
        for e in range(n_env):
            q[e, a_idx[0, e], a_idx[1, e]] = 0.0
        exit_rate = q.reshape(n_env, -1).sum(axis=1)
        self.r_max = float(exit_rate.max())
        self.cdf = np.cumsum(q.reshape(n_env, -1), axis=1) / (self.r_max or 1.0)
        xi = np.asarray(model.xi, float)
        self.xi = xi
        moved = xi[a_idx[0]][:, None] - xi[np.arange(k)][None, :]  # xi_a - xi_a'
        self.w = np.einsum("eab,ea->e", q, moved)
        self.weights = np.power(k, np.arange(len(self.offsets))[::-1])
        w = model.marginal.weight_array()
        self.rho = float(w @ xi)
        self.chi = float(w @ (xi - self.rho) ** 2)

    def describe(self) -> dict:
        return dict(self.model.config)

    def initial(self, rng, b: int, n: int) -> np.ndarray:
        m = self.model.marginal
        return rng.choice(m.size, size=(b, n), p=m.weight_array()).astype(np.int64)

    def env(self, state: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        n = state.shape[1]
        if x is None:
            cols = (np.arange(n)[:, None] + self.offsets[None, :]) % n
            return np.tensordot(state[:, cols], self.weights, axes=([2], [0]))
        cols = (x[:, None] + self.offsets[None, :]) % n
        rows = np.arange(state.shape[0])[:, None]
        return state[rows, cols] @ self.weights

    def current(self, state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = self.w[self.env(state)]
        return w.sum(axis=1), np.abs(w).sum(axis=1)

    def observable(self, state: np.ndarray) -> np.ndarray:
        return self.xi[state]

    def run(self, rng, b: int, n: int, grid: np.ndarray, snapshots: bool) -> dict:
        state = self.initial(rng, b, n)
        rec = _Recorder(b, n, grid, snapshots, self, state)
        if self.r_max == 0:
            rec.finish(state)
            return rec.result(state)
        total = n * self.r_max
        t = np.zeros(b)
        rows = np.arange(b)
        k2 = self.k * self.k
        while True:
            t_new = t + rng.exponential(1.0 / total, size=b)
            rec.capture(state, t_new)
            active = rec.active
            if not active.any():
                break
            x = rng.integers(0, n, size=b)
            u = rng.random(b)
            e = self.env(state, x)
            out = (u[:, None] >= self.cdf[e]).sum(axis=1)
            move = active & (out < k2)
            if move.any():
                r = rows[move]
                xs, ys = x[move], (x[move] + 1) % n
                a2, b2 = np.divmod(out[move], self.k)
                flow = self.xi[state[r, xs]] - self.xi[a2]
                state[r, xs] = a2
                state[r, ys] = b2
                rec.flow[r] += flow
            t = t_new
        return rec.result(state)


class EnergyRing:
    """Energy exchange on a ring with Gamma(shape, T) marginals (Gillespie)."""

    kind = "energy"

    def __init__(self, kernel: ExchangeKernel, marginal: Marginal, check: bool = True):
        if marginal.kind != GAMMA:
            raise InputError("the energy-exchange model needs a Gamma marginal")
        self.kernel = kernel
        self.marginal = marginal
        self.db_defect = check_detailed_balance(kernel, marginal) if check else None
        self.rho = marginal.mean()
        self.chi = marginal.variance()

    def describe(self) -> dict:
        return {"model": "energy_exchange", "kernel": self.kernel.to_dict(),
                "shape": self.marginal.shape, "temperature": self.marginal.temperature}

    def initial(self, rng, b: int, n: int) -> np.ndarray:
        return self.marginal.sample(rng, (b, n))

    def _rates(self, state):
        return np.asarray(self.kernel.rate(state + np.roll(state, -1, axis=1)), float)

    def current(self, state: np.ndarray) -> np.ndarray:
        s = state + np.roll(state, -1, axis=1)
        lam = np.asarray(self.kernel.rate(s))
        w = lam * (state - self.kernel.mean_fraction * s)
        return w.sum(axis=1), (np.abs(lam) * (np.abs(state) + self.kernel.mean_fraction * s)).sum(axis=1)

    def observable(self, state: np.ndarray) -> np.ndarray:
        return state

    def run(self, rng, b: int, n: int, grid: np.ndarray, snapshots: bool) -> dict:
        state = self.initial(rng, b, n)
        rec = _Recorder(b, n, grid, snapshots, self, state)
        rows = np.arange(b)
        t = np.zeros(b)
        while True:
            lam = self._rates(state)
            cum = np.cumsum(lam, axis=1)
            tot = cum[:, -1]
            with np.errstate(divide="ignore"):
                dt = np.where(tot > 0, rng.exponential(1.0, size=b) / np.where(tot > 0, tot, 1.0), np.inf)
            if not np.all(np.isfinite(tot)):
                raise InputError("exchange rate overflow")
            t_new = t + dt
            rec.capture(state, t_new)
            active = rec.active & np.isfinite(t_new)
            if not active.any():
                break
            u = rng.random(b) * tot
            x = np.minimum((cum < u[:, None]).sum(axis=1), n - 1)
            y = (x + 1) % n
            r = rows[active]
            xs, ys = x[active], y[active]
            a = state[r, xs]
            s = a + state[r, ys]
            a2 = rng.beta(self.kernel.alpha, self.kernel.beta, size=r.size) * s
            state[r, xs] = a2
            state[r, ys] = s - a2
            rec.flow[r] += a - a2
            t = np.where(active, t_new, t)
        return rec.result(state)


class _Recorder:
    """Grid sampling of a lockstep batch: state before the first event past each grid time."""

    def __init__(self, b, n, grid, snapshots, model, state):
        self.grid = grid
        self.model = model
        g = grid.size
        self.ptr = np.zeros(b, dtype=np.int64)
        self.flow = np.zeros(b)
        self.X = np.zeros((b, g))
        self.J = np.zeros((b, g))
        self.Jabs = np.zeros((b, g))
        self.total = np.zeros((b, g))
        self.snap = np.zeros((b, g, n), dtype=state.dtype) if snapshots else None
        self.initial = state.copy()

    @property
    def active(self):
        return self.ptr < self.grid.size

    def capture(self, state, t_next):
        g = self.grid.size
        while True:
            idx = np.minimum(self.ptr, g - 1)
            need = (self.ptr < g) & (self.grid[idx] <= t_next)
            if not need.any():
                return
            r = np.nonzero(need)[0]
            p = self.ptr[r]
            sub = state[r]
            self.X[r, p] = self.flow[r]
            self.J[r, p], self.Jabs[r, p] = self.model.current(sub)
            self.total[r, p] = self.model.observable(sub).sum(axis=1)
            if self.snap is not None:
                self.snap[r, p] = sub
            self.ptr[r] += 1

    def finish(self, state):
        self.capture(state, np.full(state.shape[0], np.inf))

    def result(self, state):
        return {"X": self.X, "J": self.J, "Jabs": self.Jabs, "total": self.total, "snap": self.snap,
                "final": state.copy(), "initial": self.initial}


# --------------------------------------------------------------------------- runs
@dataclass
class RunData:
    """Grid-recorded equilibrium trajectories, grouped by statistical batch."""

    grid: np.ndarray
    N: int
    X: np.ndarray        # (traj, grid) integrated rightward flow
    J: np.ndarray        # (traj, grid) expected total current
    J_abs: np.ndarray    # (traj, grid) sum of |terms| entering J (rounding scale)
    total: np.ndarray    # (traj, grid) conserved total
    batch: np.ndarray    # (traj,) batch label
    snapshots: np.ndarray | None
    final: np.ndarray
    initial: np.ndarray
    rho: float
    chi: float
    meta: dict = field(default_factory=dict)

    @property
    def trajectories(self) -> int:
        return self.X.shape[0]

    @property
    def n_batches(self) -> int:
        return int(self.batch.max()) + 1

    def observable(self, model) -> np.ndarray:
        return model.observable(self.snapshots)


def ring_model(model) -> LatticeRing | EnergyRing:
    if isinstance(model, (LatticeRing, EnergyRing)):
        return model
    if isinstance(model, BondGenerator):
        return LatticeRing(model)
    raise InputError("unsupported model for the ring simulator")


def simulate(model, N: int, t_end: float, trajectories: int, seed: int, dt: float = 0.25,
             batches: int = 20, threads: int = 1, snapshots: bool = False) -> RunData:
    """Simulate ``trajectories`` independent equilibrium runs on a ring.

    Trajectories are split into ``batches`` groups, each with its own child
    seed, so results do not depend on ``threads``.
    """
    ring = ring_model(model)
    if N < 4:
        raise InputError("ring needs N >= 4")
    if batches < 2 or trajectories < batches:
        raise StatisticsError("need at least two batches with one trajectory each")
    if not (t_end > 0 and dt > 0):
        raise InputError("t_end and dt must be positive")
    grid = np.arange(0.0, t_end + 0.5 * dt, dt)
    sizes = [trajectories // batches + (1 if i < trajectories % batches else 0) for i in range(batches)]
    children = np.random.SeedSequence(seed).spawn(batches)

    def one(i):
        rng = np.random.Generator(np.random.Philox(children[i]))
        return ring.run(rng, sizes[i], N, grid, snapshots)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(batches)))
    else:
        parts = [one(i) for i in range(batches)]
    cat = lambda key: np.concatenate([p[key] for p in parts], axis=0)
    label = np.concatenate([np.full(s, i) for i, s in enumerate(sizes)])
    meta = {"N": N, "t_end": t_end, "dt": dt, "trajectories": trajectories, "batches": batches,
            "seed": seed, "rng": "Philox", "model": ring.describe()}
    return RunData(grid, N, cat("X"), cat("J"), cat("Jabs"), cat("total"), label,
                   cat("snap") if snapshots else None, cat("final"), cat("initial"),
                   ring.rho, ring.chi, meta)


def trajectory(model, N: int, t_end: float, seed: int, dt: float = 0.25) -> Iterator[RingState]:
    """Single trajectory as a stream of grid states."""
    ring = ring_model(model)
    grid = np.arange(0.0, t_end + 0.5 * dt, dt)
    rng = np.random.Generator(np.random.Philox(seed))
    out = ring.run(rng, 1, N, grid, True)
    for g, t in enumerate(grid):
        yield RingState(N, out["snap"][0, g].copy(), float(t))


# --------------------------------------------------------------------------- estimators
@dataclass
class CorrelationSeries:
    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    mode: str
    batch_values: np.ndarray
    chi: float
    meta: dict = field(default_factory=dict)
    floor: np.ndarray | None = None  # rounding bound on each value

    def to_rows(self) -> list:
        return [(float(t), float(v), float(e)) for t, v, e in zip(self.lags, self.values, self.stderr)]


def _batch_mean(per_traj: np.ndarray, labels: np.ndarray) -> np.ndarray:
    nb = int(labels.max()) + 1
    if nb < 2:
        raise StatisticsError("need at least two batches")
    return np.stack([per_traj[labels == i].mean(axis=0) for i in range(nb)])


def _se(batch_values: np.ndarray) -> np.ndarray:
    nb = batch_values.shape[0]
    return batch_values.std(axis=0, ddof=1) / math.sqrt(nb)


def _lag_count(run: RunData, max_lag: float | None) -> int:
    g = run.grid.size
    if max_lag is None:
        return g // 2
    dt = run.grid[1] - run.grid[0]
    k = int(round(max_lag / dt))
    if k >= g:
        raise InputError("lag range exceeds the simulated time")
    return k + 1


def current_autocorrelation(run: RunData, max_lag: float | None = None) -> CorrelationSeries:
    """``C(t) = E[J(t0) J(t0+t)]/N``, averaged over all time origins."""
    n_lag = _lag_count(run, max_lag)
    g = run.grid.size
    per = np.zeros((run.trajectories, n_lag))
    floor = np.zeros(n_lag)
    # forward error bound of an N-term sum of terms each carrying a few roundings
    err = (run.N + 4) * np.finfo(float).eps * run.J_abs
    aj = np.abs(run.J)
    for k in range(n_lag):
        per[:, k] = (run.J[:, : g - k] * run.J[:, k:]).mean(axis=1) / run.N
        floor[k] = float((aj[:, : g - k] * err[:, k:] + err[:, : g - k] * aj[:, k:]
                          + err[:, : g - k] * err[:, k:]).mean()) / run.N
    bv = _batch_mean(per, run.batch)
    return CorrelationSeries(run.grid[:n_lag], bv.mean(axis=0), _se(bv), "current-autocorrelation",
                             bv, run.chi, dict(run.meta), floor)


def displacement_series(run: RunData, max_lag: float | None = None) -> CorrelationSeries:
    """Helfand moment ``H(t) = E[(X(t0+t) - X(t0))^2]/N`` (multi-origin)."""
    n_lag = _lag_count(run, max_lag)
    g = run.grid.size
    per = np.zeros((run.trajectories, n_lag))
    for k in range(1, n_lag):
        d = run.X[:, k:] - run.X[:, : g - k]
        per[:, k] = (d * d).mean(axis=1) / run.N
    bv = _batch_mean(per, run.batch)
    return CorrelationSeries(run.grid[:n_lag], bv.mean(axis=0), _se(bv), "displacement",
                             bv, run.chi, dict(run.meta))


@dataclass
class SpatialCorrelation:
    lags: np.ndarray
    x: np.ndarray
    S: np.ndarray        # (lag, x)
    stderr: np.ndarray
    chi_exact: float

    def sum_rule(self) -> tuple[np.ndarray, np.ndarray]:
        return self.S.sum(axis=1), None


def estimate_S(run: RunData, model, max_lag: float | None = None, stride: int = 4) -> SpatialCorrelation:
    """``S(x,t) = E[xi_x(t) xi_0(0)] - rho^2`` averaged over the ring and time origins."""
    if run.snapshots is None:
        raise InputError("run was recorded without snapshots")
    ring = ring_model(model)
    obs = ring.observable(run.snapshots) - run.rho  # (traj, grid, N)
    n_lag = _lag_count(run, max_lag)
    g = run.grid.size
    f = np.fft.rfft(obs, axis=2)
    per = np.zeros((run.trajectories, n_lag, run.N))
    for k in range(n_lag):
        origins = np.arange(0, g - k, stride)
        prod = f[:, origins + k, :] * np.conj(f[:, origins, :])
        per[:, k, :] = np.fft.irfft(prod.mean(axis=1), n=run.N, axis=1) / run.N
    bv = _batch_mean(per, run.batch)
    x = np.arange(run.N)
    x = np.where(x > run.N // 2, x - run.N, x)
    return SpatialCorrelation(run.grid[:n_lag], x, bv.mean(axis=0), _se(bv), run.chi)


def S_sum_series(run: RunData, model, max_lag: float | None = None, stride: int = 4):
    """Batch values of ``sum_x S(x,t)`` for the conservation sum rule."""
    ring = ring_model(model)
    obs = ring.observable(run.snapshots) - run.rho
    n_lag = _lag_count(run, max_lag)
    g = run.grid.size
    tot = obs.sum(axis=2)
    per = np.zeros((run.trajectories, n_lag))
    for k in range(n_lag):
        origins = np.arange(0, g - k, stride)
        per[:, k] = (tot[:, origins + k] * tot[:, origins]).mean(axis=1) / run.N
    bv = _batch_mean(per, run.batch)
    return bv.mean(axis=0), _se(bv)


@dataclass
class Estimate:
    value: float
    stderr: float
    method: str = "monte-carlo"
    warnings: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "method": self.method,
                "warnings": list(self.warnings), **self.extra}


def moment_spreading_D(series: CorrelationSeries, window: tuple = (0.5, 1.0)) -> Estimate:
    """Late-window slope of ``H(t)/(2 chi)`` with batch-regression errors."""
    if series.mode != "displacement":
        raise InputError("moment spreading needs a displacement series")
    t = series.lags
    lo, hi = window[0] * t[-1], window[1] * t[-1]
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < 3:
        raise StatisticsError("fit window holds fewer than three lags")
    ts = t[sel]
    slopes = np.array([np.polyfit(ts, bv[sel], 1)[0] for bv in series.batch_values])
    slopes = slopes / (2 * series.chi)
    coef = np.polyfit(ts, series.values[sel], 1)
    fit = np.polyval(coef, ts)
    ss_res = float(((series.values[sel] - fit) ** 2).sum())
    ss_tot = float(((series.values[sel] - series.values[sel].mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    warn = []
    if r2 < 0.9:
        warn.append(f"no clear linear regime (R^2 = {r2:.3f})")
    return Estimate(float(slopes.mean()), float(slopes.std(ddof=1) / math.sqrt(slopes.size)),
                    warnings=warn, extra={"r2": r2, "window": [float(lo), float(hi)]})


def _integral(t, c):
    return float(np.trapezoid(c, t)) if hasattr(np, "trapezoid") else float(np.trapz(c, t))


def gk_dynamical_correction(series: CorrelationSeries, t_max: float | None = None) -> Estimate:
    """``-(1/chi) int_0^{t_max} C(t) dt`` by the trapezoid rule; exponential tail reported apart."""
    if series.mode != "current-autocorrelation":
        raise InputError("Green-Kubo integration needs a current autocorrelation series")
    t = series.lags
    sel = t <= (t[-1] if t_max is None else t_max)
    ts = t[sel]
    per_batch = np.array([-_integral(ts, bv[sel]) / series.chi for bv in series.batch_values])
    value = float(per_batch.mean())
    se_stat = float(per_batch.std(ddof=1) / math.sqrt(per_batch.size))
    rounding = _integral(ts, series.floor[sel]) / series.chi if series.floor is not None else 0.0
    se = math.hypot(se_stat, rounding)
    warn, tail, tau = [], 0.0, None
    c = series.values[sel]
    e = series.stderr[sel]
    significant = (c > 2 * e) & (c > 0)
    run = int(np.argmin(significant)) if not significant.all() else significant.size
    if run >= 3:
        k = np.arange(run)
        slope = np.polyfit(ts[k], np.log(c[k]), 1)[0]
        if slope < 0:
            tau = -1.0 / slope
            tail = -float(c[-1] * tau) / series.chi
            if tau > 0.5 * ts[-1]:
                warn.append(f"decay time {tau:.3g} comparable to t_max {ts[-1]:.3g}; tail may dominate")
    if c[-1] > 3 * e[-1] and c[-1] > 1e-12 * max(abs(c[0]), 1e-300):
        warn.append(f"C(t_max) = {c[-1]:.3e} is still {c[-1] / e[-1]:.1f} SE above zero; "
                    "t_max is shorter than the decay time, tail may dominate")
    if abs(tail) > max(se, 1e-15):
        warn.append(f"estimated tail {tail:.3e} exceeds the statistical error")
    return Estimate(value, se, warnings=warn,
                    extra={"stderr_statistical": se_stat, "rounding_bound": rounding,
                           "tail_estimate": tail, "decay_time": None if tau is None else float(tau), "t_max": float(ts[-1]),
                           "C0": float(series.values[0]), "C0_stderr": float(series.stderr[0])})


def ks_stationarity(run: RunData, marginal: Marginal, per_trajectory_sites: int = 1) -> float:
    """p-value that final single-site values follow ``marginal``.

    Uses one site per trajectory (independent samples): Kolmogorov-Smirnov
    for Gamma marginals, chi-square for finite ones.
    """
    vals = run.final[:, :per_trajectory_sites].ravel()
    if marginal.kind == GAMMA:
        return float(stats.kstest(vals, stats.gamma(marginal.shape, scale=marginal.temperature).cdf).pvalue)
    counts = np.bincount(vals.astype(int), minlength=marginal.size)
    expected = marginal.weight_array() * counts.sum()
    return float(stats.chisquare(counts, expected).pvalue)


@dataclass
class DiffusionEstimate:
    Ds_static: float
    Ds_method: str
    dynamical_correction: Estimate
    D_total: float
    moment_spreading_D: Estimate
    meta: dict

    def to_dict(self) -> dict:
        return {
            "Ds_static": {"value": self.Ds_static, "method": self.Ds_method},
            "dynamical_correction": self.dynamical_correction.to_dict(),
            "D_total": {"value": self.D_total, "method": "monte-carlo",
                        "stderr": self.dynamical_correction.stderr},
            "moment_spreading_D": self.moment_spreading_D.to_dict(),
            "run": self.meta,
        }


def static_value(model) -> tuple[float, str]:
    ring = ring_model(model)
    if isinstance(ring, LatticeRing):
        from .variational import static_D
        return float(static_D(ring.model)[0, 0]), "exact"
    return static_quadrature(ring.kernel, ring.marginal)["Ds"], "quadrature"


def diffusion_estimate(model, N: int, t_end: float, trajectories: int, seed: int, dt: float = 0.25,
                       batches: int = 20, threads: int = 1, max_lag: float | None = None) -> DiffusionEstimate:
    """Static part, MC Green-Kubo correction and MC moment-spreading ``D`` from one run."""
    ring = ring_model(model)
    run = simulate(ring, N, t_end, trajectories, seed, dt, batches, threads)
    ds, method = static_value(ring)
    corr = gk_dynamical_correction(current_autocorrelation(run, max_lag))
    ms = moment_spreading_D(displacement_series(run, max_lag))
    return DiffusionEstimate(ds, method, corr, ds + corr.value, ms, run.meta)
