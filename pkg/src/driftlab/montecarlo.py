"""Brownian path simulation and the stochastic estimators built on it:
chopped-path construction, the quadratic-case closed-form estimator
(1/n) log E exp(n F), drift-insertion lower bounds, least-squares backward
regression for the scaled BSDE, and Brownian-bridge drift-moment checks.

Paths are generated in fixed-size blocks with per-block seed derivation
(seed, block index), so every estimate is bit-reproducible from
(seed, n_steps, n_paths, volatility) regardless of worker scheduling, and
memory stays bounded for million-path batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn

from . import generators as gen
from .variational import PathFunctional, RunningMax, TimeIntegral, evaluate_functional

__all__ = [
    "PathBatch",
    "FeedbackControl",
    "LsmcSolution",
    "BridgeMomentCheck",
    "chopped_paths",
    "log_mean_exp",
    "girsanov_lower_bound",
    "lsmc_bsde",
    "cramer_average",
    "simulate_bridge",
    "bridge_constant",
    "bridge_moment_check",
    "truncated_quadratic_moment",
]

BLOCK_PATHS = 1 << 14


@dataclass(frozen=True)
class PathBatch:
    """Simulation plan for n_paths Brownian paths on [0, 1] with n_steps steps.

    ``volatility`` multiplies the standard paths (it is the square root of
    the variance scale).  Increments are i.i.d. N(0, dt) and are produced
    block by block from seeds derived as (seed, block index).
    """

    n_steps: int
    n_paths: int
    seed: int
    volatility: float = 1.0

    def __post_init__(self):
        if self.n_steps < 1 or self.n_paths < 1:
            raise ValueError("need positive step and path counts")

    @property
    def dt(self):
        return 1.0 / self.n_steps

    @property
    def times(self):
        return np.linspace(0.0, 1.0, self.n_steps + 1)

    @property
    def n_blocks(self):
        return (self.n_paths + BLOCK_PATHS - 1) // BLOCK_PATHS

    def block_rng(self, block):
        return np.random.default_rng(np.random.SeedSequence((int(self.seed), int(block))))

    def iter_increments(self):
        """Yield per-block increment arrays of shape (block, n_steps)."""
        remaining = self.n_paths
        for b in range(self.n_blocks):
            size = min(BLOCK_PATHS, remaining)
            remaining -= size
            rng = self.block_rng(b)
            yield rng.standard_normal((size, self.n_steps)) * math.sqrt(self.dt)

    def iter_paths(self):
        """Yield per-block path arrays of shape (block, n_steps + 1)."""
        for inc in self.iter_increments():
            paths = np.empty((inc.shape[0], self.n_steps + 1))
            paths[:, 0] = 0.0
            np.cumsum(inc, axis=1, out=paths[:, 1:])
            if self.volatility != 1.0:
                paths *= self.volatility
            yield paths

    def paths(self):
        """All paths materialized; intended for small-to-medium batches."""
        return np.concatenate(list(self.iter_paths()), axis=0)


# ---------------------------------------------------------------------------
# Chopped paths
# ---------------------------------------------------------------------------

def chopped_paths(values, n):
    """Split paths with n*m steps into n Brownian-rescaled unit-time subpaths.

    Subpath k follows sqrt(n) times the increments of the source path over
    [(k-1)/n, k/n].  ``values`` has shape (..., n*m + 1); the result has
    shape (..., n, m + 1).
    """
    values = np.asarray(values, dtype=float)
    steps = values.shape[-1] - 1
    if steps % n:
        raise ValueError(f"step count {steps} not divisible by n={n}")
    m = steps // n
    inc = np.diff(values, axis=-1).reshape(values.shape[:-1] + (n, m))
    out = np.empty(values.shape[:-1] + (n, m + 1))
    out[..., 0] = 0.0
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    out *= math.sqrt(n)
    return out


# ---------------------------------------------------------------------------
# Streaming moments / log-sum-exp
# ---------------------------------------------------------------------------

class _StreamingLse:
    """Combine per-block (max, sum exp, sum exp^2) into global statistics."""

    def __init__(self):
        self.m = -np.inf
        self.s1 = 0.0
        self.s2 = 0.0
        self.count = 0

    def add(self, x):
        x = np.asarray(x, dtype=float)
        bm = float(x.max())
        m = max(self.m, bm)
        if m > self.m and self.count:
            shift = math.exp(self.m - m)
            self.s1 *= shift
            self.s2 *= shift * shift
        self.m = m
        e = np.exp(x - m)
        self.s1 += float(np.sum(e))
        self.s2 += float(np.sum(e * e))
        self.count += x.size

    def estimate(self, n_scale):
        mean = self.s1 / self.count
        var = max(self.s2 / self.count - mean * mean, 0.0)
        se = math.sqrt(var / self.count) / mean / n_scale
        value = (self.m + math.log(mean)) / n_scale
        return value, se


class _RunningMoments:
    def __init__(self):
        self.count = 0
        self.total = 0.0
        self.total_sq = 0.0

    def add(self, x):
        x = np.asarray(x, dtype=float)
        self.count += x.size
        self.total += float(np.sum(x))
        self.total_sq += float(np.sum(x * x))

    def mean_se(self):
        mean = self.total / self.count
        var = max(self.total_sq / self.count - mean * mean, 0.0)
        return mean, math.sqrt(var / self.count)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def log_mean_exp(F: PathFunctional, n: float, batch: PathBatch):
    """(1/n) log mean exp(n F(W / sqrt(n))) with a delta-method standard error.

    Valid as a drift-penalized value only in the quadratic case, where the
    penalty functional is the scaled cumulant generator.  The running
    log-sum-exp is max-shifted, so large n degrades the standard error
    rather than overflowing.
    """
    acc = _StreamingLse()
    scale = 1.0 / math.sqrt(n)
    for paths in batch.iter_paths():
        vals = np.asarray(evaluate_functional(F, batch.times, paths * scale), dtype=float)
        acc.add(n * vals)
    return acc.estimate(n)


@dataclass(frozen=True)
class FeedbackControl:
    """Bounded feedback drift q(t, history); progressively measurable because
    the evaluation rule only ever sees the simulated history up to t."""

    rule: Callable
    bound: float
    label: str = ""

    @classmethod
    def constant(cls, value):
        v = float(value)
        return cls(rule=lambda t, hist: np.full(hist.shape[0], v), bound=abs(v),
                   label=f"constant({v:g})")

    @classmethod
    def state_feedback(cls, fn, bound, label="state_feedback"):
        """Markov rule q(t, x) of the current state, clipped to the bound."""
        b = float(bound)
        return cls(
            rule=lambda t, hist: np.clip(fn(t, hist[:, -1]), -b, b),
            bound=b,
            label=label,
        )


def girsanov_lower_bound(
    F: PathFunctional,
    g: gen.GeneratorSpec,
    control: FeedbackControl,
    batch: PathBatch,
):
    """Monte Carlo mean of F(W + drift) - accumulated drift cost.

    Euler drift insertion on the batch grid; the result is a lower bound of
    the drift-penalized value of F up to Monte Carlo error.
    """
    dt = batch.dt
    times = batch.times
    acc = _RunningMoments()
    for inc in batch.iter_increments():
        size = inc.shape[0]
        x = np.zeros((size, batch.n_steps + 1))
        cost = np.zeros(size)
        for k in range(batch.n_steps):
            q = np.asarray(control.rule(times[k], x[:, : k + 1]), dtype=float)
            if np.any(np.abs(q) > control.bound + 1e-9):
                raise ValueError("control exceeded its declared bound")
            step_cost = np.asarray(gen.eval_g(g, times[k], q), dtype=float)
            if not np.all(np.isfinite(step_cost)):
                raise ValueError("control drifted outside the cost domain")
            cost += step_cost * dt
            x[:, k + 1] = x[:, k] + q * dt + batch.volatility * inc[:, k]
        vals = np.asarray(evaluate_functional(F, times, x), dtype=float) - cost
        acc.add(vals)
    return acc.mean_se()


def cramer_average(F: PathFunctional, n: int, batch: PathBatch):
    """(1/n) log mean exp(n F(average of the n chopped subpaths)).

    Requires the batch step count to be divisible by n; quadratic-case
    estimator like :func:`log_mean_exp` but driven by the block-average path.
    """
    steps = batch.n_steps
    if steps % n:
        raise ValueError(f"batch step count {steps} not divisible by n={n}")
    m = steps // n
    sub_times = np.linspace(0.0, 1.0, m + 1)
    acc = _StreamingLse()
    for paths in batch.iter_paths():
        avg = chopped_paths(paths, n).mean(axis=-2)
        vals = np.asarray(evaluate_functional(F, sub_times, avg), dtype=float)
        acc.add(n * vals)
    return acc.estimate(n)


# ---------------------------------------------------------------------------
# Least-squares backward regression for the scaled BSDE
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LsmcSolution:
    """Backward-regression solution ladder.

    ``y_coeffs`` / ``z_coeffs`` hold per-time regression coefficients on the
    feature basis described by ``basis``; ``y_ladder`` is the in-sample mean
    of the value process per time node; ``z_ladder`` the gradient proxy.
    """

    times: np.ndarray
    basis: str
    y_coeffs: list
    z_coeffs: list
    y0: float
    y_ladder: np.ndarray
    z_ladder: np.ndarray
    terminal_residual: float
    degree_fallbacks: int = 0


def _hat_features(x, n_knots):
    """Piecewise-linear hat features on quantile-spaced knots of x.

    Local bases keep the conditional-expectation projection bias small and
    the normal equations well conditioned, which global polynomials do not
    once the driver squares the regressed gradient.
    """
    knots = np.unique(np.quantile(x, np.linspace(0.0, 1.0, n_knots)))
    if knots.size < 2:
        return np.ones((x.size, 1))
    idx = np.clip(np.searchsorted(knots, x) - 1, 0, knots.size - 2)
    t = np.clip((x - knots[idx]) / (knots[idx + 1] - knots[idx]), 0.0, 1.0)
    rows = np.arange(x.size)
    out = np.zeros((x.size, knots.size))
    out[rows, idx] = 1.0 - t
    out[rows, idx + 1] = t
    return out


def _basis_matrix(stats, n_knots):
    if len(stats) == 1:
        return _hat_features(stats[0], n_knots)
    # two statistics: standardized total-degree-3 polynomials; the few
    # columns keep the gradient-regression variance (and with it the
    # convexity bias of the driver) small
    cols = [np.ones_like(stats[0])]
    standardized = []
    for s in stats:
        sd = float(np.std(s))
        standardized.append((s - float(np.mean(s))) / (sd if sd > 1e-12 else 1.0))
    a, b = standardized
    for d in range(1, 4):
        for i in range(d + 1):
            cols.append(a ** (d - i) * b ** i)
    return np.column_stack(cols)


def _regress(features, target):
    coef, _, rank, _ = np.linalg.lstsq(features, target, rcond=1e-10)
    return coef, rank


def _state_statistics(F, scaled_paths, times):
    """Statistic columns the terminal functional actually depends on."""
    state = scaled_paths
    if isinstance(F, RunningMax):
        runmax = np.maximum.accumulate(scaled_paths, axis=1)
        return lambda k: (state[:, k], runmax[:, k])
    if isinstance(F, TimeIntegral):
        dt = times[1] - times[0]
        mid = 0.5 * (scaled_paths[:, 1:] + scaled_paths[:, :-1]) * dt
        runint = np.concatenate(
            [np.zeros((scaled_paths.shape[0], 1)), np.cumsum(mid, axis=1)], axis=1
        )
        return lambda k: (state[:, k], runint[:, k])
    return lambda k: (state[:, k],)


def lsmc_bsde(
    F: PathFunctional,
    gstar: gen.ConjugateSpec,
    n: float,
    batch: PathBatch,
    basis_size: int = 35,
) -> LsmcSolution:
    """Backward least-squares scheme for the scaled BSDE value process.

    At each step the next value is regressed on local piecewise-linear
    features of the current state statistics (``basis_size`` quantile knots,
    tensorized when the functional needs two statistics); the gradient proxy
    comes from the martingale increment regression, and the driver
    g*(t, sqrt(n) Z) dt is added.  Rank-deficient regressions fall back to a
    coarser basis; zero-variance targets short-circuit to constants.
    """
    paths = batch.paths()
    times = batch.times
    dt = batch.dt
    scaled = paths / math.sqrt(n)
    stats_at = _state_statistics(F, scaled, times)
    inc = np.diff(paths, axis=1)

    y = np.asarray(evaluate_functional(F, times, scaled), dtype=float)
    sqrt_n = math.sqrt(n)
    m = batch.n_steps

    # certified truncations from the boundedness certificate: with a
    # nonnegative cost the value process stays inside the bounds of F, and
    # the accumulated driver cannot exceed the value spread; clipping the
    # regressed quantities there blocks the outlier feedback loop that the
    # convex driver would otherwise amplify backward in time
    lo, hi = F.bounds
    if np.isfinite(lo) and np.isfinite(hi):
        spread = max(hi - lo, 1e-12)
        z_cap = math.sqrt(8.0 * spread) if gen.is_quadratic_conjugate(gstar) else np.inf
    else:
        spread, z_cap = np.inf, np.inf

    y_coeffs, z_coeffs = [], []
    y_ladder = np.empty(m + 1)
    z_ladder = np.empty(m + 1)
    y_ladder[m] = float(y.mean())
    z_ladder[m] = 0.0
    fallbacks = 0
    terminal_residual = 0.0

    for k in range(m - 1, -1, -1):
        if k == 0:
            z_k = np.full(1, float(np.mean(y * inc[:, 0])) / dt)
            e_k = np.full(1, float(np.mean(y)))
            y_val = e_k + dt * np.asarray(gen.eval_gstar(gstar, times[k], sqrt_n * z_k))
            y = np.full_like(y, y_val[0])
            y_coeffs.insert(0, np.array([float(e_k[0])]))
            z_coeffs.insert(0, np.array([float(z_k[0])]))
            y_ladder[0] = y_val[0]
            z_ladder[0] = z_k[0]
            break
        if float(np.std(y)) < 1e-14:
            e_k = np.full_like(y, y.mean())
            z_k = np.zeros_like(y)
            y_coeffs.insert(0, np.array([float(y.mean())]))
            z_coeffs.insert(0, np.array([0.0]))
        else:
            size = basis_size
            while True:
                features = _basis_matrix(stats_at(k), size)
                coef_e, rank_e = _regress(features, y)
                e_k = features @ coef_e
                # centering the gradient target by the fitted conditional
                # mean is unbiased (the mean is measurable at time k) and
                # removes the O(1/dt) variance of the raw target
                coef_z, rank_z = _regress(features, (y - e_k) * inc[:, k] / dt)
                healthy = max(3, features.shape[1] // 4)
                if (min(rank_z, rank_e) >= healthy) or size <= 3:
                    break
                size = max(3, size // 2)
                fallbacks += 1
            z_k = features @ coef_z
            if k == m - 1:
                terminal_residual = float(np.sqrt(np.mean((y - e_k) ** 2)))
            y_coeffs.insert(0, coef_e)
            z_coeffs.insert(0, coef_z)
        if np.isfinite(spread):
            e_k = np.clip(e_k, lo, hi)
            if np.isfinite(z_cap):
                z_k = np.clip(z_k, -z_cap / sqrt_n, z_cap / sqrt_n)
        y = e_k + dt * np.asarray(gen.eval_gstar(gstar, times[k], sqrt_n * z_k))
        y_ladder[k] = float(np.mean(y))
        z_ladder[k] = float(np.mean(z_k))

    return LsmcSolution(
        times=times,
        basis=f"local-linear({basis_size} quantile knots) in state statistics",
        y_coeffs=y_coeffs,
        z_coeffs=z_coeffs,
        y0=float(y_ladder[0]),
        y_ladder=y_ladder,
        z_ladder=z_ladder,
        terminal_residual=terminal_residual,
        degree_fallbacks=fallbacks,
    )


# ---------------------------------------------------------------------------
# Brownian bridge drift moments
# ---------------------------------------------------------------------------

def simulate_bridge(x, y, epsilon, delta, n_paths, seed, time_grid):
    """Exact-marginal bridge simulation from x at 0 to y at delta.

    Sequential conditional-Gaussian transitions on an arbitrary increasing
    grid inside [0, delta]; no Euler bias in the marginals.
    """
    t = np.asarray(time_grid, dtype=float)
    if t[0] != 0.0 or t[-1] > delta + 1e-15:
        raise ValueError("time grid must start at 0 and stay inside [0, delta]")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xB1D6E)))
    w = np.empty((n_paths, t.size))
    w[:, 0] = x
    for i in range(t.size - 1):
        gap = delta - t[i]
        step = t[i + 1] - t[i]
        mean = w[:, i] + (y - w[:, i]) * step / gap
        var = epsilon * step * (delta - t[i + 1]) / gap
        if var > 0:
            w[:, i + 1] = mean + math.sqrt(var) * rng.standard_normal(n_paths)
        else:
            w[:, i + 1] = mean
    return w


def bridge_constant(r):
    """Constant of the bridge drift-moment bound, by numerical quadrature.

    Finite exactly for 1 < r < 2: it multiplies the r-th absolute Gaussian
    moment by the integral of (t / (1 - t))^(r/2) over (0, 1).
    """
    if not 1.0 < r < 2.0:
        raise ValueError(f"bound unavailable: the constant diverges for r={r:g} outside (1, 2)")
    abs_moment = 2.0 ** (r / 2.0) * gamma_fn((r + 1.0) / 2.0) / math.sqrt(math.pi)
    integral, _ = quad(lambda t: (t / (1.0 - t)) ** (r / 2.0), 0.0, 1.0)
    return 2.0 ** (r - 1.0) * abs_moment * integral


@dataclass(frozen=True)
class BridgeMomentCheck:
    empirical: float
    standard_error: float
    bound: float
    constant: float


def bridge_moment_check(x, y, epsilon, delta, r, batch: PathBatch) -> BridgeMomentCheck:
    """Empirical bridge drift moment E int |q|^r dt against its analytic bound.

    The drift of the bridge at time t is (y - W(t)) / (delta - t); the bound
    is K_r |y-x|^r delta^(1-r) + K_r delta^(1-r/2) epsilon^(r/2).
    """
    k_r = bridge_constant(r)
    bound = k_r * abs(y - x) ** r * delta ** (1.0 - r) + k_r * delta ** (1.0 - r / 2.0) * epsilon ** (r / 2.0)
    t = np.linspace(0.0, delta, batch.n_steps + 1)
    acc = _RunningMoments()
    remaining = batch.n_paths
    for b in range(batch.n_blocks):
        size = min(BLOCK_PATHS, remaining)
        remaining -= size
        w = simulate_bridge(x, y, epsilon, delta, size, batch.seed + b, t)
        drift = (y - w[:, :-1]) / (delta - t[:-1])
        acc.add(np.sum(np.abs(drift) ** r, axis=1) * (t[1] - t[0]))
    empirical, se = acc.mean_se()
    return BridgeMomentCheck(empirical=empirical, standard_error=se, bound=bound, constant=k_r)


def truncated_quadratic_moment(x, y, epsilon, delta, eta_list, n_paths, seed):
    """E of the integral of |drift|^2 up to delta - eta, per truncation eta.

    The time grid refines geometrically toward delta so the smallest
    truncation is resolved; the values diverge logarithmically as eta drops,
    which is the square-integrability failure of bridge drifts.
    """
    etas = sorted(float(e) for e in eta_list)
    eta_min = etas[0]
    coarse = np.linspace(0.0, delta / 2.0, 65)
    tail = delta - np.geomspace(delta / 2.0, eta_min, 257)
    t = np.unique(np.concatenate([coarse, tail]))
    w = simulate_bridge(x, y, epsilon, delta, n_paths, seed, t)
    drift_sq = ((y - w[:, :-1]) / (delta - t[:-1])) ** 2
    dt = np.diff(t)
    out = {}
    for eta in etas:
        mask = t[:-1] + dt <= delta - eta + 1e-15
        out[eta] = float(np.mean(np.sum(drift_sq[:, mask] * dt[mask], axis=1)))
    return out
