"""Discrete-state stochastic transport toward a prescribed terminal law.

Routes implemented here:

* an exact Kantorovich oracle on finite atoms (transportation simplex, with
  the monotone quantile coupling as the +inf-aware shortcut that is optimal
  for convex displacement costs);
* the quadratic-case Sinkhorn solver in log domain, valued in the
  heat-kernel reference convention so the number is directly the expected
  drift cost of the bridge;
* a drift-field solver for general convex costs: explicit diffuse-advect
  marching of the state law with an exact terminal repair by monotone
  rearrangement, optimized by projected gradient with adjoint derivatives;
* the mollifier of the target law and the small-noise sweep over both the
  mollified and raw-target modes.

Raw (un-mollified) atomic targets are reachable only when the cost grows
strictly slower than quadratically; for quadratic or faster growth the
continuum problem is infeasible for atomic targets at every positive noise
level, and the solver reports that upfront instead of burning iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from . import generators as gen
from .parallel import run_parallel
from .report import ConvergenceReport, ReportRow

__all__ = [
    "DiscreteMeasure",
    "TransportInstance",
    "FlowSolution",
    "SinkhornSolution",
    "make_state_grid",
    "mollify",
    "monotone_coupling",
    "transport_simplex",
    "ot_oracle",
    "heat_kernel_matrix",
    "sinkhorn_bridge",
    "solve_transport",
    "small_noise_sweep",
]


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely many weighted atoms on the line, normalized to mass one."""

    support: tuple
    weights: tuple

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if s.ndim != 1 or s.shape != w.shape or s.size == 0:
            raise ValueError("need matching non-empty support and weights")
        if np.any(w < -1e-15):
            raise ValueError("weights must be nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {total!r})")
        object.__setattr__(self, "support", tuple(float(x) for x in s))
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @classmethod
    def point(cls, x):
        return cls(support=(float(x),), weights=(1.0,))

    @classmethod
    def from_arrays(cls, support, weights, renormalize=False):
        w = np.asarray(weights, dtype=float)
        if renormalize:
            w = w / w.sum()
        return cls(support=tuple(np.asarray(support, dtype=float)), weights=tuple(w))

    def mean(self):
        return float(np.dot(self.support, self.weights))

    def variance(self):
        m = self.mean()
        return float(np.dot((np.asarray(self.support) - m) ** 2, self.weights))

    def sorted(self):
        order = np.argsort(self.support)
        return DiscreteMeasure(
            support=tuple(np.asarray(self.support)[order]),
            weights=tuple(np.asarray(self.weights)[order]),
        )


# ---------------------------------------------------------------------------
# Grids and mollification
# ---------------------------------------------------------------------------

def make_state_grid(mu: DiscreteMeasure, nu: DiscreteMeasure, epsilon, *,
                    slack_stds=7.0, points_cap=1500, min_points=101):
    """Uniform grid covering both supports plus diffusion slack, with every
    atom snapped onto an exact node."""
    atoms = np.concatenate([np.asarray(mu.support), np.asarray(nu.support)])
    std = math.sqrt(max(epsilon, 1e-12))
    lo = atoms.min() - slack_stds * std - 0.05
    hi = atoms.max() + slack_stds * std + 0.05
    h = std / 4.0
    n = int(np.ceil((hi - lo) / h)) + 1
    n = int(np.clip(n, min_points, points_cap))
    grid = np.linspace(lo, hi, n)
    for a in np.unique(atoms):
        grid[int(np.argmin(np.abs(grid - a)))] = a
    return np.unique(grid)


def _cell_edges(grid):
    mids = 0.5 * (grid[1:] + grid[:-1])
    return np.concatenate([[-np.inf], mids, [np.inf]])


def mollify(nu: DiscreteMeasure, epsilon, out_grid):
    """Convolve the target with a centered Gaussian of variance epsilon and
    project onto the grid by exact cell masses.

    Returns the renormalized measure and the truncation loss; a loss above
    1e-6 means the grid is too narrow and raises.
    """
    if epsilon <= 0:
        raise ValueError("mollification needs epsilon > 0")
    grid = np.asarray(out_grid, dtype=float)
    std = math.sqrt(epsilon)
    cell_masses = heat_kernel_matrix(np.asarray(nu.support), grid, epsilon)
    w = np.asarray(nu.weights) @ cell_masses
    # outer edges stretch to +-inf, so the projection keeps all mass; the
    # truncation loss is what would have fallen beyond the grid body
    tail = ndtr((grid[0] - np.asarray(nu.support)) / std) + 1.0 - ndtr(
        (grid[-1] - np.asarray(nu.support)) / std
    )
    loss = float(np.dot(nu.weights, tail))
    if loss > 1e-6:
        raise ValueError(f"grid too narrow for mollification: boundary mass {loss:.3g}")
    w = np.maximum(w, 0.0)
    w /= w.sum()
    return DiscreteMeasure(support=tuple(grid), weights=tuple(w)), loss


# ---------------------------------------------------------------------------
# Exact optimal transport
# ---------------------------------------------------------------------------

def monotone_coupling(mu: DiscreteMeasure, nu: DiscreteMeasure):
    """Quantile (north-west on sorted atoms) coupling; optimal for costs
    c(x, y) = g(y - x) with convex g, including +inf values."""
    ms, ns = mu.sorted(), nu.sorted()
    a = list(zip(ms.support, ms.weights))
    b = list(zip(ns.support, ns.weights))
    plan = []
    i = j = 0
    ra, rb = a[0][1], b[0][1]
    while True:
        take = min(ra, rb)
        if take > 0 or not plan:
            plan.append((a[i][0], b[j][0], take))
        ra -= take
        rb -= take
        if ra <= 1e-15:
            i += 1
            if i == len(a):
                break
            ra = a[i][1]
        if rb <= 1e-15:
            j += 1
            if j == len(b):
                break
            rb = b[j][1]
    return plan


def _plan_cost(plan, g):
    total = 0.0
    for x, y, m in plan:
        if m <= 0:
            continue
        c = float(np.asarray(gen.eval_g(g, 0.0, y - x)))
        if math.isinf(c):
            return math.inf
        total += m * c
    return total


def transport_simplex(a, b, cost, max_iter=None):
    """Exact balanced transportation problem by the MODI simplex method.

    ``a`` and ``b`` are nonnegative weights with equal sums; ``cost`` is the
    finite (m x n) cost matrix.  Returns (value, flow matrix).
    """
    a = np.asarray(a, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    if not np.all(np.isfinite(cost)):
        raise ValueError("simplex needs finite costs")
    if abs(a.sum() - b.sum()) > 1e-9:
        raise ValueError("unbalanced instance")
    max_iter = max_iter or 40 * (m + n) ** 2

    # north-west corner start with a degenerate-safe spanning basis
    flow = {}
    basis = []
    i = j = 0
    ra, rb = a[0], b[0]
    while True:
        take = min(ra, rb)
        flow[(i, j)] = take
        basis.append((i, j))
        ra -= take
        rb -= take
        if i == m - 1 and j == n - 1:
            break
        if ra <= rb and i < m - 1:
            i += 1
            ra = a[i]
        else:
            j += 1
            rb = b[j]

    def duals():
        u = np.full(m, np.nan)
        v = np.full(n, np.nan)
        u[basis[0][0]] = 0.0
        todo = list(basis)
        while todo:
            progressed = False
            rest = []
            for (bi, bj) in todo:
                if not np.isnan(u[bi]) and np.isnan(v[bj]):
                    v[bj] = cost[bi, bj] - u[bi]
                    progressed = True
                elif np.isnan(u[bi]) and not np.isnan(v[bj]):
                    u[bi] = cost[bi, bj] - v[bj]
                    progressed = True
                elif np.isnan(u[bi]) and np.isnan(v[bj]):
                    rest.append((bi, bj))
            todo = rest if progressed else []
        return u, v

    def find_cycle(enter):
        # alternate row/column moves through basic cells back to the start
        by_row = {}
        by_col = {}
        for (bi, bj) in basis + [enter]:
            by_row.setdefault(bi, []).append((bi, bj))
            by_col.setdefault(bj, []).append((bi, bj))
        stack = [(enter, [enter], True)]
        while stack:
            (ci, cj), path, move_in_row = stack.pop()
            neighbors = by_row.get(ci, []) if move_in_row else by_col.get(cj, [])
            for cell in neighbors:
                if cell == (ci, cj):
                    continue
                if cell == enter and len(path) >= 4 and not move_in_row:
                    return path
                if cell in path:
                    continue
                stack.append((cell, path + [cell], not move_in_row))
        raise RuntimeError("no pivot cycle found (corrupt basis)")

    for _ in range(max_iter):
        u, v = duals()
        reduced = cost - u[:, None] - v[None, :]
        for (bi, bj) in basis:
            reduced[bi, bj] = 0.0
        enter = np.unravel_index(np.argmin(reduced), reduced.shape)
        if reduced[enter] >= -1e-11:
            value = sum(cost[c] * f for c, f in flow.items())
            dense = np.zeros((m, n))
            for (ci, cj), f in flow.items():
                dense[ci, cj] = f
            return float(value), dense
        cycle = find_cycle(tuple(enter))
        odd = cycle[1::2]
        theta = min(flow[c] for c in odd)
        leave = next(c for c in odd if flow[c] <= theta)
        flow[tuple(enter)] = flow.get(tuple(enter), 0.0)
        for k, c in enumerate(cycle):
            flow[c] = flow[c] + theta if k % 2 == 0 else max(flow[c] - theta, 0.0)
        basis.append(tuple(enter))
        basis.remove(leave)
        del flow[leave]
    raise RuntimeError("transportation simplex iteration cap exceeded")


def ot_oracle(mu: DiscreteMeasure, nu: DiscreteMeasure, g):
    """Exact optimal transport value for cost g(y - x) plus a coupling.

    The monotone quantile coupling gives the optimum for convex g and is the
    only route when the cost takes +inf; finite instances are additionally
    pushed through the transportation simplex, which certifies the value.
    """
    plan = monotone_coupling(mu, nu)
    mono_value = _plan_cost(plan, g)
    xs = np.asarray(mu.support)
    ys = np.asarray(nu.support)
    cost = np.asarray(gen.eval_g(g, 0.0, ys[None, :] - xs[:, None]), dtype=float)
    if math.isinf(mono_value) or not np.all(np.isfinite(cost)):
        return mono_value, plan
    value, dense = transport_simplex(mu.weights, nu.weights, cost)
    coupling = [
        (xs[i], ys[j], dense[i, j])
        for i in range(xs.size)
        for j in range(ys.size)
        if dense[i, j] > 1e-15
    ]
    return float(value), coupling


# ---------------------------------------------------------------------------
# Quadratic case: log-domain Sinkhorn in the heat-kernel convention
# ---------------------------------------------------------------------------

def log_heat_kernel_matrix(sources, grid, variance):
    """Log of row-stochastic transition masses from sources into grid cells.

    Cell masses are assembled in log space (log-CDF differences on the side
    where the tail is deep), so entries stay finite instead of underflowing;
    that keeps Sinkhorn potentials finite on far cells.
    """
    sources = np.asarray(sources, dtype=float)
    grid = np.asarray(grid, dtype=float)
    edges = _cell_edges(grid)
    std = math.sqrt(variance)
    a = (edges[:-1][None, :] - sources[:, None]) / std
    b = (edges[1:][None, :] - sources[:, None]) / std
    log_cdf_a = norm.logcdf(a)
    log_cdf_b = norm.logcdf(b)
    log_sf_a = norm.logsf(a)
    log_sf_b = norm.logsf(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = log_cdf_b + np.log1p(-np.exp(np.minimum(log_cdf_a - log_cdf_b, 0.0)))
        upper = log_sf_a + np.log1p(-np.exp(np.minimum(log_sf_b - log_sf_a, 0.0)))
        middle = np.log(ndtr(b) - ndtr(a))
    out = np.where(b <= 0.0, lower, np.where(a >= 0.0, upper, middle))
    out = out - _lse(out, axis=1)[:, None]
    return out


def heat_kernel_matrix(sources, grid, variance):
    """Row-stochastic transition masses from source points into grid cells."""
    return np.exp(log_heat_kernel_matrix(sources, grid, variance))


@dataclass(frozen=True)
class SinkhornSolution:
    value: float
    coupling: np.ndarray
    iterations: int
    marginal_error: float
    contraction: float
    converged: bool

    @property
    def feasible(self):
        return self.converged


def sinkhorn_bridge(instance: "TransportInstance", *, tol=1e-9, max_iter=20000) -> SinkhornSolution:
    """Quadratic-cost stochastic transport by log-domain Sinkhorn iteration.

    Minimizes the relative entropy of the coupling with respect to the
    initial law tensored with the unit-time heat kernel of variance epsilon;
    the reported value is curvature * epsilon * entropy, which under that
    reference convention equals the expected drift cost of the bridge (no
    additive constant is dropped).
    """
    if not isinstance(instance.g, gen.Quadratic):
        raise ValueError("Sinkhorn route needs a quadratic drift cost")
    eps = instance.epsilon
    if eps <= 0:
        raise ValueError("need epsilon > 0")
    target = instance.target()
    mu = instance.mu
    xs = np.asarray(mu.support)
    ys = np.asarray(target.support)
    with np.errstate(divide="ignore"):
        log_k = log_heat_kernel_matrix(xs, ys, eps)
        log_r = np.log(np.asarray(mu.weights))[:, None] + log_k
        log_a = np.log(np.asarray(mu.weights))
        log_b = np.log(np.asarray(target.weights))
    has_a = np.asarray(mu.weights) > 0
    has_b = np.asarray(target.weights) > 0
    u = np.where(has_a, 0.0, -np.inf)
    v = np.where(has_b, 0.0, -np.inf)
    gaps = []
    it = 0
    err = np.inf
    with np.errstate(invalid="ignore"):
        for it in range(1, max_iter + 1):
            u_new = np.where(has_a, log_a - _lse(log_r + v[None, :], axis=1), -np.inf)
            v_new = np.where(has_b, log_b - _lse(log_r + u_new[:, None], axis=0), -np.inf)
            live = has_b & np.isfinite(v)
            gaps.append(
                float(np.max(np.abs(v_new[live] - v[live]))) if live.any() else np.inf
            )
            u, v = u_new, v_new
            log_pi = log_r + u[:, None] + v[None, :]
            pi = np.exp(np.where(np.isnan(log_pi), -np.inf, log_pi))
            err = max(
                float(np.max(np.abs(pi.sum(axis=1) - mu.weights))),
                float(np.max(np.abs(pi.sum(axis=0) - target.weights))),
            )
            if err < tol:
                break
    finite_gaps = [x for x in gaps[1:] if np.isfinite(x) and x > 0]
    contraction = 1.0
    if len(finite_gaps) >= 3:
        ratios = [b / a for a, b in zip(finite_gaps, finite_gaps[1:]) if a > 0]
        contraction = float(np.median(ratios)) if ratios else 1.0
    mask = pi > 0
    entropy = float(np.sum(pi[mask] * (np.log(pi[mask]) - log_r[mask])))
    return SinkhornSolution(
        value=instance.g.c * eps * entropy,
        coupling=pi,
        iterations=it,
        marginal_error=err,
        contraction=contraction,
        converged=err < tol,
    )


def _lse(arr, axis):
    m = np.max(arr, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.log(
        np.sum(np.exp(arr - m), axis=axis)
    )


# ---------------------------------------------------------------------------
# General convex costs: drift-field solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransportInstance:
    """Stochastic transport instance on a state grid.

    ``exact_target`` selects the raw-target (un-mollified) mode, where the
    terminal law must match ``nu`` exactly; otherwise the caller supplies a
    mollified target via :meth:`with_target` (the sweep does this).
    """

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    g: gen.GeneratorSpec
    epsilon: float
    n_time: int = 32
    state_grid: Optional[np.ndarray] = None
    exact_target: bool = False
    mollified: Optional[DiscreteMeasure] = None

    def __post_init__(self):
        if gen.is_time_dependent(self.g):
            raise ValueError("transport instances need a time-independent cost")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.state_grid is None:
            object.__setattr__(
                self, "state_grid", make_state_grid(self.mu, self.nu, self.epsilon)
            )

    def target(self) -> DiscreteMeasure:
        if self.mollified is not None:
            return self.mollified
        return self.nu

    def with_mollified_target(self):
        target, _ = mollify(self.nu, self.epsilon, self.state_grid)
        return TransportInstance(
            mu=self.mu,
            nu=self.nu,
            g=self.g,
            epsilon=self.epsilon,
            n_time=self.n_time,
            state_grid=self.state_grid,
            exact_target=False,
            mollified=target,
        )


@dataclass(frozen=True)
class FlowSolution:
    """Drift field, marginal flow, and diagnostics of a transport solve."""

    value: float
    drifts: Optional[np.ndarray]
    marginals: Optional[np.ndarray]
    feasible: bool
    terminal_error: float
    kkt_residual: float
    iterations: int
    diagnostics: dict = field(default_factory=dict)


def _project_measure_on_grid(measure: DiscreteMeasure, grid):
    m = np.zeros(grid.size)
    for x, w in zip(measure.support, measure.weights):
        idx = int(np.argmin(np.abs(grid - x)))
        if abs(grid[idx] - x) > 1e-9:
            raise ValueError(f"atom {x!r} is not a grid node")
        m[idx] += w
    return m


def _repair_cost_and_potential(grid, mass, target: DiscreteMeasure, g, dt):
    """Exact monotone transport of (grid, mass) onto the target atoms with the
    one-step cost dt * g(displacement / dt); returns (cost, potential u).

    The potential is the marginal price of mass at each grid node, used to
    seed the adjoint recursion; it is the c-transform of the target-side
    prices recovered from the monotone plan.
    """
    keep = mass > 1e-15
    src = DiscreteMeasure.from_arrays(grid[keep], mass[keep], renormalize=True)
    plan = monotone_coupling(src, target)
    ys = np.asarray(sorted(target.support))
    y_index = {y: j for j, y in enumerate(ys)}

    cost_total = 0.0
    v = np.full(ys.size, np.nan)
    u_cur = None
    x_cur = None
    for x, y, m in plan:
        c = dt * float(np.asarray(gen.eval_g(g, 0.0, (y - x) / dt)))
        if math.isinf(c):
            return math.inf, None
        cost_total += m * c
        j = y_index[y]
        if u_cur is None:
            v[j] = 0.0
            u_cur, x_cur = c, x
        elif x == x_cur:
            # same source feeding the next target: price the target
            v[j] = c - u_cur
        else:
            # new source draining the same target: price the source
            u_cur, x_cur = c - v[j], x
    # marginal price of mass anywhere on the grid is the c-transform over the
    # priced (mass-receiving) targets
    priced = np.isfinite(v)
    disp = (ys[None, priced] - grid[:, None]) / dt
    cmat = dt * np.asarray(gen.eval_g(g, 0.0, disp))
    with np.errstate(invalid="ignore"):
        u = np.min(cmat - v[None, priced], axis=1)
    if np.any(~np.isfinite(u)):
        # nodes that cannot reach any priced target (bounded-slope costs):
        # keep the gradient pointing away with a steep finite price
        finite = u[np.isfinite(u)]
        ceiling = (finite.max() + 10.0 * (finite.max() - finite.min() + 1.0)) if finite.size else 1.0
        u = np.where(np.isfinite(u), u, ceiling)
    return float(cost_total * mass.sum()), u


def _advect_matrix_apply(vec, positions, grid):
    """Deposit vec located at ``positions`` onto the grid by hat weights."""
    idx = np.clip(np.searchsorted(grid, positions) - 1, 0, grid.size - 2)
    t = np.clip((positions - grid[idx]) / (grid[idx + 1] - grid[idx]), 0.0, 1.0)
    out = np.zeros(grid.size)
    np.add.at(out, idx, vec * (1.0 - t))
    np.add.at(out, idx + 1, vec * t)
    return out


def _interp_and_slope(values, positions, grid):
    idx = np.clip(np.searchsorted(grid, positions) - 1, 0, grid.size - 2)
    h = grid[idx + 1] - grid[idx]
    t = np.clip((positions - grid[idx]) / h, 0.0, 1.0)
    val = values[idx] * (1.0 - t) + values[idx + 1] * t
    slope = (values[idx + 1] - values[idx]) / h
    return val, slope


def solve_transport(instance: TransportInstance, *, inner_iter=400,
                    feasibility_tol=1e-6, max_outer=10) -> FlowSolution:
    """Minimize the expected drift cost subject to the terminal-law constraint.

    The state law marches explicitly (exact Gaussian diffusion, then
    hat-function drift advection per step); the endpoint constraint is
    enforced by an augmented-Lagrangian outer loop whose inner problems are
    solved by L-BFGS (boxed to the drift domain) with analytic adjoint
    gradients.  Whatever terminal mismatch survives the multiplier updates is
    removed by an exact monotone rearrangement onto the target, whose cost is
    charged to the objective, so the returned plan is feasible to machine
    precision and the value is the true cost of an explicit admissible plan.

    Raw atomic targets with quadratic-or-faster cost growth are declared
    infeasible upfront: such laws are never reachable at positive noise.
    """
    from scipy.optimize import minimize

    g = instance.g
    eps = instance.epsilon
    grid = np.asarray(instance.state_grid, dtype=float)
    target = instance.target()
    if instance.exact_target:
        growth = gen.growth_exponent(g)
        if growth is None or growth >= 2.0:
            return FlowSolution(
                value=math.inf,
                drifts=None,
                marginals=None,
                feasible=False,
                terminal_error=math.inf,
                kkt_residual=math.inf,
                iterations=0,
                diagnostics={
                    "reason": "atomic target unreachable at positive noise for "
                    "quadratic-or-faster cost growth",
                },
            )
    n_t = instance.n_time
    dt = 1.0 / n_t
    nx = grid.size
    m0 = _project_measure_on_grid(instance.mu, grid)
    nu_vec = _project_measure_on_grid(target, grid)

    kernel = heat_kernel_matrix(grid, grid, eps * dt) if eps > 0 else None

    def diffuse(vec):
        return vec @ kernel if kernel is not None else vec

    def diffuse_adjoint(vec):
        return kernel @ vec if kernel is not None else vec

    lo, hi = gen.domain_interval(g)
    span = grid[-1] - grid[0]
    q_lo = max(lo, -0.75 * span / max(dt * n_t, dt))
    q_hi = min(hi, 0.75 * span / max(dt * n_t, dt))

    # initial drift: interpolated monotone displacement of the atom couplings
    plan = monotone_coupling(instance.mu, instance.nu)
    src_atoms = sorted({x for x, _, _ in plan})
    disp = []
    for xa in src_atoms:
        pieces = [(y, m) for x, y, m in plan if x == xa and m > 0]
        tot = sum(m for _, m in pieces)
        disp.append(sum((y - xa) * m for y, m in pieces) / tot if tot else 0.0)
    init_disp = (
        np.full(nx, disp[0]) if len(src_atoms) == 1 else np.interp(grid, src_atoms, disp)
    )
    q0 = np.tile(np.clip(init_disp, q_lo, q_hi), (n_t, 1))

    def march(q_field):
        """Full forward pass; returns running cost, marginals, tilde states."""
        masses = np.empty((n_t + 1, nx))
        masses[0] = m0
        tilde = np.empty((n_t, nx))
        running = 0.0
        m = m0
        for k in range(n_t):
            mt = diffuse(m)
            tilde[k] = mt
            running += dt * float(np.dot(mt, np.asarray(gen.eval_g(g, 0.0, q_field[k]))))
            m = _advect_matrix_apply(mt, grid + q_field[k] * dt, grid)
            masses[k + 1] = m
        return running, masses, tilde

    lam = np.zeros(nx)
    rho = 32.0
    evaluations = 0

    def objective_and_grad(flat):
        nonlocal evaluations
        evaluations += 1
        q_field = flat.reshape(n_t, nx)
        running, masses, tilde = march(q_field)
        gap = masses[-1] - nu_vec
        value = running + float(np.dot(lam, gap)) + 0.5 * rho * float(np.dot(gap, gap))
        w = lam + rho * gap
        grads = np.empty_like(q_field)
        for k in range(n_t - 1, -1, -1):
            pos = grid + q_field[k] * dt
            w_val, w_slope = _interp_and_slope(w, pos, grid)
            grads[k] = tilde[k] * dt * (
                np.asarray(gen.eval_g_prime(g, 0.0, q_field[k])) + w_slope
            )
            w = diffuse_adjoint(dt * np.asarray(gen.eval_g(g, 0.0, q_field[k])) + w_val)
        return value, grads.ravel()

    bounds = [(q_lo, q_hi)] * (n_t * nx)
    q = q0
    feas = math.inf
    for outer in range(max_outer):
        res = minimize(
            objective_and_grad,
            q.ravel(),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": inner_iter, "ftol": 1e-14, "gtol": 1e-10},
        )
        q = res.x.reshape(n_t, nx)
        running, masses, tilde = march(q)
        gap = masses[-1] - nu_vec
        feas = float(np.abs(gap).sum())
        lam = lam + rho * gap
        if feas < feasibility_tol:
            break
        rho *= 4.0

    # certify feasibility exactly: monotone-rearrange the reached terminal
    # law onto the target and charge the (small) repair cost
    running, masses, tilde = march(q)
    repair, _ = _repair_cost_and_potential(grid, masses[-1], target, g, dt)
    if math.isinf(repair):
        return FlowSolution(
            value=math.inf, drifts=q, marginals=masses, feasible=False,
            terminal_error=feas, kkt_residual=math.inf, iterations=evaluations,
            diagnostics={"reason": "terminal repair outside the cost domain"},
        )
    masses[-1] = nu_vec
    return FlowSolution(
        value=float(running + repair),
        drifts=q,
        marginals=masses,
        feasible=True,
        terminal_error=0.0,  # exact after the charged repair
        kkt_residual=float(np.abs(np.asarray(objective_and_grad(q.ravel())[1])).max()),
        iterations=evaluations,
        diagnostics={
            "running_cost": running,
            "repair_cost": repair,
            "pre_repair_terminal_l1": feas,
            "penalty_weight": rho,
        },
    )


# ---------------------------------------------------------------------------
# Small-noise sweep
# ---------------------------------------------------------------------------

def small_noise_sweep(mu: DiscreteMeasure, nu: DiscreteMeasure, g, eps_list,
                      mollified: bool = True, *, n_time=32) -> ConvergenceReport:
    """Per-noise-level transport values against the zero-noise oracle.

    Quadratic costs ride the Sinkhorn route (mollified mode); everything
    else, and every raw-target run, goes through the drift-field solver.
    Rows carry a feasibility flag; raw atomic targets under quadratic growth
    are infeasible at every noise level, which is the point of the
    mollification.
    """
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("noise ladder must be strictly decreasing")
    ot_value, _ = ot_oracle(mu, nu, g)

    def solve_one(eps):
        instance = TransportInstance(
            mu=mu, nu=nu, g=g, epsilon=eps, n_time=n_time,
            exact_target=not mollified,
        )
        if mollified:
            instance = instance.with_mollified_target()
            if isinstance(g, gen.Quadratic):
                sol = sinkhorn_bridge(instance)
                return sol.value, sol.feasible
            sol = solve_transport(instance)
            return sol.value, sol.feasible
        sol = solve_transport(instance)
        return sol.value, sol.feasible

    results = run_parallel(solve_one, eps_list)
    rows = []
    for eps, (value, feasible) in zip(eps_list, results):
        gap = abs(value - ot_value) if math.isfinite(value) else math.inf
        rows.append(
            ReportRow(index=eps, prelimit=value, limit=ot_value, gap=gap,
                      aux={"feasible": float(feasible)})
        )
    return ConvergenceReport(kind="schrodinger-sweep", rows=rows)
