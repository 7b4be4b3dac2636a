"""Brute-force ground truth over the achievable delay region.

The achievable per-class delay vectors at a fixed power are the convex hull
of the strict-priority delay vectors. In workload coordinates
``x_n = rho_n W_n`` the hull is the base polytope of the submodular set
function ``h(S) = g(N) - g(N \\ S)`` with ``g(S) = rho(S) R / (1 - rho(S))``,
so a linear cost is minimized by a greedy pass (the c-mu rule). Upper bounds
on delays are folded into the set function, which keeps the linear step
greedy even when bounds are present.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .analytic import (
    LoadProfile,
    PriorityOrder,
    conservation_value,
    load_profile,
    power_cost_rate,
    priority_delays,
)
from .core import PenaltyFn, SystemConfig
from .errors import CapabilityError, InfeasibleError

MAX_VERTEX_CLASSES = 8
MAX_POWER_CLASSES = 4
FW_MAX_ITER = 10_000
FW_GAP = 1e-8
POWER_GRID_CELLS = 2000


@dataclass(frozen=True)
class RegionVertex:
    order: PriorityOrder
    delays: np.ndarray
    workload: np.ndarray  # rho_n * W_n


@dataclass(frozen=True)
class Mixture:
    """Probabilities over a list of vertices (or operating points)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("mixture needs a nonempty weight vector")
        if np.any(w < 0):
            raise ValueError("mixture weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {w.sum():.12g}, not 1")
        object.__setattr__(self, "weights", w)


def vertices_from_profile(profile: LoadProfile) -> list[RegionVertex]:
    n = profile.n_classes
    if n > MAX_VERTEX_CLASSES:
        raise CapabilityError(f"vertex enumeration limited to {MAX_VERTEX_CLASSES} classes, got {n}")
    out = []
    for perm in itertools.permutations(range(n)):
        order = PriorityOrder(perm)
        w = priority_delays(profile, order)
        out.append(RegionVertex(order, w, profile.rho * w))
    return out


def enumerate_vertices(config: SystemConfig, power: float | None = None) -> list[RegionVertex]:
    """All ``N!`` strict-priority delay vectors at ``power`` (default ``p_max``).

    Raises:
        CapabilityError: more than 8 classes.
        UnstableConfigError: ``power`` is not stable.
    """
    if config.n_classes > MAX_VERTEX_CLASSES:
        raise CapabilityError(
            f"vertex enumeration limited to {MAX_VERTEX_CLASSES} classes, got {config.n_classes}")
    return vertices_from_profile(load_profile(config, config.p_max if power is None else power))


def mixture_delays(vertices: Sequence[RegionVertex], mixture: Mixture | Sequence[float]) -> np.ndarray:
    if not isinstance(mixture, Mixture):
        mixture = Mixture(np.asarray(mixture, dtype=float))
    if mixture.weights.size != len(vertices):
        raise ValueError("one weight per vertex required")
    return mixture.weights @ np.array([v.delays for v in vertices])


# ---------------------------------------------------------------- penalty target


class _BoxedRegion:
    """Workload polytope at fixed power intersected with ``x <= rho * d``, as a submodular base polytope."""

    def __init__(self, profile: LoadProfile, bounds: np.ndarray):
        n = profile.n_classes
        self.n = n
        self.rho = profile.rho
        full = (1 << n) - 1
        load = np.zeros(1 << n)
        for mask in range(1, 1 << n):
            low = mask & -mask
            load[mask] = load[mask ^ low] + profile.rho[low.bit_length() - 1]
        g = load * profile.residual / (1.0 - load)
        self.total = g[full]
        h = self.total - g[full ^ np.arange(1 << n)]
        upper = profile.rho * bounds
        cap = np.zeros(1 << n)
        for mask in range(1, 1 << n):
            low = mask & -mask
            cap[mask] = cap[mask ^ low] + upper[low.bit_length() - 1]
        hu = np.empty(1 << n)
        arg = np.zeros(1 << n, dtype=np.int64)
        for mask in range(1 << n):
            best, best_t = h[0] + cap[mask], 0
            sub = mask
            while sub:
                v = h[sub] + cap[mask ^ sub]
                if v < best:
                    best, best_t = v, sub
                sub = (sub - 1) & mask
            hu[mask] = best
            arg[mask] = best_t
        self.hu = hu
        if hu[full] < self.total * (1.0 - 1e-12):
            missing = full ^ int(arg[full])
            classes = [i for i in range(n) if missing >> i & 1]
            raise InfeasibleError(
                "delay bounds infeasible: classes "
                + ", ".join(str(c + 1) for c in classes)
                + " cannot all meet their bounds even with top priority",
                violated=tuple(classes),
            )

    def linear_min(self, cost: np.ndarray) -> np.ndarray:
        """Greedy: cheapest class first gets the largest feasible workload share."""
        x = np.empty(self.n)
        mask = 0
        prev = 0.0
        for i in np.argsort(cost, kind="stable"):
            mask |= 1 << int(i)
            x[i] = self.hu[mask] - prev
            prev = self.hu[mask]
        return x


@dataclass(frozen=True)
class PenaltyTarget:
    delays: np.ndarray
    value: float
    iterations: int
    gap: float


def _penalty_total(penalties, w):
    return float(sum(f(x) for f, x in zip(penalties, w)))


def _line_search(penalties, w, d, upper=1.0):
    """Minimize ``sum f_n(w_n + t d_n)`` over ``t in [0, upper]``."""
    if all(p.kind == "quadratic" for p in penalties):
        c = np.array([p.coefficient for p in penalties])
        curv = float(np.sum(c * d * d))
        if curv <= 0.0:
            return upper if np.dot(c * w, d) < 0 else 0.0
        return float(np.clip(-np.dot(c * w, d) / curv, 0.0, upper))
    if all(p.kind == "linear" for p in penalties):
        c = np.array([p.coefficient for p in penalties])
        return upper if np.dot(c, d) < 0 else 0.0
    phi = lambda t: _penalty_total(penalties, w + t * d)  # noqa: E731
    a, b = 0.0, upper
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c1, c2 = b - invphi * (b - a), a + invphi * (b - a)
    f1, f2 = phi(c1), phi(c2)
    while b - a > 1e-12 * max(1.0, upper):
        if f1 <= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - invphi * (b - a)
            f1 = phi(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + invphi * (b - a)
            f2 = phi(c2)
    t = 0.5 * (a + b)
    cands = [(phi(0.0), 0.0), (phi(t), t), (phi(upper), upper)]
    return min(cands)[1]


def _away_step_fw(pens, lmo, x0, max_iter, tol):
    """Frank–Wolfe with away steps over the hull of the atoms ``lmo`` can return.

    Atoms may carry extra trailing coordinates (e.g. average power) that the
    penalty ignores; they are carried along by the convex combination. Away
    steps shift weight off the worst active atom, which removes the zig-zag
    of plain Frank–Wolfe when the optimum lies on a face.
    """
    n = len(pens)
    active = {tuple(x0): 1.0}
    x = np.asarray(x0, dtype=float)
    gap = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = np.zeros(x.size)
        g[:n] = [f.derivative(v) for f, v in zip(pens, x[:n])]
        s = lmo(g[:n])
        gap = float(np.dot(g, x - s))
        if gap <= tol * max(1.0, abs(_penalty_total(pens, x[:n]))):
            break
        away_key = max(active, key=lambda k: float(np.dot(g, k)))
        away = np.array(away_key)
        if gap >= float(np.dot(g, away - x)) or len(active) == 1:
            d = s - x
            t = _line_search(pens, x[:n], d[:n], 1.0)
            for k in active:
                active[k] *= 1.0 - t
            active[tuple(s)] = active.get(tuple(s), 0.0) + t
        else:
            a = active[away_key]
            d = x - away
            t = _line_search(pens, x[:n], d[:n], a / (1.0 - a))
            for k in active:
                active[k] *= 1.0 + t
            active[away_key] -= t
        active = {k: v for k, v in active.items() if v > 1e-15}
        total = sum(active.values())
        active = {k: v / total for k, v in active.items()}
        x = x + t * d
    return x, it, gap


def min_penalty_target(config: SystemConfig, penalties: Sequence[PenaltyFn] | None = None,
                       delay_bounds: Sequence[float] | None = None,
                       power: float | None = None, *, max_iter: int = FW_MAX_ITER,
                       tol: float = FW_GAP) -> PenaltyTarget:
    """Minimize ``sum_n f_n(W_n)`` over achievable delays with ``W_n <= d_n``.

    Frank–Wolfe in workload coordinates. Each linear step is the greedy
    c-mu pass over the bound-truncated region; the step size is exact
    (closed form for quadratic penalties). Stops at ``max_iter`` iterations
    or when the duality gap falls below ``tol`` relative to the objective.

    Args:
        config: the system; penalties and bounds default to its classes'.
        power: constant power level, default ``p_max``.

    Raises:
        InfeasibleError: no achievable delay vector meets the bounds; the
            error names a set of classes that cannot all meet their bounds.
        CapabilityError: more than 8 classes.
    """
    n = config.n_classes
    if n > MAX_VERTEX_CLASSES:
        raise CapabilityError(f"penalty oracle limited to {MAX_VERTEX_CLASSES} classes, got {n}")
    pens = tuple(config.penalties if penalties is None else penalties)
    bounds = config.delay_bounds if delay_bounds is None else np.asarray(delay_bounds, dtype=float)
    prof = load_profile(config, config.p_max if power is None else power)
    region = _BoxedRegion(prof, bounds)
    rho = prof.rho

    def lmo(g):
        return region.linear_min(g / rho) / rho

    w_eq = np.full(n, conservation_value(prof) / prof.total)
    grad0 = np.array([f.derivative(x) for f, x in zip(pens, w_eq)])
    w, it, gap = _away_step_fw(pens, lmo, lmo(grad0), max_iter, tol)
    return PenaltyTarget(w, _penalty_total(pens, w), it, gap)


# ---------------------------------------------------------------- power targets


@dataclass(frozen=True)
class OperatingPoint:
    power: float
    order: PriorityOrder
    delays: np.ndarray
    average_power: float


@dataclass(frozen=True)
class PowerTarget:
    """Minimal average power and a time-sharing over constant-power operating points that attains it."""

    average_power: float
    points: tuple[OperatingPoint, ...]
    mixture: Mixture

    @property
    def delays(self) -> np.ndarray:
        return self.mixture.weights @ np.array([p.delays for p in self.points])


def _point_table(config: SystemConfig, powers: np.ndarray, orders):
    """Delays of every (power, order) pair, shape ``(len(powers), len(orders), N)``, plus power costs."""
    mu = np.asarray(config.rate_fn(powers), dtype=float)
    rho_hat = config.lambdas * config.mean_sizes
    r_hat = 0.5 * float(np.dot(config.lambdas, config.second_moments))
    table = np.empty((powers.size, len(orders), config.n_classes))
    for j, order in enumerate(orders):
        above = 0.0
        for c in order:
            upto = above + rho_hat[c]
            table[:, j, c] = r_hat / ((mu - above) * (mu - upto))
            above = upto
    return table, np.asarray(power_cost_rate(config, powers), dtype=float)


def _power_grid(config, cells):
    if config.p_max <= config.p_min:
        return np.array([config.p_min])
    return np.linspace(config.p_min, config.p_max, cells + 1)


def _solve_power_lp(config, powers, orders, bounds):
    table, cost = _point_table(config, powers, orders)
    n_p, n_o, n = table.shape
    c = np.repeat(cost, n_o)
    a_ub = table.reshape(n_p * n_o, n).T
    finite = np.isfinite(bounds)
    res = linprog(c, A_ub=a_ub[finite], b_ub=bounds[finite],
                  A_eq=np.ones((1, c.size)), b_eq=[1.0], bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    return res.x.reshape(n_p, n_o), float(res.fun), table, cost


def min_power_target(config: SystemConfig, delay_bounds: Sequence[float] | None = None,
                     *, cells: int = POWER_GRID_CELLS) -> PowerTarget:
    """Smallest average power meeting ``W_n <= d_n`` by time-sharing constant-power priority rules.

    Solves the linear program over every (grid power, priority order) pair
    exactly, then re-solves once on a fine grid spanning one coarse cell on
    each side of every support point.

    Raises:
        InfeasibleError: the bounds cannot be met even at ``p_max``.
        CapabilityError: more than 4 classes.
    """
    n = config.n_classes
    if n > MAX_POWER_CLASSES:
        raise CapabilityError(f"power oracle limited to {MAX_POWER_CLASSES} classes, got {n}")
    bounds = config.delay_bounds if delay_bounds is None else np.asarray(delay_bounds, dtype=float)
    orders = [PriorityOrder(p) for p in itertools.permutations(range(n))]
    grid = _power_grid(config, cells)
    sol = _solve_power_lp(config, grid, orders, bounds)
    if sol is None:
        raise InfeasibleError(f"delay bounds {tuple(bounds)} infeasible up to P_max={config.p_max}",
                              violated=tuple(range(n)))
    beta = sol[0]
    if grid.size > 1:
        step = grid[1] - grid[0]
        support = grid[np.nonzero(beta.sum(axis=1) > 1e-12)[0]]
        fine = np.unique(np.concatenate(
            [np.linspace(max(config.p_min, p - step), min(config.p_max, p + step), 201) for p in support]
            + [support]))
        fine_sol = _solve_power_lp(config, fine, orders, bounds)
        if fine_sol is not None and fine_sol[1] <= sol[1]:
            grid, sol = fine, fine_sol
    beta, value, table, cost = sol
    pts, wts = [], []
    for i, j in zip(*np.nonzero(beta > 1e-12)):
        pts.append(OperatingPoint(float(grid[i]), orders[j], table[i, j].copy(), float(cost[i])))
        wts.append(beta[i, j])
    wts = np.asarray(wts) / np.sum(wts)
    return PowerTarget(value, tuple(pts), Mixture(wts))


@dataclass(frozen=True)
class PenaltyPowerTarget:
    delays: np.ndarray
    value: float
    average_power: float
    iterations: int
    gap: float


def _lower_hull(u, phi):
    """Indices of the lower convex hull of points sorted by ``u``."""
    hull: list[int] = []
    for i in range(u.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            if (phi[b] - phi[a]) * (u[i] - u[a]) >= (phi[i] - phi[a]) * (u[b] - u[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def min_penalty_power_target(config: SystemConfig, penalties: Sequence[PenaltyFn] | None = None,
                             p_const: float | None = None, *, cells: int = POWER_GRID_CELLS,
                             max_iter: int = 2000, tol: float = 1e-7) -> PenaltyPowerTarget:
    """Minimize ``sum_n f_n(W_n)`` subject to average power at most ``p_const``.

    Frank–Wolfe over time-sharings of (constant power, priority order)
    pairs. For a linear delay cost the best order is the same c-mu order at
    every power, so the linear step reduces to the lower convex envelope of
    ``(power cost, delay cost)`` over the power grid, read off at the budget.

    Raises:
        InfeasibleError: even ``p_min`` costs more than the budget.
    """
    pens = tuple(config.penalties if penalties is None else penalties)
    budget = config.p_const if p_const is None else float(p_const)
    if budget is None:
        raise ValueError("a power budget is required")
    grid = _power_grid(config, cells)
    cost = np.asarray(power_cost_rate(config, grid), dtype=float)
    if cost[0] > budget:
        raise InfeasibleError(f"budget {budget} below the power cost {cost[0]:.6g} at P_min",
                              violated=())
    rho_hat = config.lambdas * config.mean_sizes
    sort = np.argsort(cost, kind="stable")
    grid, cost = grid[sort], cost[sort]

    def lmo(c):
        order = PriorityOrder(np.argsort(-c / rho_hat, kind="stable"))
        table, _ = _point_table(config, grid, [order])
        w = table[:, 0, :]
        phi = w @ c
        hull = _lower_hull(cost, phi)
        hu, hphi = cost[hull], phi[hull]
        k = int(np.argmin(hphi))
        if hu[k] <= budget:
            i = hull[k]
            return w[i], cost[i]
        j = int(np.searchsorted(hu, budget, side="right"))
        a, b = hull[j - 1], hull[j]
        t = 0.0 if cost[b] == cost[a] else (budget - cost[a]) / (cost[b] - cost[a])
        return (1 - t) * w[a] + t * w[b], (1 - t) * cost[a] + t * cost[b]

    def atom(c):
        w, pw = lmo(c)
        return np.append(w, pw)

    n = config.n_classes
    x, it, gap = _away_step_fw(pens, atom, atom(np.ones(n)), max_iter, tol)
    w, pw = x[:n], x[n]
    return PenaltyPowerTarget(w, _penalty_total(pens, w), float(pw), it, gap)
