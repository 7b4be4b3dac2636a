"""Compiled building blocks shared by the decision rules and the simulator.

The public wrappers in :mod:`mg1control.policies` call these same functions, so
the simulator and the library API can never disagree about a decision.
"""

from collections import namedtuple
from functools import lru_cache

import numpy as np
from numba import njit

from .core import PEN_LINEAR, PEN_QUADRATIC, RATE_AFFINE, RATE_LINEAR, RATE_POWER

FIXED_ORDER, DELAYFEAS, DELAYFAIR, DYNPOWER, DYNPOWER_NM2, PWDELAYFAIR = range(6)

INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0
INV_PHI2 = (3.0 - np.sqrt(5.0)) / 2.0
POWER_GRID = 512
AUX_RTOL = 1e-9
TIE_RTOL = 1e-13
POWER_RTOL = 1e-10

Model = namedtuple(
    "Model",
    "lam mean_s m2_s bound r_max pen_kind pen_coef pen_tab pen_len pen_step "
    "rate_kind rate_par rate_px rate_py p_min p_max p_const v",
)


@lru_cache(maxsize=64)
def pack(config, r_max=None):
    """Flatten a SystemConfig into arrays the compiled code can read."""
    n = config.n_classes
    pens = config.penalties
    width = max([len(p.table) for p in pens] + [2])
    tab = np.zeros((n, width))
    lens = np.zeros(n, dtype=np.int64)
    for i, p in enumerate(pens):
        if p.kind == "tabulated":
            tab[i, : len(p.table)] = p.table
            lens[i] = len(p.table)
    rate = config.rate_fn
    if r_max is None:
        r_max = config.r_max if config.r_max is not None else (np.inf,) * n
    par = np.zeros(2)
    par[: len(rate.params)] = rate.params
    return Model(
        lam=config.lambdas,
        mean_s=config.mean_sizes,
        m2_s=config.second_moments,
        bound=config.delay_bounds,
        r_max=np.asarray(r_max, dtype=float),
        pen_kind=np.array([p.code for p in pens], dtype=np.int64),
        pen_coef=np.array([p.coefficient for p in pens]),
        pen_tab=tab,
        pen_len=lens,
        pen_step=np.array([p.step for p in pens]),
        rate_kind=rate.code,
        rate_par=par,
        rate_px=np.asarray(rate.powers if rate.powers else (0.0, 1.0), dtype=float),
        rate_py=np.asarray(rate.rates if rate.rates else (0.0, 1.0), dtype=float),
        p_min=float(config.p_min),
        p_max=float(config.p_max),
        p_const=float(config.p_const) if config.p_const is not None else np.inf,
        v=float(config.v_param),
    )


@njit(cache=True, inline="always")
def _interp(p, px, py):
    """Piecewise-linear interpolation, clamped at the ends (scalar, allocation free)."""
    n = px.shape[0]
    if p <= px[0]:
        return py[0]
    if p >= px[n - 1]:
        return py[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if px[mid] <= p:
            lo = mid
        else:
            hi = mid
    t = (p - px[lo]) / (px[hi] - px[lo])
    return py[lo] + t * (py[hi] - py[lo])


@njit(cache=True, inline="always")
def _rate(kind, a, b, px, py, p):
    if kind == RATE_LINEAR:
        return a * p
    if kind == RATE_AFFINE:
        return a + b * p
    if kind == RATE_POWER:
        if b == 0.5:
            return a * np.sqrt(p)
        return a * p ** b
    return _interp(p, px, py)


@njit(cache=True, inline="always")
def rate_value(m, p):
    return _rate(m.rate_kind, m.rate_par[0], m.rate_par[1], m.rate_px, m.rate_py, p)


@njit(cache=True, inline="always")
def penalty_value(m, n, w):
    k = m.pen_kind[n]
    if k == PEN_QUADRATIC:
        return 0.5 * m.pen_coef[n] * w * w
    if k == PEN_LINEAR:
        return m.pen_coef[n] * w
    size = m.pen_len[n]
    h = m.pen_step[n]
    top = h * (size - 1)
    if w >= top:
        slope = (m.pen_tab[n, size - 1] - m.pen_tab[n, size - 2]) / h
        return m.pen_tab[n, size - 1] + slope * (w - top)
    i = int(w / h)
    frac = w / h - i
    return m.pen_tab[n, i] * (1.0 - frac) + m.pen_tab[n, i + 1] * frac


@njit(cache=True)
def order_desc(weights, out):
    """Indices sorted by weight, largest first; equal weights keep the lower index first."""
    n = weights.shape[0]
    for i in range(n):
        out[i] = i
    for i in range(1, n):
        cur = out[i]
        j = i
        while j > 0 and weights[out[j - 1]] < weights[cur]:
            out[j] = out[j - 1]
            j -= 1
        out[j] = cur


@njit(cache=True, inline="always")
def aux_objective(m, n, y, r):
    return m.v * penalty_value(m, n, r) - y * m.lam[n] * r


@njit(cache=True)
def solve_aux(m, n, y, upper):
    """Minimize ``V f_n(r) - y lambda_n r`` over ``0 <= r <= upper``."""
    if upper <= 0.0:
        return 0.0
    k = m.pen_kind[n]
    slope = y * m.lam[n]
    if k == PEN_QUADRATIC:
        c = m.v * m.pen_coef[n]
        if c > 0.0:
            return min(upper, max(0.0, slope / c))
        return upper if slope > 0.0 else 0.0
    if k == PEN_LINEAR:
        return upper if slope > m.v * m.pen_coef[n] else 0.0
    a = 0.0
    b = upper
    tol = AUX_RTOL * upper
    c1 = a + INV_PHI2 * (b - a)
    c2 = a + INV_PHI * (b - a)
    f1 = aux_objective(m, n, y, c1)
    f2 = aux_objective(m, n, y, c2)
    while b - a > tol:
        if f1 <= f2:
            b = c2
            c2 = c1
            f2 = f1
            c1 = a + INV_PHI2 * (b - a)
            f1 = aux_objective(m, n, y, c1)
        else:
            a = c1
            c1 = c2
            f1 = f2
            c2 = a + INV_PHI * (b - a)
            f2 = aux_objective(m, n, y, c2)
    best = 0.5 * (a + b)
    fbest = aux_objective(m, n, y, best)
    f0 = aux_objective(m, n, y, 0.0)
    fu = aux_objective(m, n, y, upper)
    if f0 <= fbest and f0 <= fu:
        return 0.0
    if fu < fbest:
        return upper
    return best


@njit(cache=True, inline="always")
def _pobj(kind, a, b, px, py, p, lin, w_ord, rho_ord, rscale, const):
    mu = _rate(kind, a, b, px, py, p)
    val = lin * p / mu + const
    above = 0.0
    for j in range(w_ord.shape[0]):
        upto = above + rho_ord[j]
        if w_ord[j] != 0.0:
            val += w_ord[j] * rscale / ((mu - above) * (mu - upto))
        above = upto
    return val


@njit(cache=True)
def power_objective(m, p, lin, w_ord, rho_ord, rscale, const):
    """``lin * P / mu(P) + const + sum_j w_j rscale / ((mu - a_j)(mu - b_j))``.

    ``a_j``/``b_j`` are the cumulative size-based loads above and up to the
    class in position ``j``.
    """
    return _pobj(m.rate_kind, m.rate_par[0], m.rate_par[1], m.rate_px, m.rate_py,
                 p, lin, w_ord, rho_ord, rscale, const)


@njit(cache=True)
def argmin_power(m, lin, w_ord, rho_ord, rscale, const, grid_n):
    """Grid scan plus golden-section refinement; ties resolve to the smallest power."""
    a = m.p_min
    b = m.p_max
    if b <= a:
        return a
    kind = m.rate_kind
    ra = m.rate_par[0]
    rb = m.rate_par[1]
    px = m.rate_px
    py = m.rate_py
    h = (b - a) / (grid_n - 1)
    best_i = 0
    best_v = _pobj(kind, ra, rb, px, py, a, lin, w_ord, rho_ord, rscale, const)
    for i in range(1, grid_n):
        p = b if i == grid_n - 1 else a + i * h
        v = _pobj(kind, ra, rb, px, py, p, lin, w_ord, rho_ord, rscale, const)
        # rounding noise on a flat objective must not move the choice off the smallest power
        if v < best_v - TIE_RTOL * (1.0 + abs(best_v)):
            best_v = v
            best_i = i
    lo = a + max(best_i - 1, 0) * h
    hi = min(a + (best_i + 1) * h, b)
    tol = POWER_RTOL * (b - a)
    c1 = lo + INV_PHI2 * (hi - lo)
    c2 = lo + INV_PHI * (hi - lo)
    f1 = _pobj(kind, ra, rb, px, py, c1, lin, w_ord, rho_ord, rscale, const)
    f2 = _pobj(kind, ra, rb, px, py, c2, lin, w_ord, rho_ord, rscale, const)
    while hi - lo > tol:
        if f1 <= f2:
            hi = c2
            c2 = c1
            f2 = f1
            c1 = lo + INV_PHI2 * (hi - lo)
            f1 = _pobj(kind, ra, rb, px, py, c1, lin, w_ord, rho_ord, rscale, const)
        else:
            lo = c1
            c1 = c2
            f1 = f2
            c2 = lo + INV_PHI * (hi - lo)
            f2 = _pobj(kind, ra, rb, px, py, c2, lin, w_ord, rho_ord, rscale, const)
    p_ref = 0.5 * (lo + hi)
    f_ref = _pobj(kind, ra, rb, px, py, p_ref, lin, w_ord, rho_ord, rscale, const)
    if f_ref < best_v - TIE_RTOL * (1.0 + abs(best_v)):
        return p_ref
    return b if best_i == grid_n - 1 else a + best_i * h


@njit(cache=True)
def decide(policy, m, z, y, x, fixed_order, fixed_power, grid_n, order_out, r_out):
    """Frame decision for every policy; writes the order and auxiliaries, returns the power."""
    n = z.shape[0]
    for i in range(n):
        r_out[i] = 0.0
    if policy == FIXED_ORDER:
        for i in range(n):
            order_out[i] = fixed_order[i]
        return fixed_power
    w = np.empty(n)
    if policy == DELAYFEAS:
        order_desc(z, order_out)
        return fixed_power
    if policy == DELAYFAIR:
        for i in range(n):
            w[i] = (z[i] + y[i]) / m.mean_s[i]
        order_desc(w, order_out)
        for i in range(n):
            r_out[i] = solve_aux(m, i, y[i], m.bound[i])
        return fixed_power
    queue = z if policy != PWDELAYFAIR else y
    for i in range(n):
        w[i] = queue[i] / m.mean_s[i]
    order_desc(w, order_out)
    w_ord = np.empty(n)
    rho_ord = np.empty(n)
    work = 0.0
    r_hat = 0.0
    for i in range(n):
        work += m.lam[i] * m.mean_s[i]
        r_hat += 0.5 * m.lam[i] * m.m2_s[i]
    for j in range(n):
        c = order_out[j]
        w_ord[j] = queue[c] * m.lam[c]
        rho_ord[j] = m.lam[c] * m.mean_s[c]
    if policy == DYNPOWER:
        return argmin_power(m, m.v * work, w_ord, rho_ord, r_hat, 0.0, grid_n)
    if policy == DYNPOWER_NM2:
        return argmin_power(m, m.v * work, w_ord, rho_ord, 1.0, 0.0, grid_n)
    for i in range(n):
        r_out[i] = solve_aux(m, i, y[i], m.r_max[i])
    const = 0.0 if x == 0.0 else -x * m.p_const
    return argmin_power(m, x * work, w_ord, rho_ord, r_hat, const, grid_n)


@njit(cache=True)
def queue_step(q, delay_sum, count, target):
    """``max(q + sum_i (W_i - target), 0)`` for one class and one frame."""
    return max(q + delay_sum - target * count, 0.0)


@njit(cache=True)
def power_queue_step(x, power, busy, frame, p_const):
    return max(x + power * busy - p_const * frame, 0.0)
