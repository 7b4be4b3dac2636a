"""Frame-based controllers: virtual-queue state in, (priority order, power, auxiliaries) out.

Every rule is a dynamic c-mu rule: classes are ranked by a queue-derived
weight, and the power level (when controlled) minimizes a weighted sum of
power cost and the power-dependent strict-priority delays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .analytic import PriorityOrder, load_profile
from .core import PenaltyFn, SystemConfig
from .errors import UnstableConfigError

POLICY_CODES = {
    "fixed-order": K.FIXED_ORDER,
    "delayfeas": K.DELAYFEAS,
    "delayfair": K.DELAYFAIR,
    "dynpower": K.DYNPOWER,
    "dynpower-nm2": K.DYNPOWER_NM2,
    "pwdelayfair": K.PWDELAYFAIR,
}
POWER_POLICIES = ("dynpower", "dynpower-nm2", "pwdelayfair")


@dataclass(frozen=True)
class FrameDecision:
    order: PriorityOrder
    power: float | None = None
    aux: np.ndarray | None = None


@dataclass(frozen=True)
class Policy:
    """A named controller plus the knobs the fixed-power rules need.

    ``power`` is the constant power used by ``fixed-order``, ``delayfeas``
    and ``delayfair`` (defaults to ``p_max``). ``order`` is only read by
    ``fixed-order``.
    """

    name: str
    order: tuple[int, ...] | None = None
    power: float | None = None

    def __post_init__(self):
        if self.name not in POLICY_CODES:
            raise ValueError(f"unknown policy {self.name!r}; pick one of {sorted(POLICY_CODES)}")
        if self.order is not None:
            object.__setattr__(self, "order", PriorityOrder(self.order))
        if self.name == "fixed-order" and self.order is None:
            raise ValueError("fixed-order policy needs an explicit order")

    @property
    def code(self) -> int:
        return POLICY_CODES[self.name]

    def fixed_power(self, config: SystemConfig) -> float:
        p = config.p_max if self.power is None else float(self.power)
        if not config.p_min <= p <= config.p_max:
            raise ValueError(f"power {p} outside [{config.p_min}, {config.p_max}]")
        return p


def as_policy(policy) -> Policy:
    return policy if isinstance(policy, Policy) else Policy(str(policy))


def default_r_max(config: SystemConfig) -> np.ndarray:
    """Twice the largest strict-priority delay of any class at ``P_min``.

    The worst case puts the least-loaded class last, behind every other
    class, so no enumeration of orders is needed.
    """
    prof = load_profile(config, config.p_min)
    total = prof.total
    worst = prof.residual / ((1.0 - total + prof.rho.min()) * (1.0 - total))
    return np.full(config.n_classes, 2.0 * worst)


def model_for(config: SystemConfig, policy=None):
    r_max = None
    if policy is not None and as_policy(policy).name == "pwdelayfair" and config.r_max is None:
        r_max = tuple(default_r_max(config))
    return K.pack(config, r_max)


def _run_decide(code, config, z, y, x, fixed_power=None, fixed_order=None):
    n = config.n_classes
    m = model_for(config, "pwdelayfair" if code == K.PWDELAYFAIR else None)
    order = np.empty(n, dtype=np.int64)
    aux = np.empty(n)
    fo = np.arange(n, dtype=np.int64) if fixed_order is None else np.asarray(fixed_order, dtype=np.int64)
    fp = config.p_max if fixed_power is None else float(fixed_power)
    p = K.decide(code, m, np.asarray(z, dtype=float), np.asarray(y, dtype=float), float(x),
                 fo, fp, K.POWER_GRID, order, aux)
    return PriorityOrder(order), float(p), aux


def delayfeas_decide(z) -> FrameDecision:
    """Serve classes in decreasing order of their delay-bound queue.

    Needs no statistics of the arrivals or job sizes.
    """
    z = np.asarray(z, dtype=float)
    order = np.empty(z.size, dtype=np.int64)
    K.order_desc(z, order)
    return FrameDecision(PriorityOrder(order))


def delayfair_decide(z, y, config: SystemConfig) -> FrameDecision:
    """Priority by ``(Z_n + Y_n) / E[S_n]``, largest first."""
    w = (np.asarray(z, dtype=float) + np.asarray(y, dtype=float)) / config.mean_sizes
    order = np.empty(w.size, dtype=np.int64)
    K.order_desc(w, order)
    return FrameDecision(PriorityOrder(order))


def delayfair_aux(y: float, lam: float, penalty: PenaltyFn, v: float, bound: float) -> float:
    """Per-frame delay target: minimize ``V f(r) - y lam r`` on ``[0, bound]``.

    Closed form for quadratic and linear penalties, golden-section search for
    tabulated ones.
    """
    m = K.Model(
        lam=np.array([float(lam)]), mean_s=np.ones(1), m2_s=np.ones(1),
        bound=np.array([float(bound)]), r_max=np.array([float(bound)]),
        pen_kind=np.array([penalty.code], dtype=np.int64),
        pen_coef=np.array([penalty.coefficient]),
        pen_tab=np.array([penalty.table if penalty.table else (0.0, 0.0)], dtype=float),
        pen_len=np.array([len(penalty.table)], dtype=np.int64),
        pen_step=np.array([penalty.step]),
        rate_kind=0, rate_par=np.array([1.0, 0.0]), rate_px=np.array([0.0, 1.0]),
        rate_py=np.array([0.0, 1.0]), p_min=1.0, p_max=1.0, p_const=np.inf, v=float(v),
    )
    return float(K.solve_aux(m, 0, float(y), float(bound)))


def dynpower_decide(z, config: SystemConfig) -> FrameDecision:
    """Order by ``Z_n / E[S_n]``, then the power minimizing
    ``V (sum lam E[S]) P / mu(P) + sum_n Z_n lam_n W_n(P)`` on ``[P_min, P_max]``.
    """
    order, p, _ = _run_decide(K.DYNPOWER, config, z, np.zeros(config.n_classes), 0.0)
    return FrameDecision(order, p)


def dynpower_decide_no_m2(z, config: SystemConfig, v_tilde: float | None = None) -> FrameDecision:
    """Variant that only needs mean job sizes.

    The delay term drops the common second-moment factor, so the control
    parameter ``v_tilde`` (default: ``config.v_param``) plays the role of
    ``V / R_hat``.
    """
    if v_tilde is not None:
        config = config.replace(v_param=float(v_tilde))
    order, p, _ = _run_decide(K.DYNPOWER_NM2, config, z, np.zeros(config.n_classes), 0.0)
    return FrameDecision(order, p)


def pwdelayfair_decide(x: float, y, config: SystemConfig) -> FrameDecision:
    """Order by ``Y_n / E[S_n]``, power from the X-weighted objective, auxiliaries on ``[0, R_max]``."""
    if config.p_const is None:
        raise ValueError("pwdelayfair needs a power budget p_const")
    order, p, aux = _run_decide(K.PWDELAYFAIR, config, np.zeros(config.n_classes), y, x)
    return FrameDecision(order, p, aux)


def second_moment_scale(config: SystemConfig) -> float:
    """``R_hat = 0.5 * sum lam_n E[S_n^2]``."""
    return 0.5 * float(np.dot(config.lambdas, config.second_moments))


def _ordered(config, weights, order):
    order = list(order)
    lam = config.lambdas
    w_ord = (np.asarray(weights, dtype=float) * lam)[order]
    rho_ord = (lam * config.mean_sizes)[order]
    return w_ord, rho_ord


def dynpower_objective(config: SystemConfig, z, order, power) -> np.ndarray | float:
    """Value of the power subproblem; vectorized over ``power`` for brute-force scans."""
    w_ord, rho_ord = _ordered(config, z, order)
    return _objective(config, power, config.v_param * config.work_rate, w_ord, rho_ord,
                      second_moment_scale(config), 0.0)


def dynpower_no_m2_objective(config: SystemConfig, z, order, power, v_tilde: float):
    w_ord, rho_ord = _ordered(config, z, order)
    return _objective(config, power, v_tilde * config.work_rate, w_ord, rho_ord, 1.0, 0.0)


def pwdelayfair_objective(config: SystemConfig, x: float, y, order, power):
    w_ord, rho_ord = _ordered(config, y, order)
    return _objective(config, power, x * config.work_rate, w_ord, rho_ord,
                      second_moment_scale(config), -x * config.p_const)


def _objective(config, power, lin, w_ord, rho_ord, rscale, const):
    p = np.asarray(power, dtype=float)
    mu = np.asarray(config.rate_fn(p))
    if np.any(mu <= rho_ord.sum()):
        raise UnstableConfigError("objective evaluated at an unstable power level")
    val = lin * p / mu + const
    above = 0.0
    for wj, rj in zip(w_ord, rho_ord):
        upto = above + rj
        val = val + wj * rscale / ((mu - above) * (mu - upto))
        above = upto
    return val if np.ndim(val) else float(val)
