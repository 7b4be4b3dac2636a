"""Domain types for the multi-class M/G/1 model and the ratio-of-expectations metrics.

All value types here are frozen after construction. ``RunningStats`` is the one
mutable object and is owned by a single simulation run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import UnstableConfigError

# Integer codes shared with the compiled kernels.
RATE_LINEAR, RATE_AFFINE, RATE_POWER, RATE_TABULATED = 0, 1, 2, 3
PEN_QUADRATIC, PEN_LINEAR, PEN_TABULATED = 0, 1, 2

_SHAPE_TOL = 1e-9


@dataclass(frozen=True)
class JobSizeDist:
    """Distribution of the work brought by one job.

    Use the constructors :meth:`exponential`, :meth:`deterministic`,
    :meth:`two_point` or :meth:`from_moments` rather than the raw initializer.
    """

    kind: str
    mean: float
    second_moment: float
    values: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("exponential", "deterministic", "two_point"):
            raise ValueError(f"unknown size distribution kind {self.kind!r}")
        if not self.mean > 0:
            raise ValueError(f"mean job size must be positive, got {self.mean}")
        if self.second_moment < self.mean**2 * (1 - 1e-12):
            raise ValueError(
                f"second moment {self.second_moment} below mean^2 {self.mean**2}"
            )

    @classmethod
    def exponential(cls, mean: float) -> "JobSizeDist":
        return cls("exponential", float(mean), 2.0 * float(mean) ** 2)

    @classmethod
    def deterministic(cls, value: float) -> "JobSizeDist":
        return cls("deterministic", float(value), float(value) ** 2, (float(value),), (1.0,))

    @classmethod
    def two_point(cls, low: float, high: float, p_high: float) -> "JobSizeDist":
        if not (0.0 <= low <= high) or not (0.0 < p_high < 1.0):
            raise ValueError("two-point sizes need 0 <= low <= high and 0 < p_high < 1")
        mean = (1 - p_high) * low + p_high * high
        m2 = (1 - p_high) * low**2 + p_high * high**2
        return cls("two_point", mean, m2, (float(low), float(high)), (1 - p_high, p_high))

    @classmethod
    def from_moments(cls, mean: float, second_moment: float) -> "JobSizeDist":
        """Two-point distribution matching ``(mean, second_moment)``.

        Symmetric support ``mean +- sigma`` when that stays nonnegative,
        otherwise support ``{0, second_moment / mean}``.
        """
        var = second_moment - mean**2
        if var < -_SHAPE_TOL * mean**2:
            raise ValueError("second moment must be at least mean^2")
        var = max(var, 0.0)
        if var == 0.0:
            return cls.deterministic(mean)
        sigma = math.sqrt(var)
        if sigma <= mean:
            return cls.two_point(mean - sigma, mean + sigma, 0.5)
        high = second_moment / mean
        return cls.two_point(0.0, high, mean / high)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # Every kind consumes draws from rng so a stream position never depends on the kind.
        if self.kind == "exponential":
            return self.mean * rng.standard_exponential(n)
        u = rng.random(n)
        if self.kind == "deterministic":
            return np.full(n, self.values[0])
        return np.where(u < self.probs[1], self.values[1], self.values[0])

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "exponential":
            return {"kind": "exponential", "mean": self.mean}
        if self.kind == "deterministic":
            return {"kind": "deterministic", "value": self.mean}
        return {"kind": "two_point", "low": self.values[0], "high": self.values[1],
                "p_high": self.probs[1]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "JobSizeDist":
        kind = d["kind"]
        if kind == "exponential":
            return cls.exponential(d["mean"])
        if kind == "deterministic":
            return cls.deterministic(d.get("value", d.get("mean")))
        if kind == "two_point":
            if "low" in d:
                return cls.two_point(d["low"], d["high"], d["p_high"])
            return cls.from_moments(d["mean"], d["second_moment"])
        raise ValueError(f"unknown size distribution kind {kind!r}")


def _check_shape(values: np.ndarray, *, concave: bool, what: str) -> None:
    """Finite-difference monotonicity and convexity (or concavity) test on a uniform grid."""
    scale = max(1.0, float(np.max(np.abs(values))))
    d1 = np.diff(values)
    if np.any(d1 < -_SHAPE_TOL * scale):
        raise ValueError(f"{what} must be nondecreasing")
    d2 = np.diff(values, 2)
    if concave and np.any(d2 > _SHAPE_TOL * scale):
        raise ValueError(f"{what} must be concave")
    if not concave and np.any(d2 < -_SHAPE_TOL * scale):
        raise ValueError(f"{what} must be convex")


@dataclass(frozen=True)
class PenaltyFn:
    """Convex, nondecreasing, nonnegative penalty of a class's average delay.

    ``quadratic`` is ``0.5 * coefficient * w**2``; ``linear`` is
    ``coefficient * w``; ``tabulated`` interpolates ``table`` on the grid
    ``0, step, 2*step, ...`` and extends the last segment linearly.
    """

    kind: str = "quadratic"
    coefficient: float = 1.0
    table: tuple[float, ...] = ()
    step: float = 1.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "linear", "tabulated"):
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.kind == "tabulated":
            tab = np.asarray(self.table, dtype=float)
            if tab.size < 2 or not self.step > 0:
                raise ValueError("tabulated penalty needs >= 2 values and a positive step")
            if np.any(tab < 0):
                raise ValueError("penalty must be nonnegative")
            _check_shape(tab, concave=False, what="penalty")
        elif self.coefficient < 0:
            raise ValueError("penalty coefficient must be nonnegative")

    @classmethod
    def quadratic(cls, coefficient: float) -> "PenaltyFn":
        return cls("quadratic", float(coefficient))

    @classmethod
    def linear(cls, coefficient: float) -> "PenaltyFn":
        return cls("linear", float(coefficient))

    @classmethod
    def tabulated(cls, values: Sequence[float], step: float) -> "PenaltyFn":
        return cls("tabulated", table=tuple(float(v) for v in values), step=float(step))

    @property
    def code(self) -> int:
        return {"quadratic": PEN_QUADRATIC, "linear": PEN_LINEAR,
                "tabulated": PEN_TABULATED}[self.kind]

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "quadratic":
            out = 0.5 * self.coefficient * w * w
        elif self.kind == "linear":
            out = self.coefficient * w
        else:
            tab = np.asarray(self.table)
            top = self.step * (tab.size - 1)
            slope = (tab[-1] - tab[-2]) / self.step
            grid = np.arange(tab.size) * self.step
            out = np.where(w <= top, np.interp(w, grid, tab), tab[-1] + slope * (w - top))
        return out if out.ndim else float(out)

    def derivative(self, w):
        """Derivative (right derivative at kinks of a tabulated penalty)."""
        w = np.asarray(w, dtype=float)
        if self.kind == "quadratic":
            out = self.coefficient * w
        elif self.kind == "linear":
            out = np.full_like(w, self.coefficient)
        else:
            tab = np.asarray(self.table)
            slopes = np.diff(tab) / self.step
            idx = np.clip(np.floor(w / self.step).astype(int), 0, slopes.size - 1)
            out = slopes[idx]
        return out if out.ndim else float(out)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "tabulated":
            return {"kind": "tabulated", "step": self.step, "values": list(self.table)}
        return {"kind": self.kind, "coefficient": self.coefficient}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PenaltyFn":
        if d["kind"] == "tabulated":
            return cls("tabulated", table=tuple(float(v) for v in d["values"]),
                       step=float(d["step"]))
        return cls(d["kind"], float(d.get("coefficient", 1.0)))


@dataclass(frozen=True)
class RatePowerFn:
    """Service rate as a function of allocated power.

    Kinds: ``linear`` (``scale * P``), ``affine`` (``intercept + slope * P``),
    ``power`` (``scale * P**exponent`` with ``0 < exponent <= 1``) and
    ``tabulated`` (piecewise linear through ``(powers[i], rates[i])``).
    """

    kind: str = "linear"
    params: tuple[float, ...] = (1.0,)
    powers: tuple[float, ...] = ()
    rates: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "linear":
            ok = len(self.params) == 1 and self.params[0] > 0
        elif self.kind == "affine":
            ok = len(self.params) == 2 and self.params[1] >= 0
        elif self.kind == "power":
            ok = (len(self.params) == 2 and self.params[0] > 0
                  and 0 < self.params[1] <= 1)
        elif self.kind == "tabulated":
            p = np.asarray(self.powers, dtype=float)
            r = np.asarray(self.rates, dtype=float)
            ok = p.size >= 2 and p.size == r.size and bool(np.all(np.diff(p) > 0))
            if ok:
                slopes = np.diff(r) / np.diff(p)
                if np.any(slopes < -_SHAPE_TOL) or np.any(np.diff(slopes) > _SHAPE_TOL):
                    raise ValueError("tabulated rate must be nondecreasing and concave")
        else:
            raise ValueError(f"unknown rate-power kind {self.kind!r}")
        if not ok:
            raise ValueError(f"bad parameters for {self.kind} rate-power function")

    @classmethod
    def linear(cls, scale: float = 1.0) -> "RatePowerFn":
        return cls("linear", (float(scale),))

    @classmethod
    def affine(cls, intercept: float, slope: float) -> "RatePowerFn":
        return cls("affine", (float(intercept), float(slope)))

    @classmethod
    def power_law(cls, scale: float, exponent: float) -> "RatePowerFn":
        return cls("power", (float(scale), float(exponent)))

    @classmethod
    def tabulated(cls, powers: Sequence[float], rates: Sequence[float]) -> "RatePowerFn":
        return cls("tabulated", (), tuple(map(float, powers)), tuple(map(float, rates)))

    @property
    def code(self) -> int:
        return {"linear": RATE_LINEAR, "affine": RATE_AFFINE, "power": RATE_POWER,
                "tabulated": RATE_TABULATED}[self.kind]

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "linear":
            out = self.params[0] * p
        elif self.kind == "affine":
            out = self.params[0] + self.params[1] * p
        elif self.kind == "power":
            out = self.params[0] * p ** self.params[1]
        else:
            out = np.interp(p, self.powers, self.rates)
        return out if out.ndim else float(out)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "linear":
            return {"kind": "linear", "scale": self.params[0]}
        if self.kind == "affine":
            return {"kind": "affine", "intercept": self.params[0], "slope": self.params[1]}
        if self.kind == "power":
            return {"kind": "power", "scale": self.params[0], "exponent": self.params[1]}
        return {"kind": "tabulated", "power": list(self.powers), "rate": list(self.rates)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RatePowerFn":
        kind = d["kind"]
        if kind == "linear":
            return cls.linear(d.get("scale", 1.0))
        if kind == "affine":
            return cls.affine(d["intercept"], d["slope"])
        if kind == "power":
            return cls.power_law(d["scale"], d["exponent"])
        if kind == "tabulated":
            return cls.tabulated(d["power"], d["rate"])
        raise ValueError(f"unknown rate-power kind {kind!r}")


@dataclass(frozen=True)
class ClassParams:
    lam: float
    size: JobSizeDist
    delay_bound: float = math.inf
    penalty: PenaltyFn = field(default_factory=PenaltyFn)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"arrival rate must be positive, got {self.lam}")
        if not self.delay_bound > 0:
            raise ValueError(f"delay bound must be positive, got {self.delay_bound}")


@dataclass(frozen=True)
class SystemConfig:
    """A full problem instance: job classes, power model and control parameters.

    ``p_const`` is only needed by the power-constrained policy. ``r_max``
    bounds the auxiliary delay targets of that policy; when omitted,
    :func:`mg1control.policies.default_r_max` supplies it.
    """

    classes: tuple[ClassParams, ...]
    rate_fn: RatePowerFn = field(default_factory=RatePowerFn)
    p_min: float = 1.0
    p_max: float = 1.0
    p_const: float | None = None
    v_param: float = 1.0
    r_max: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ValueError("need at least one job class")
        if self.p_min > self.p_max:
            raise ValueError(f"p_min={self.p_min} exceeds p_max={self.p_max}")
        if not self.v_param > 0:
            raise ValueError("control parameter V must be positive")
        if self.p_const is not None and not self.p_const > 0:
            raise ValueError("power budget must be positive")
        if self.r_max is not None:
            object.__setattr__(self, "r_max", tuple(float(r) for r in self.r_max))
            if len(self.r_max) != self.n_classes or min(self.r_max) <= 0:
                raise ValueError("r_max needs one positive entry per class")
        load = self.work_rate
        mu_min = float(self.rate_fn(self.p_min))
        if not mu_min > load:
            raise UnstableConfigError(
                f"unstable at P_min={self.p_min}: mu(P_min)={mu_min:.6g} must exceed "
                f"sum(lambda_n E[S_n])={load:.6g}"
            )
        grid = np.linspace(self.p_min, self.p_max, 257)
        if self.p_max > self.p_min:
            _check_shape(np.asarray(self.rate_fn(grid)), concave=True, what="rate-power function")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([c.lam for c in self.classes])

    @property
    def mean_sizes(self) -> np.ndarray:
        return np.array([c.size.mean for c in self.classes])

    @property
    def second_moments(self) -> np.ndarray:
        return np.array([c.size.second_moment for c in self.classes])

    @property
    def delay_bounds(self) -> np.ndarray:
        return np.array([c.delay_bound for c in self.classes])

    @property
    def penalties(self) -> tuple[PenaltyFn, ...]:
        return tuple(c.penalty for c in self.classes)

    @property
    def work_rate(self) -> float:
        """Offered work per unit time, ``sum(lambda_n E[S_n])``."""
        return float(np.dot(self.lambdas, self.mean_sizes))

    def replace(self, **changes) -> "SystemConfig":
        from dataclasses import replace
        return replace(self, **changes)

    def with_bounds(self, bounds: Sequence[float]) -> "SystemConfig":
        from dataclasses import replace
        if len(bounds) != self.n_classes:
            raise ValueError("need one delay bound per class")
        classes = tuple(replace(c, delay_bound=float(d)) for c, d in zip(self.classes, bounds))
        return replace(self, classes=classes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "classes": [
                {
                    "arrival_rate": c.lam,
                    "size": c.size.to_dict(),
                    "delay_bound": None if math.isinf(c.delay_bound) else c.delay_bound,
                    "penalty": c.penalty.to_dict(),
                }
                for c in self.classes
            ],
            "rate": self.rate_fn.to_dict(),
            "p_min": self.p_min,
            "p_max": self.p_max,
            "p_const": self.p_const,
            "v": self.v_param,
            "r_max": None if self.r_max is None else list(self.r_max),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SystemConfig":
        classes = []
        for c in d["classes"]:
            bound = c.get("delay_bound")
            classes.append(ClassParams(
                lam=float(c["arrival_rate"]),
                size=JobSizeDist.from_dict(c["size"]),
                delay_bound=math.inf if bound is None else float(bound),
                penalty=PenaltyFn.from_dict(c.get("penalty", {"kind": "quadratic"})),
            ))
        return cls(
            classes=tuple(classes),
            rate_fn=RatePowerFn.from_dict(d.get("rate", {"kind": "linear"})),
            p_min=float(d.get("p_min", 1.0)),
            p_max=float(d.get("p_max", d.get("p_min", 1.0))),
            p_const=d.get("p_const"),
            v_param=float(d.get("v", 1.0)),
            r_max=d.get("r_max"),
        )


def load_config(path: str | Path) -> SystemConfig:
    with open(path) as fh:
        return SystemConfig.from_dict(json.load(fh))


def save_config(config: SystemConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass
class RunningStats:
    """Accumulators behind every time-average metric of a run.

    Sums start at frame 0; nothing is discarded as warm-up.
    """

    delay_sum: np.ndarray
    arrivals: np.ndarray
    energy: float = 0.0
    time: float = 0.0
    busy_time: float = 0.0
    frames: int = 0

    @classmethod
    def empty(cls, n_classes: int) -> "RunningStats":
        return cls(np.zeros(n_classes), np.zeros(n_classes, dtype=np.int64))

    def add_frame(self, delay_sums, counts, power: float, busy: float, frame: float) -> None:
        self.delay_sum = self.delay_sum + np.asarray(delay_sums, dtype=float)
        self.arrivals = self.arrivals + np.asarray(counts, dtype=np.int64)
        self.energy += power * busy
        self.busy_time += busy
        self.time += frame
        self.frames += 1

    def copy(self) -> "RunningStats":
        return RunningStats(self.delay_sum.copy(), self.arrivals.copy(), self.energy,
                            self.time, self.busy_time, self.frames)


def average_delay(stats: RunningStats, n: int) -> float | None:
    """Ratio estimator of class ``n``'s average queueing delay.

    Returns None when the class has had no arrivals.
    """
    count = stats.arrivals[n]
    if count <= 0:
        return None
    return float(stats.delay_sum[n] / count)


def average_delays(stats: RunningStats) -> np.ndarray:
    """Vector form of :func:`average_delay`; classes without arrivals map to NaN."""
    out = np.full(stats.delay_sum.shape, np.nan)
    ok = stats.arrivals > 0
    out[ok] = stats.delay_sum[ok] / stats.arrivals[ok]
    return out


def average_power(stats: RunningStats) -> float | None:
    """Energy spent over elapsed time; None before any time has elapsed."""
    if stats.time <= 0:
        return None
    return float(stats.energy / stats.time)
