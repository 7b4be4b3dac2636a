"""Scenario harness: parameter sweeps, replicated runs, CSV tables and oracle comparisons."""

from __future__ import annotations

import csv
import io
import itertools
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import ClassParams, JobSizeDist, PenaltyFn, RatePowerFn, SystemConfig
from .policies import POLICY_CODES, Policy
from .simulator import run, summarize_runs

CSV_VERSION = "mg1control-scenario-csv v1"
OUTPUT_ENV = "MG1CONTROL_OUTPUT_DIR"
DEFAULT_FRAMES = 1_000_000
DEFAULT_REPS = 10
CELL_TOLERANCE = 0.05

# Two-class M/M/1 benchmark: delay bounds to test feasibility against.
FEASIBILITY_BOUNDS = ((0.45, 2.05), (0.85, 1.65), (1.25, 1.25), (1.65, 0.85), (2.05, 0.45))
# Fairness benchmark on the same system: V -> (W_1, W_2, penalty) reference values.
FAIRNESS_REFERENCE = {
    100: (1.611, 0.785, 2.529),
    1000: (1.809, 0.591, 2.335),
    5000: (1.879, 0.523, 2.312),
    10000: (1.894, 0.503, 2.301),
}
FAIRNESS_OPTIMUM = ((1.92, 0.48), 2.304)


def output_dir(default: str | Path = "results") -> Path:
    """Output directory, overridable through ``MG1CONTROL_OUTPUT_DIR``."""
    return Path(os.environ.get(OUTPUT_ENV, default))


def two_class_mm1(bounds=(2.0, 2.0), v: float = 100.0, costs=(1.0, 4.0)) -> SystemConfig:
    """Rates (1, 2), exponential service with means (0.4, 0.2) at unit rate; load 0.8."""
    return SystemConfig(
        classes=(
            ClassParams(1.0, JobSizeDist.exponential(0.4), bounds[0], PenaltyFn.quadratic(costs[0])),
            ClassParams(2.0, JobSizeDist.exponential(0.2), bounds[1], PenaltyFn.quadratic(costs[1])),
        ),
        rate_fn=RatePowerFn.linear(1.0), p_min=1.0, p_max=1.0, v_param=v,
    )


def two_class_power_system(bounds=(1.0, 1.0), v: float = 100.0, rate: str = "linear",
                           p_const: float | None = None, costs=(1.0, 4.0)) -> SystemConfig:
    """Rates (1, 2); class 1 exponential sizes of mean 1, class 2 unit sizes; power in [4, 10].

    ``rate="linear"`` uses ``mu(P) = P``; ``rate="sqrt"`` uses ``mu(P) = 2 sqrt(P)``,
    which makes the average power depend on the power level chosen.
    """
    rate_fn = {"linear": RatePowerFn.linear(1.0), "sqrt": RatePowerFn.power_law(2.0, 0.5)}[rate]
    return SystemConfig(
        classes=(
            ClassParams(1.0, JobSizeDist.exponential(1.0), bounds[0], PenaltyFn.quadratic(costs[0])),
            ClassParams(2.0, JobSizeDist.deterministic(1.0), bounds[1], PenaltyFn.quadratic(costs[1])),
        ),
        rate_fn=rate_fn, p_min=4.0, p_max=10.0, p_const=p_const, v_param=v,
    )


BUILTIN_CONFIGS = {
    "two-class-mm1": two_class_mm1,
    "two-class-power": two_class_power_system,
    "two-class-power-sqrt": lambda: two_class_power_system(rate="sqrt"),
}


@dataclass
class Scenario:
    """A sweep over control parameters and delay-bound sets for one policy.

    ``v_values`` of None keeps the config's V; an empty list yields no rows.
    ``bound_sets`` behaves the same way for delay bounds.
    """

    name: str
    config: SystemConfig
    policy: str
    v_values: list[float] | None = None
    bound_sets: list[tuple[float, ...]] | None = None
    frames: int = DEFAULT_FRAMES
    reps: int = DEFAULT_REPS
    seed_base: int = 0
    order: tuple[int, ...] | None = None
    power: float | None = None

    def __post_init__(self):
        if self.policy not in POLICY_CODES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.frames < 1 or self.reps < 1:
            raise ValueError("frames and reps must be positive")
        if self.bound_sets is not None:
            self.bound_sets = [tuple(float(x) for x in b) for b in self.bound_sets]
            for b in self.bound_sets:
                if len(b) != self.config.n_classes:
                    raise ValueError(f"bound set {b} does not match {self.config.n_classes} classes")

    @property
    def seeds(self) -> list[int]:
        return [self.seed_base + i for i in range(self.reps)]

    def points(self) -> list[tuple[float, tuple[float, ...]]]:
        vs = [self.config.v_param] if self.v_values is None else list(self.v_values)
        bs = [tuple(self.config.delay_bounds)] if self.bound_sets is None else self.bound_sets
        return list(itertools.product(vs, bs))

    def make_policy(self) -> Policy:
        order = None if self.order is None else tuple(self.order)
        return Policy(self.policy, order=order, power=self.power)

    @classmethod
    def from_dict(cls, d: dict[str, Any], base: Path | None = None) -> "Scenario":
        cfg = d["config"]
        if isinstance(cfg, dict):
            config = SystemConfig.from_dict(cfg)
        elif cfg in BUILTIN_CONFIGS:
            config = BUILTIN_CONFIGS[cfg]()
        else:
            from .core import load_config
            path = Path(cfg)
            config = load_config(path if path.is_absolute() or base is None else base / path)
        order = d.get("order")
        return cls(
            name=d["name"], config=config, policy=d["policy"],
            v_values=d.get("v_values"), bound_sets=d.get("bound_sets"),
            frames=int(d.get("frames", DEFAULT_FRAMES)), reps=int(d.get("reps", DEFAULT_REPS)),
            seed_base=int(d.get("seed_base", 0)),
            order=None if order is None else tuple(int(c) - 1 for c in order),
            power=d.get("power"),
        )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return Scenario.from_dict(json.loads(path.read_text()), base=path.parent)


@dataclass
class ScenarioResult:
    scenario: Scenario
    rows: list[dict[str, Any]] = field(default_factory=list)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows], dtype=float)


def run_scenario(scenario: Scenario, progress=None, workers: int | None = None) -> ScenarioResult:
    """Run every (V, bound set) point with the scenario's seeds.

    All runs of all points share one thread pool; rows come out in declaration
    order whatever the completion order.

    Raises:
        RuntimeError: a run failed; the message names the parameter point.
    """
    result = ScenarioResult(scenario)
    policy = scenario.make_policy()
    n = scenario.config.n_classes
    points = scenario.points()
    configs = [scenario.config.replace(v_param=float(v)).with_bounds(b) for v, b in points]
    seeds = scenario.seeds
    workers = workers or min(max(len(points) * len(seeds), 1), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [[pool.submit(run, cfg, policy, scenario.frames, s, keep_frames=False) for s in seeds]
                   for cfg in configs]
        for idx, ((v, bounds), futs) in enumerate(zip(points, futures)):
            try:
                summ = summarize_runs(policy, seeds, [f.result() for f in futs])
            except Exception as exc:
                for rest in futures[idx + 1:]:
                    for f in rest:
                        f.cancel()
                raise RuntimeError(
                    f"scenario {scenario.name!r} failed at point {idx} (V={v}, bounds={bounds}): {exc}"
                ) from exc
            row: dict[str, Any] = {"point": idx, "V": float(v)}
            for i in range(n):
                row[f"d_{i + 1}"] = bounds[i]
            mw, sw = summ.mean_delays, summ.se_delays
            for i in range(n):
                row[f"W_{i + 1}"] = float(mw[i])
                row[f"se_W_{i + 1}"] = float(sw[i])
            row["penalty"] = summ.mean_penalty
            row["se_penalty"] = summ.se_penalty
            row["power"] = summ.mean_power
            row["se_power"] = summ.se_power
            zr, yr = summ.z_rate.mean(axis=0), summ.y_rate.mean(axis=0)
            for i in range(n):
                row[f"Zrate_{i + 1}"] = float(zr[i])
            for i in range(n):
                row[f"Yrate_{i + 1}"] = float(yr[i])
            row["Xrate"] = float(summ.x_rate.mean())
            row["pathwise_ok"] = int(summ.pathwise_ok)
            result.rows.append(row)
            if progress is not None:
                progress(row)
    return result


def write_scenario_csv(result: ScenarioResult, path: str | Path) -> None:
    """CSV with a version comment on the first line, then one row per parameter point."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {CSV_VERSION}; scenario={result.scenario.name}; policy={result.scenario.policy}\n")
        if not result.rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(result.rows[0].keys()))
        w.writeheader()
        for r in result.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def format_table(result: ScenarioResult) -> str:
    """Fixed-width text rendering of the main columns."""
    out = io.StringIO()
    out.write(f"scenario {result.scenario.name} ({result.scenario.policy}, "
              f"{result.scenario.reps} x {result.scenario.frames} frames)\n")
    if not result.rows:
        out.write("(no parameter points)\n")
        return out.getvalue()
    n = result.scenario.config.n_classes
    keys = ["V"] + [f"d_{i + 1}" for i in range(n)] + [f"W_{i + 1}" for i in range(n)] + ["penalty", "power"]
    out.write("".join(f"{k:>12}" for k in keys) + "\n")
    for r in result.rows:
        out.write("".join(f"{r[k]:>12.4g}" for k in keys) + "\n")
    return out.getvalue()


@dataclass(frozen=True)
class OracleComparison:
    """Gap of a policy metric to its oracle optimum along a V sweep.

    ``fit_c`` and ``fit_r2`` describe the least-squares fit ``gap = c / V``
    (through the origin); ``fit_r2`` is the centred coefficient of
    determination of that fit.
    """

    v_values: np.ndarray
    gaps: np.ndarray
    monotone: bool
    fit_c: float
    fit_r2: float


def compare_to_oracle(v_values: Sequence[float], values: Sequence[float], optimum: float,
                      noise: float = 0.0) -> OracleComparison:
    """Gaps ``value - optimum`` per V, a shrinking-gap flag and a ``c / V`` fit.

    Args:
        noise: slack allowed when checking that gaps do not grow with V.
    """
    v = np.asarray(v_values, dtype=float)
    gaps = np.asarray(values, dtype=float) - float(optimum)
    order = np.argsort(v)
    v, gaps = v[order], gaps[order]
    monotone = bool(np.all(np.diff(gaps) <= noise))
    if v.size == 0:
        return OracleComparison(v, gaps, True, 0.0, 1.0)
    x = 1.0 / v
    c = float(np.dot(x, gaps) / np.dot(x, x))
    ss_res = float(np.sum((gaps - c * x) ** 2))
    ss_tot = float(np.sum((gaps - gaps.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return OracleComparison(v, gaps, monotone, c, r2)
