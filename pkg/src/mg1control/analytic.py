"""Closed-form quantities of the nonpreemptive multi-class M/G/1 queue at constant power."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import SystemConfig
from .errors import UnstableConfigError


class PriorityOrder(tuple):
    """Strict priority ranking; ``order[0]`` is the class served first.

    Classes are 0-based indices.
    """

    def __new__(cls, classes: Iterable[int]):
        classes = tuple(int(c) for c in classes)
        if sorted(classes) != list(range(len(classes))):
            raise ValueError(f"not a permutation of 0..{len(classes) - 1}: {classes}")
        return super().__new__(cls, classes)

    @classmethod
    def identity(cls, n: int) -> "PriorityOrder":
        return cls(range(n))

    def rank(self) -> np.ndarray:
        """``rank[n]`` is the position of class ``n`` (0 = highest priority)."""
        r = np.empty(len(self), dtype=int)
        r[list(self)] = np.arange(len(self))
        return r


@dataclass(frozen=True)
class LoadProfile:
    """Per-class utilizations and the mean residual work at one service rate."""

    rho: np.ndarray
    residual: float
    lambdas: np.ndarray

    @property
    def total(self) -> float:
        return float(self.rho.sum())

    @property
    def n_classes(self) -> int:
        return self.rho.size


def profile_from_moments(lambdas, mean_service, second_moment_service) -> LoadProfile:
    """Load profile from service-time moments directly (no power model)."""
    lam = np.asarray(lambdas, dtype=float)
    m1 = np.asarray(mean_service, dtype=float)
    m2 = np.asarray(second_moment_service, dtype=float)
    rho = lam * m1
    if rho.sum() >= 1.0:
        raise UnstableConfigError(f"total load {rho.sum():.6g} must be below 1")
    return LoadProfile(rho=rho, residual=0.5 * float(np.dot(lam, m2)), lambdas=lam)


def load_profile(config: SystemConfig, power: float) -> LoadProfile:
    """Utilizations ``lambda_n E[S_n] / mu(P)`` and residual ``0.5 sum lambda_n E[S_n^2] / mu(P)^2``.

    Raises:
        UnstableConfigError: if ``mu(P)`` does not exceed the offered work.
    """
    mu = float(config.rate_fn(power))
    work = config.work_rate
    if not mu > work:
        raise UnstableConfigError(
            f"unstable at P={power}: mu(P)={mu:.6g} must exceed sum(lambda_n E[S_n])={work:.6g}"
        )
    lam = config.lambdas
    return LoadProfile(
        rho=lam * config.mean_sizes / mu,
        residual=0.5 * float(np.dot(lam, config.second_moments)) / mu**2,
        lambdas=lam,
    )


def expected_frame_size(profile: LoadProfile, lambdas=None) -> float:
    """Mean length of one idle period plus the following busy period."""
    lam = profile.lambdas if lambdas is None else np.asarray(lambdas, dtype=float)
    return 1.0 / ((1.0 - profile.total) * float(lam.sum()))


def expected_arrivals_per_frame(profile: LoadProfile) -> np.ndarray:
    return profile.lambdas * expected_frame_size(profile)


def priority_delays(profile: LoadProfile, order: Sequence[int]) -> np.ndarray:
    """Average queueing delay of every class under a strict priority order.

    The class in position ``m`` waits ``R / ((1 - s_{m-1}) (1 - s_m))`` where
    ``s_m`` is the cumulative load of positions ``0..m``. The result is indexed
    by class, not by position.
    """
    order = PriorityOrder(order)
    rho = profile.rho[list(order)]
    above = np.concatenate(([0.0], np.cumsum(rho)[:-1]))
    upto = above + rho
    out = np.empty(profile.n_classes)
    out[list(order)] = profile.residual / ((1.0 - above) * (1.0 - upto))
    return out


def conservation_value(profile: LoadProfile) -> float:
    """``sum rho_n W_n``, identical for every work-conserving nonpreemptive policy."""
    total = profile.total
    return total * profile.residual / (1.0 - total)


def subset_work_floor(profile: LoadProfile, members) -> float:
    """Smallest achievable ``sum_{n in S} rho_n W_n``: the value when ``S`` has top priority."""
    s = float(profile.rho[list(members)].sum()) if len(members) else 0.0
    return s * profile.residual / (1.0 - s)


@dataclass(frozen=True)
class DelayRegion:
    """Per-class delay floors plus the conservation equality ``weights . W = rhs``.

    For two classes this describes the achievable region exactly; for more
    classes it is an outer description and the vertex list from
    :mod:`mg1control.oracle` is authoritative.
    """

    lower_bounds: np.ndarray
    weights: np.ndarray
    rhs: float

    def contains(self, delays, tol: float = 1e-9) -> bool:
        w = np.asarray(delays, dtype=float)
        scale = max(1.0, abs(self.rhs))
        return bool(np.all(w >= self.lower_bounds - tol * scale)
                    and abs(np.dot(self.weights, w) - self.rhs) <= tol * scale)


def delay_region(config: SystemConfig, power: float) -> DelayRegion:
    return region_from_profile(load_profile(config, power))


def region_from_profile(profile: LoadProfile) -> DelayRegion:
    return DelayRegion(
        lower_bounds=profile.residual / (1.0 - profile.rho),
        weights=profile.rho.copy(),
        rhs=conservation_value(profile),
    )


def power_priority_delays(config: SystemConfig, power: float, order: Sequence[int]) -> np.ndarray:
    """Strict-priority delays written with job sizes and ``mu(P)``.

    Same numbers as ``priority_delays(load_profile(config, P), order)`` but
    evaluated as ``R_hat / ((mu - a)(mu - b))`` with size-based loads, the form
    the power-control rules use.
    """
    mu = float(config.rate_fn(power))
    order = list(PriorityOrder(order))
    rho_hat = (config.lambdas * config.mean_sizes)[order]
    r_hat = 0.5 * float(np.dot(config.lambdas, config.second_moments))
    above = np.concatenate(([0.0], np.cumsum(rho_hat)[:-1]))
    upto = above + rho_hat
    if not mu > upto[-1]:
        raise UnstableConfigError(f"unstable at P={power}")
    out = np.empty(len(order))
    out[order] = r_hat / ((mu - above) * (mu - upto))
    return out


def power_cost_rate(config: SystemConfig, power) -> np.ndarray | float:
    """Average power when ``power`` is used in every busy period: ``P * sum rho(P)``."""
    p = np.asarray(power, dtype=float)
    out = p * config.work_rate / np.asarray(config.rate_fn(p))
    return out if out.ndim else float(out)


def expected_frame_size_at(config: SystemConfig, power) -> np.ndarray | float:
    p = np.asarray(power, dtype=float)
    load = config.work_rate / np.asarray(config.rate_fn(p))
    out = 1.0 / ((1.0 - load) * float(config.lambdas.sum()))
    return out if out.ndim else float(out)
