"""Frame-boundary virtual queues that turn time-average constraints into stability targets.

``Z`` tracks delay in excess of the per-class bounds, ``Y`` tracks delay in
excess of the per-frame auxiliary targets, and ``X`` tracks energy in excess
of the power budget. Each is a ``max(. , 0)`` recursion started at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._kernels import power_queue_step, queue_step
from .errors import DataIntegrityError, DivergenceError

QUEUE_CEILING = 1e12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class VirtualState:
    z: np.ndarray
    y: np.ndarray
    x: float = 0.0
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "z", _frozen(self.z))
        object.__setattr__(self, "y", _frozen(self.y))
        if np.any(self.z < 0) or np.any(self.y < 0) or self.x < 0:
            raise DataIntegrityError("virtual queues must stay nonnegative")
        top = max(float(self.z.max(initial=0.0)), float(self.y.max(initial=0.0)), self.x)
        if top >= QUEUE_CEILING:
            raise DivergenceError(f"virtual queue reached {top:.3g} at frame {self.k}")

    @classmethod
    def zeros(cls, n_classes: int) -> "VirtualState":
        return cls(np.zeros(n_classes), np.zeros(n_classes), 0.0, 0)


def _frame_arrays(frame):
    sums = np.asarray(frame.delay_sums, dtype=float)
    counts = np.asarray(frame.arrivals, dtype=float)
    if np.any(sums < 0) or np.any(counts < 0):
        raise DataIntegrityError("frame carries a negative delay sum or arrival count")
    return sums, counts


def update_z(state: VirtualState, frame, bounds) -> VirtualState:
    """Delay-bound queue: ``Z_n <- max(Z_n + sum_i (W_i - d_n), 0)``."""
    sums, counts = _frame_arrays(frame)
    d = np.asarray(bounds, dtype=float)
    z = [queue_step(q, s, c, t) for q, s, c, t in zip(state.z, sums, counts, d)]
    return replace(state, z=z)


def update_y(state: VirtualState, frame, aux, upper=None) -> VirtualState:
    """Auxiliary-target queue: ``Y_n <- max(Y_n + sum_i W_i - r_n |A_n|, 0)``.

    ``aux`` must have been chosen before the frame was observed.
    """
    sums, counts = _frame_arrays(frame)
    r = np.asarray(aux, dtype=float)
    if np.any(r < 0) or (upper is not None and np.any(r > np.asarray(upper) * (1 + 1e-12))):
        raise ValueError(f"auxiliary targets {r} outside their box")
    y = [queue_step(q, s, c, t) for q, s, c, t in zip(state.y, sums, counts, r)]
    return replace(state, y=y)


def update_x(state: VirtualState, frame, p_const: float) -> VirtualState:
    """Power queue: ``X <- max(X + P B - P_const T, 0)``."""
    if frame.busy > frame.length * (1 + 1e-12) or frame.busy < 0:
        raise DataIntegrityError(f"busy time {frame.busy} not within frame length {frame.length}")
    return replace(state, x=power_queue_step(state.x, frame.power, frame.busy, frame.length, p_const))


def apply_frame(state: VirtualState, frame, *, bounds=None, aux=None, aux_upper=None,
                p_const=None) -> VirtualState:
    """Run whichever updates a policy uses and advance the frame index."""
    if bounds is not None:
        state = update_z(state, frame, bounds)
    if aux is not None:
        state = update_y(state, frame, aux, aux_upper)
    if p_const is not None:
        state = update_x(state, frame, p_const)
    return replace(state, k=state.k + 1)


def mean_rate_metric(history) -> float:
    """``Q_K / K`` for a history ``Q_0 .. Q_K``.

    A single-run proxy of ``E[Q_K] / K``; average it over replications.
    """
    h = np.asarray(history, dtype=float)
    if h.ndim != 1 or h.size < 2:
        raise ValueError("history must hold Q_0 .. Q_K with K >= 1")
    return float(h[-1] / (h.size - 1))


def pathwise_slack(final_queue, arrivals_sum, service_sum) -> np.ndarray:
    """``Q_K - (sum of queue arrivals - sum of queue service)``; nonnegative on every path.

    For ``Z``: arrivals are delays and service is ``d_n |A_n|``. For ``X``:
    arrivals are energy and service is ``P_const`` times elapsed time.
    """
    return np.asarray(final_queue, dtype=float) - (
        np.asarray(arrivals_sum, dtype=float) - np.asarray(service_sum, dtype=float)
    )
