"""Frame-by-frame simulation of the nonpreemptive multi-class queue.

A frame is an idle period followed by the busy period it triggers. Before
each frame the policy picks a priority order and a power level from the
current virtual queues; the busy period is then served nonpreemptively (FIFO
within a class) and the virtual queues are updated at the frame boundary.

Each class owns one arrival stream and one job-size stream (independent
Philox generators spawned from the run seed). The streams are consumed in
fixed-size chunks, so the arrival times and the size of the i-th job of every
class are the same under every policy.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from . import _kernels as K
from .analytic import PriorityOrder
from .core import RunningStats, SystemConfig, average_delays, average_power
from .errors import DivergenceError
from .policies import Policy, as_policy, model_for
from .virtual_queues import QUEUE_CEILING, VirtualState

EVENT_CAP = 10**8
CHUNK = 1 << 16

_OK, _REFILL, _QUEUE_FULL, _EVENT_CAP, _DIVERGED = range(5)


@njit(cache=True, nogil=True)
def _simulate(policy, m, fixed_order, fixed_power, grid_n, k_start, k_stop, t_now,
              next_arr, ia_buf, ia_len, ia_pos, sz_buf, sz_len, sz_pos, qbuf,
              z, y, xq, acc_dsum, acc_cnt, acc_rcnt, acc,
              keep, rec_idle, rec_busy, rec_power, rec_cnt, rec_dsum, rec_order,
              keep_trace, trace, event_cap, ceiling):
    n = z.shape[0]
    cap = qbuf.shape[1]
    order = np.empty(n, np.int64)
    r = np.empty(n)
    snap_next = np.empty(n)
    snap_ia = np.empty(n, np.int64)
    snap_sz = np.empty(n, np.int64)
    head = np.zeros(n, np.int64)
    tail = np.zeros(n, np.int64)
    dsum = np.zeros(n)
    cnt = np.zeros(n, np.int64)
    use_z = policy == K.DELAYFEAS or policy == K.DELAYFAIR or policy == K.DYNPOWER \
        or policy == K.DYNPOWER_NM2
    use_y = policy == K.DELAYFAIR or policy == K.PWDELAYFAIR
    use_x = policy == K.PWDELAYFAIR

    k = k_start
    while k < k_stop:
        if keep_trace:
            for i in range(n):
                trace[k, i] = z[i]
                trace[k, n + i] = y[i]
            trace[k, 2 * n] = xq[0]
        for i in range(n):
            snap_next[i] = next_arr[i]
            snap_ia[i] = ia_pos[i]
            snap_sz[i] = sz_pos[i]
            head[i] = 0
            tail[i] = 0
            dsum[i] = 0.0
            cnt[i] = 0

        p = K.decide(policy, m, z, y, xq[0], fixed_order, fixed_power, grid_n, order, r)
        mu = K.rate_value(m, p)

        # Idle period ends at the earliest pending arrival.
        c = 0
        for i in range(1, n):
            if next_arr[i] < next_arr[c]:
                c = i
        t0 = next_arr[c]
        idle = t0 - t_now
        status = _OK
        if ia_pos[c] >= ia_len[c]:
            status = _REFILL
        else:
            qbuf[c, 0] = t0
            tail[c] = 1
            next_arr[c] = t0 + ia_buf[c, ia_pos[c]]
            ia_pos[c] += 1

        t = t0
        events = 0
        while status == _OK:
            q = -1
            for j in range(n):
                cl = order[j]
                if tail[cl] > head[cl]:
                    q = cl
                    break
            if q < 0:
                break
            a = qbuf[q, head[q]]
            head[q] += 1
            dsum[q] += t - a
            cnt[q] += 1
            if sz_pos[q] >= sz_len[q]:
                status = _REFILL
                break
            t_end = t + sz_buf[q, sz_pos[q]] / mu
            sz_pos[q] += 1
            for i in range(n):
                while next_arr[i] <= t_end:
                    if tail[i] >= cap:
                        status = _QUEUE_FULL
                        break
                    if ia_pos[i] >= ia_len[i]:
                        status = _REFILL
                        break
                    qbuf[i, tail[i]] = next_arr[i]
                    tail[i] += 1
                    next_arr[i] += ia_buf[i, ia_pos[i]]
                    ia_pos[i] += 1
                if status != _OK:
                    break
            t = t_end
            events += 1
            if events > event_cap:
                status = _EVENT_CAP

        if status != _OK:
            for i in range(n):
                next_arr[i] = snap_next[i]
                ia_pos[i] = snap_ia[i]
                sz_pos[i] = snap_sz[i]
            return status, k, t_now

        busy = t - t0
        length = idle + busy
        t_now = t
        for i in range(n):
            acc_dsum[i] += dsum[i]
            acc_cnt[i] += cnt[i]
            acc_rcnt[i] += r[i] * cnt[i]
        acc[0] += p * busy
        acc[1] += length
        acc[2] += busy
        if keep:
            rec_idle[k] = idle
            rec_busy[k] = busy
            rec_power[k] = p
            for i in range(n):
                rec_cnt[k, i] = cnt[i]
                rec_dsum[k, i] = dsum[i]
                rec_order[k, i] = order[i]

        top = 0.0
        if use_z:
            for i in range(n):
                z[i] = K.queue_step(z[i], dsum[i], cnt[i], m.bound[i])
                top = max(top, z[i])
        if use_y:
            for i in range(n):
                y[i] = K.queue_step(y[i], dsum[i], cnt[i], r[i])
                top = max(top, y[i])
        if use_x:
            xq[0] = K.power_queue_step(xq[0], p, busy, length, m.p_const)
            top = max(top, xq[0])
        k += 1
        if top >= ceiling:
            return _DIVERGED, k, t_now

    if keep_trace:
        for i in range(n):
            trace[k, i] = z[i]
            trace[k, n + i] = y[i]
        trace[k, 2 * n] = xq[0]
    return _OK, k, t_now


@dataclass(frozen=True)
class FrameRecord:
    index: int
    idle: float
    busy: float
    arrivals: np.ndarray
    delay_sums: np.ndarray
    power: float
    order: PriorityOrder

    @property
    def length(self) -> float:
        return self.idle + self.busy


@dataclass
class FrameRecords:
    """Columnar store of every frame of a run; indexing yields a FrameRecord."""

    idle: np.ndarray
    busy: np.ndarray
    power: np.ndarray
    arrivals: np.ndarray
    delay_sums: np.ndarray
    orders: np.ndarray

    def __len__(self) -> int:
        return self.idle.size

    def __getitem__(self, k: int) -> FrameRecord:
        return FrameRecord(int(k), float(self.idle[k]), float(self.busy[k]),
                           self.arrivals[k].copy(), self.delay_sums[k].copy(),
                           float(self.power[k]), PriorityOrder(self.orders[k]))

    @property
    def length(self) -> np.ndarray:
        return self.idle + self.busy

    def to_csv(self, path: str | Path) -> None:
        """Columns: ``k, idle, busy, length, power, order, arrivals_1..N, delay_sum_1..N``.

        ``order`` lists 1-based classes from highest to lowest priority joined by ``>``.
        """
        n = self.arrivals.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "idle", "busy", "length", "power", "order"]
                       + [f"arrivals_{i + 1}" for i in range(n)]
                       + [f"delay_sum_{i + 1}" for i in range(n)])
            for k in range(len(self)):
                w.writerow([k, repr(float(self.idle[k])), repr(float(self.busy[k])),
                            repr(float(self.idle[k] + self.busy[k])), repr(float(self.power[k])),
                            ">".join(str(int(c) + 1) for c in self.orders[k])]
                           + [int(a) for a in self.arrivals[k]]
                           + [repr(float(s)) for s in self.delay_sums[k]])


@dataclass
class QueueTrace:
    """Virtual-queue values at frame boundaries ``t_0 .. t_K`` (row ``k`` is the state frame ``k`` saw)."""

    z: np.ndarray
    y: np.ndarray
    x: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        """Columns: ``k, Z_1..Z_N, Y_1..Y_N, X``."""
        n = self.z.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"Z_{i + 1}" for i in range(n)]
                       + [f"Y_{i + 1}" for i in range(n)] + ["X"])
            for k in range(self.x.size):
                w.writerow([k] + [repr(float(v)) for v in self.z[k]]
                           + [repr(float(v)) for v in self.y[k]] + [repr(float(self.x[k]))])


@dataclass
class SimulationResult:
    config: SystemConfig
    policy: Policy
    seed: int
    frames: FrameRecords | None
    stats: RunningStats
    trace: QueueTrace | None
    final: VirtualState
    aux_service: np.ndarray = field(repr=False)

    @property
    def delays(self) -> np.ndarray:
        return average_delays(self.stats)

    @property
    def power(self) -> float | None:
        return average_power(self.stats)

    @property
    def penalty(self) -> float:
        return float(sum(f(w) for f, w in zip(self.config.penalties, self.delays)))

    def mean_rate(self) -> dict[str, np.ndarray | float]:
        k = max(self.stats.frames, 1)
        return {"z": self.final.z / k, "y": self.final.y / k, "x": self.final.x / k}

    def pathwise_slack(self) -> dict[str, np.ndarray | float]:
        """``Q_K`` minus the unclipped cumulative queue input; never negative on a valid path.

        Only queues the policy actually drives are reported.
        """
        out = {}
        s = self.stats
        name = self.policy.name
        if name in ("delayfeas", "delayfair", "dynpower", "dynpower-nm2"):
            out["z"] = self.final.z - (s.delay_sum - self.config.delay_bounds * s.arrivals)
        if name in ("delayfair", "pwdelayfair"):
            out["y"] = self.final.y - (s.delay_sum - self.aux_service)
        if name == "pwdelayfair":
            out["x"] = self.final.x - (s.energy - self.config.p_const * s.time)
        return out

    def pathwise_ok(self, rtol: float = 1e-9) -> bool:
        """True when every slack is nonnegative up to rounding in the accumulated sums."""
        s = self.stats
        scale = 1.0 + float(s.delay_sum.sum()) + s.energy + float(self.aux_service.sum())
        if self.config.p_const is not None:
            scale += self.config.p_const * s.time
        if np.isfinite(self.config.delay_bounds).all():
            scale += float(np.dot(self.config.delay_bounds, s.arrivals))
        return all(np.all(v >= -rtol * scale) for v in self.pathwise_slack().values())

    def summary_row(self) -> dict[str, float]:
        row: dict[str, float] = {"seed": self.seed, "frames": self.stats.frames}
        rates = self.mean_rate()
        for i, w in enumerate(self.delays):
            row[f"W_{i + 1}"] = float(w)
        for i, a in enumerate(self.stats.arrivals):
            row[f"arrivals_{i + 1}"] = int(a)
        row["power"] = self.power
        row["penalty"] = self.penalty
        for i, v in enumerate(rates["z"]):
            row[f"Zrate_{i + 1}"] = float(v)
        for i, v in enumerate(rates["y"]):
            row[f"Yrate_{i + 1}"] = float(v)
        row["Xrate"] = float(rates["x"])
        return row


def _check_policy(config: SystemConfig, pol: Policy) -> None:
    if pol.name in ("delayfeas", "delayfair", "dynpower", "dynpower-nm2"):
        if not np.all(np.isfinite(config.delay_bounds)):
            raise ValueError(f"{pol.name} needs a finite delay bound for every class")
    if pol.name == "pwdelayfair" and config.p_const is None:
        raise ValueError("pwdelayfair needs a power budget p_const")
    if pol.order is not None and len(pol.order) != config.n_classes:
        raise ValueError("fixed order must rank every class")


class _Streams:
    """Per-class arrival and size buffers fed from independent generators in fixed chunks."""

    def __init__(self, config: SystemConfig, seed: int, chunk: int):
        n = config.n_classes
        kids = np.random.SeedSequence(seed).spawn(2 * n)
        self.arr_rng = [np.random.Generator(np.random.Philox(s)) for s in kids[:n]]
        self.size_rng = [np.random.Generator(np.random.Philox(s)) for s in kids[n:]]
        self.config = config
        self.chunk = chunk
        self.ia = [np.empty(0)] * n
        self.sz = [np.empty(0)] * n
        self.ia_pos = np.zeros(n, dtype=np.int64)
        self.sz_pos = np.zeros(n, dtype=np.int64)
        for i in range(n):
            self.ia[i] = self._draw_ia(i)
            self.sz[i] = self._draw_sz(i)
        self.pack()

    def _draw_ia(self, i):
        return self.arr_rng[i].standard_exponential(self.chunk) / self.config.classes[i].lam

    def _draw_sz(self, i):
        return self.config.classes[i].size.sample(self.size_rng[i], self.chunk)

    def pack(self):
        n = len(self.ia)
        self.ia_len = np.array([a.size for a in self.ia], dtype=np.int64)
        self.sz_len = np.array([a.size for a in self.sz], dtype=np.int64)
        self.ia_buf = np.zeros((n, self.ia_len.max()))
        self.sz_buf = np.zeros((n, self.sz_len.max()))
        for i in range(n):
            self.ia_buf[i, : self.ia_len[i]] = self.ia[i]
            self.sz_buf[i, : self.sz_len[i]] = self.sz[i]

    def refill(self):
        n = len(self.ia)
        low_ia = [i for i in range(n) if self.ia_len[i] - self.ia_pos[i] < self.chunk]
        low_sz = [i for i in range(n) if self.sz_len[i] - self.sz_pos[i] < self.chunk]
        if not low_ia and not low_sz:
            low_ia = low_sz = list(range(n))
        for i in range(n):
            self.ia[i] = self.ia_buf[i, self.ia_pos[i]: self.ia_len[i]]
            self.sz[i] = self.sz_buf[i, self.sz_pos[i]: self.sz_len[i]]
            if i in low_ia:
                self.ia[i] = np.concatenate((self.ia[i], self._draw_ia(i)))
            if i in low_sz:
                self.sz[i] = np.concatenate((self.sz[i], self._draw_sz(i)))
        self.ia_pos[:] = 0
        self.sz_pos[:] = 0
        self.pack()


def run(config: SystemConfig, policy, frames: int, seed: int = 0, *,
        keep_frames: bool = True, keep_trace: bool = False,
        chunk: int = CHUNK) -> SimulationResult:
    """Simulate ``frames`` frames under ``policy``.

    Args:
        config: the system; must be stable at ``p_min``.
        policy: a :class:`Policy` or a policy name.
        frames: number of frames ``K >= 1``.
        seed: run seed; the same ``(config, policy, seed, frames)`` reproduces
            every record bit for bit.
        keep_frames: store one FrameRecord per frame.
        keep_trace: store the virtual-queue values at every frame boundary.

    Raises:
        DivergenceError: a busy period exceeded the event cap or a virtual
            queue passed its ceiling.
    """
    if frames < 1:
        raise ValueError("need at least one frame")
    pol = as_policy(policy)
    _check_policy(config, pol)
    n = config.n_classes
    m = model_for(config, pol)
    fixed_order = np.asarray(pol.order if pol.order is not None else range(n), dtype=np.int64)
    fixed_power = pol.fixed_power(config)

    streams = _Streams(config, seed, chunk)
    next_arr = np.empty(n)
    for i in range(n):
        next_arr[i] = streams.ia_buf[i, 0]
    streams.ia_pos[:] = 1

    qbuf = np.empty((n, 4096))
    z = np.zeros(n)
    y = np.zeros(n)
    xq = np.zeros(1)
    acc_dsum = np.zeros(n)
    acc_cnt = np.zeros(n, dtype=np.int64)
    acc_rcnt = np.zeros(n)
    acc = np.zeros(3)
    size = frames if keep_frames else 0
    rec_idle = np.zeros(size)
    rec_busy = np.zeros(size)
    rec_power = np.zeros(size)
    rec_cnt = np.zeros((size, n), dtype=np.int64)
    rec_dsum = np.zeros((size, n))
    rec_order = np.zeros((size, n), dtype=np.int8)
    trace = np.zeros((frames + 1 if keep_trace else 0, 2 * n + 1))

    k, t_now = 0, 0.0
    while True:
        status, k, t_now = _simulate(
            pol.code, m, fixed_order, fixed_power, K.POWER_GRID, k, frames, t_now,
            next_arr, streams.ia_buf, streams.ia_len, streams.ia_pos,
            streams.sz_buf, streams.sz_len, streams.sz_pos, qbuf,
            z, y, xq, acc_dsum, acc_cnt, acc_rcnt, acc,
            keep_frames, rec_idle, rec_busy, rec_power, rec_cnt, rec_dsum, rec_order,
            keep_trace, trace, EVENT_CAP, QUEUE_CEILING,
        )
        if status == _OK:
            break
        if status == _REFILL:
            streams.refill()
        elif status == _QUEUE_FULL:
            qbuf = np.empty((n, 2 * qbuf.shape[1]))
        elif status == _EVENT_CAP:
            raise DivergenceError(f"busy period of frame {k} exceeded {EVENT_CAP} events")
        else:
            raise DivergenceError(f"virtual queue passed {QUEUE_CEILING:g} in frame {k - 1}")

    stats = RunningStats(acc_dsum, acc_cnt, energy=float(acc[0]), time=float(acc[1]),
                         busy_time=float(acc[2]), frames=frames)
    records = None
    if keep_frames:
        records = FrameRecords(rec_idle, rec_busy, rec_power, rec_cnt, rec_dsum, rec_order)
    qtrace = None
    if keep_trace:
        qtrace = QueueTrace(trace[:, :n].copy(), trace[:, n: 2 * n].copy(), trace[:, 2 * n].copy())
    final = VirtualState(z, y, float(xq[0]), frames)
    return SimulationResult(config, pol, seed, records, stats, qtrace, final, acc_rcnt)


@dataclass
class ReplicationSummary:
    """Per-run estimates plus their across-run mean and standard error."""

    policy: Policy
    seeds: list[int]
    delays: np.ndarray
    power: np.ndarray
    penalty: np.ndarray
    z_rate: np.ndarray
    y_rate: np.ndarray
    x_rate: np.ndarray
    pathwise_ok: bool
    rows: list[dict] = field(default_factory=list, repr=False)

    @staticmethod
    def _se(a: np.ndarray) -> np.ndarray | float:
        if a.shape[0] < 2:
            return np.zeros(a.shape[1:]) if a.ndim > 1 else 0.0
        # shifting by the first run leaves the spread unchanged and makes identical runs give 0
        return (a - a[0]).std(axis=0, ddof=1) / math.sqrt(a.shape[0])

    @property
    def mean_delays(self) -> np.ndarray:
        return self.delays.mean(axis=0)

    @property
    def se_delays(self) -> np.ndarray:
        return self._se(self.delays)

    @property
    def mean_power(self) -> float:
        return float(self.power.mean())

    @property
    def se_power(self) -> float:
        return float(self._se(self.power))

    @property
    def mean_penalty(self) -> float:
        return float(self.penalty.mean())

    @property
    def se_penalty(self) -> float:
        return float(self._se(self.penalty))


def summarize_runs(policy, seeds: Sequence[int], results: Sequence[SimulationResult]) -> ReplicationSummary:
    """Aggregate finished runs (one per seed, same order) into a ReplicationSummary."""
    rates = [r.mean_rate() for r in results]
    return ReplicationSummary(
        policy=as_policy(policy), seeds=list(seeds),
        delays=np.array([r.delays for r in results]),
        power=np.array([r.power for r in results], dtype=float),
        penalty=np.array([r.penalty for r in results]),
        z_rate=np.array([q["z"] for q in rates]),
        y_rate=np.array([q["y"] for q in rates]),
        x_rate=np.array([q["x"] for q in rates]),
        pathwise_ok=all(r.pathwise_ok() for r in results),
        rows=[r.summary_row() for r in results],
    )


def run_replications(config: SystemConfig, policy, frames: int, seeds: Sequence[int],
                     workers: int | None = None, **kwargs) -> ReplicationSummary:
    """Independent runs, one per seed, aggregated by the arithmetic mean of per-run estimators.

    Runs go to a thread pool (the compiled kernel releases the GIL); results
    are collected in seed order. Per-frame records are not kept unless asked for.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    kwargs.setdefault("keep_frames", False)
    pol = as_policy(policy)
    workers = workers or min(len(seeds), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run, config, pol, frames, s, **kwargs) for s in seeds]
        results = [f.result() for f in futures]
    return summarize_runs(pol, seeds, results)


def write_summary_csv(rows: Sequence[dict], path: str | Path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
