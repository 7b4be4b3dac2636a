import csv

import numpy as np
import pytest

from mg1control import simulator
from mg1control.analytic import load_profile, priority_delays
from mg1control.core import ClassParams, JobSizeDist, PenaltyFn, RatePowerFn, SystemConfig
from mg1control.errors import DivergenceError
from mg1control.experiments import two_class_mm1, two_class_power_system
from mg1control.policies import Policy, delayfeas_decide, dynpower_decide
from mg1control.simulator import run, run_replications, write_summary_csv

from .conftest import cobham_delays


def reference_frames(config, seed, frames, decide, draws=20000):
    """Plain event loop over the same per-class streams, drawn in one block."""
    n = config.n_classes
    kids = np.random.SeedSequence(seed).spawn(2 * n)
    arr, size = [], []
    for i, c in enumerate(config.classes):
        arr.append(np.cumsum(np.random.Generator(np.random.Philox(kids[i])).standard_exponential(draws) / c.lam))
        size.append(c.size.sample(np.random.Generator(np.random.Philox(kids[n + i])), draws))
    nxt_arr = [0] * n
    nxt_job = [0] * n
    t = 0.0
    out = []
    z = np.zeros(n)
    for _ in range(frames):
        order, power = decide(z)
        mu = config.rate_fn(power)
        t0 = min(arr[i][nxt_arr[i]] for i in range(n))
        idle = t0 - t
        t = t0
        cnt, dsum = np.zeros(n, dtype=int), np.zeros(n)
        while True:
            for i in range(n):
                while arr[i][nxt_arr[i]] <= t:
                    nxt_arr[i] += 1
            waiting = [c for c in order if nxt_job[c] < nxt_arr[c]]
            if not waiting:
                break
            c = waiting[0]
            dsum[c] += t - arr[c][nxt_job[c]]
            cnt[c] += 1
            t += size[c][nxt_job[c]] / mu
            nxt_job[c] += 1
        out.append((idle, t - t0, cnt, dsum, tuple(order), power))
        z = np.maximum(z + dsum - config.delay_bounds * cnt, 0.0)
    return out


def assert_matches_reference(res, ref):
    fr = res.frames
    for k, (idle, busy, cnt, dsum, order, power) in enumerate(ref):
        assert fr.idle[k] == pytest.approx(idle, rel=1e-9, abs=1e-9)
        assert fr.busy[k] == pytest.approx(busy, rel=1e-9, abs=1e-9)
        assert np.array_equal(fr.arrivals[k], cnt)
        assert np.allclose(fr.delay_sums[k], dsum, rtol=1e-9, atol=1e-9)
        assert tuple(fr.orders[k]) == order
        assert fr.power[k] == pytest.approx(power, rel=1e-12)


@pytest.mark.parametrize("order", [(0, 1), (1, 0)])
def test_fixed_order_matches_reference_event_loop(order):
    cfg = two_class_mm1()
    res = run(cfg, Policy("fixed-order", order=order), 2000, seed=3, chunk=64)
    assert_matches_reference(res, reference_frames(cfg, 3, 2000, lambda z: (order, 1.0)))


def test_delayfeas_matches_reference_event_loop():
    cfg = two_class_mm1(bounds=(0.45, 2.05))
    res = run(cfg, "delayfeas", 2000, seed=4, chunk=50)
    ref = reference_frames(cfg, 4, 2000, lambda z: (delayfeas_decide(z).order, 1.0))
    assert_matches_reference(res, ref)


def test_dynpower_matches_reference_event_loop():
    cfg = two_class_power_system(bounds=(0.3, 0.3), rate="sqrt", v=10.0)
    res = run(cfg, "dynpower", 1000, seed=5, chunk=100)

    def decide(z):
        d = dynpower_decide(z, cfg)
        return d.order, d.power

    assert_matches_reference(res, reference_frames(cfg, 5, 1000, decide))


def test_bit_identical_reruns_and_chunk_independence(mm1):
    a = run(mm1, "delayfeas", 20000, seed=9, keep_trace=True)
    b = run(mm1, "delayfeas", 20000, seed=9, keep_trace=True)
    c = run(mm1, "delayfeas", 20000, seed=9, keep_trace=True, chunk=1000)
    for other in (b, c):
        assert np.array_equal(a.frames.idle, other.frames.idle)
        assert np.array_equal(a.frames.delay_sums, other.frames.delay_sums)
        assert np.array_equal(a.trace.z, other.trace.z)
        assert np.array_equal(a.delays, other.delays)
    d = run(mm1, "delayfeas", 20000, seed=10)
    assert not np.array_equal(a.frames.idle, d.frames.idle)


def test_fixed_order_delays_and_conservation(mm1):
    prof = load_profile(mm1, 1.0)
    for order in [(0, 1), (1, 0)]:
        expect = cobham_delays(mm1.lambdas, mm1.mean_sizes, mm1.second_moments, order)
        assert np.allclose(expect, priority_delays(prof, order))
        res = run(mm1, Policy("fixed-order", order=order), 1_000_000, seed=1, keep_frames=False)
        assert np.allclose(res.delays, expect, rtol=0.02)
        assert np.dot(prof.rho, res.delays) == pytest.approx(0.96, rel=0.02)
    assert np.allclose(cobham_delays(mm1.lambdas, mm1.mean_sizes, mm1.second_moments, (0, 1)), [0.4, 2.0])


def test_frame_moments(mm1):
    res = run(mm1, "delayfeas", 1_000_000, seed=2)
    fr = res.frames
    assert np.mean(fr.length) == pytest.approx(1 / (3 * 0.2), rel=0.01)
    assert np.allclose(fr.arrivals.mean(axis=0), mm1.lambdas / (3 * 0.2), rtol=0.01)
    assert np.allclose(fr.length, fr.idle + fr.busy)
    assert np.all(fr.idle > 0) and np.all(fr.busy > 0)
    assert np.all(fr.arrivals.sum(axis=1) >= 1)
    assert res.stats.time == pytest.approx(fr.length.sum(), rel=1e-12)
    assert res.stats.busy_time / res.stats.time == pytest.approx(0.8, rel=0.01)


def test_low_load_jobs_rarely_wait():
    cfg = SystemConfig(classes=(ClassParams(0.01, JobSizeDist.exponential(0.5), 1.0),
                                ClassParams(0.01, JobSizeDist.exponential(0.5), 1.0)))
    res = run(cfg, "delayfeas", 100_000, seed=0)
    # exactly one job per frame (the one opening it) starts service on arrival
    assert res.stats.frames / res.stats.arrivals.sum() >= 0.98


def test_order_does_not_change_frame_boundaries(mm1):
    a = run(mm1, Policy("fixed-order", order=(0, 1)), 50_000, seed=6)
    b = run(mm1, Policy("fixed-order", order=(1, 0)), 50_000, seed=6)
    assert np.array_equal(a.frames.arrivals, b.frames.arrivals)
    assert np.allclose(a.frames.busy, b.frames.busy, rtol=1e-9)
    assert np.allclose(a.frames.idle, b.frames.idle, rtol=1e-9, atol=1e-9)
    assert not np.allclose(a.frames.delay_sums, b.frames.delay_sums)


def test_kernel_decisions_match_library(power_sqrt):
    from mg1control.policies import pwdelayfair_decide
    cfg = power_sqrt.replace(v_param=20.0)
    res = run(cfg, "pwdelayfair", 300, seed=1, keep_trace=True)
    tr = res.trace
    for k in range(300):
        d = pwdelayfair_decide(tr.x[k], tr.y[k], cfg)
        assert tuple(res.frames.orders[k]) == d.order
        assert res.frames.power[k] == d.power


def test_replication_summary(mm1):
    same = run_replications(mm1, "delayfeas", 5000, [7, 7, 7])
    assert np.all(same.se_delays == 0) and same.se_penalty == 0
    one = run_replications(mm1, "delayfeas", 5000, [7])
    single = run(mm1, "delayfeas", 5000, seed=7)
    assert np.array_equal(one.mean_delays, single.delays)
    assert one.se_power == 0.0
    many = run_replications(mm1, "delayfeas", 5000, [1, 2, 3])
    assert np.allclose(many.se_delays, many.delays.std(axis=0, ddof=1) / np.sqrt(3))
    assert many.pathwise_ok


def test_pathwise_bounds_hold(power_sqrt):
    for pol in ["delayfeas", "delayfair", "dynpower", "dynpower-nm2", "pwdelayfair"]:
        res = run(power_sqrt.replace(v_param=10.0), pol, 20_000, seed=3, keep_frames=False)
        assert res.pathwise_ok()
        assert all(np.all(np.asarray(v) >= -1e-6) for v in res.pathwise_slack().values())


def test_validation_errors(mm1):
    with pytest.raises(ValueError):
        run(mm1, "delayfeas", 0)
    with pytest.raises(ValueError):
        run(mm1.with_bounds((np.inf, 1.0)), "delayfeas", 10)
    with pytest.raises(ValueError):
        run(two_class_power_system(), "pwdelayfair", 10)
    with pytest.raises(ValueError):
        run(mm1, Policy("fixed-order", order=(0,)), 10)
    with pytest.raises(ValueError):
        run(two_class_power_system(), Policy("delayfeas", power=20.0), 10)
    with pytest.raises(ValueError):
        run_replications(mm1, "delayfeas", 10, [])


def test_event_cap_raises(mm1, monkeypatch):
    monkeypatch.setattr(simulator, "EVENT_CAP", 3)
    with pytest.raises(DivergenceError):
        run(mm1, "delayfeas", 10_000, seed=0)


def test_csv_outputs(mm1, tmp_path):
    res = run(mm1, "delayfeas", 50, seed=0, keep_trace=True)
    res.frames.to_csv(tmp_path / "f.csv")
    res.trace.to_csv(tmp_path / "q.csv")
    write_summary_csv([res.summary_row()], tmp_path / "s.csv")
    with open(tmp_path / "f.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["k", "idle", "busy", "length", "power", "order",
                             "arrivals_1", "arrivals_2", "delay_sum_1", "delay_sum_2"]
    assert len(rows) == 50 and set(r["order"] for r in rows) <= {"1>2", "2>1"}
    with open(tmp_path / "q.csv") as fh:
        q = list(csv.DictReader(fh))
    assert list(q[0]) == ["k", "Z_1", "Z_2", "Y_1", "Y_2", "X"] and len(q) == 51
    assert float(q[0]["Z_1"]) == 0.0
    with open(tmp_path / "s.csv") as fh:
        s = list(csv.DictReader(fh))
    assert float(s[0]["W_1"]) == pytest.approx(res.delays[0])


def test_nonexponential_sizes_and_tabulated_rate():
    cfg = SystemConfig(
        classes=(ClassParams(0.5, JobSizeDist.two_point(0.5, 2.0, 0.2), 3.0, PenaltyFn.linear(1.0)),
                 ClassParams(0.5, JobSizeDist.deterministic(0.6), 3.0)),
        rate_fn=RatePowerFn.tabulated([1.0, 2.0, 4.0], [1.0, 1.5, 2.0]), p_min=1.0, p_max=4.0)
    res = run(cfg, Policy("fixed-order", order=(1, 0), power=2.0), 300_000, seed=0, keep_frames=False)
    prof = load_profile(cfg, 2.0)
    assert np.allclose(res.delays, priority_delays(prof, (1, 0)), rtol=0.03)
