import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mg1control.analytic import expected_frame_size_at, power_cost_rate, power_priority_delays
from mg1control.core import PenaltyFn
from mg1control.experiments import two_class_power_system
from mg1control.policies import (
    Policy,
    default_r_max,
    delayfair_aux,
    delayfair_decide,
    delayfeas_decide,
    dynpower_decide,
    dynpower_decide_no_m2,
    dynpower_no_m2_objective,
    dynpower_objective,
    pwdelayfair_decide,
    pwdelayfair_objective,
    second_moment_scale,
)

DENSE = 10**6


def dense_argmin(f, cfg):
    grid = np.linspace(cfg.p_min, cfg.p_max, DENSE + 1)
    vals = f(grid)
    i = int(np.argmin(vals))
    return grid[i], vals[i]


def test_delayfeas_examples():
    assert delayfeas_decide([5, 2, 7]).order == (2, 0, 1)
    assert delayfeas_decide([0, 0]).order == (0, 1)
    assert delayfeas_decide([3, 3, 3, 3]).order == (0, 1, 2, 3)


def test_delayfair_order_examples(power_sys):
    from mg1control.core import ClassParams, JobSizeDist, SystemConfig
    cfg = SystemConfig(classes=(ClassParams(0.1, JobSizeDist.deterministic(2.0)),
                                ClassParams(0.1, JobSizeDist.deterministic(1.0))))
    assert delayfair_decide([2, 1], [2, 3], cfg).order == (1, 0)
    assert delayfair_decide([0, 0], [0, 0], cfg).order == (0, 1)
    single = SystemConfig(classes=(ClassParams(0.1, JobSizeDist.deterministic(2.0)),))
    assert delayfair_decide([4], [1], single).order == (0,)


def test_aux_examples():
    q = PenaltyFn.quadratic(1.0)
    assert delayfair_aux(50, 1, q, 100, 2) == pytest.approx(0.5)
    assert delayfair_aux(1e6, 1, q, 100, 2) == 2.0
    for f in (q, PenaltyFn.linear(1.0), PenaltyFn.tabulated([0, 0.1, 0.5, 2.0], 0.5)):
        assert delayfair_aux(0.0, 1.0, f, 10.0, 3.0) == 0.0


tabulated = st.lists(st.floats(0.0, 5.0), min_size=1, max_size=8).map(
    lambda inc: PenaltyFn.tabulated(np.concatenate(([0.0], np.cumsum(np.cumsum(inc)))), 0.4))


@given(tabulated, st.floats(0, 200), st.floats(0.1, 5), st.floats(0.5, 100), st.floats(0.1, 6))
def test_aux_first_order_optimality(f, y, lam, v, d):
    r = delayfair_aux(y, lam, f, v, d)
    assert 0.0 <= r <= d
    obj = lambda x: v * f(x) - y * lam * x  # noqa: E731
    grid = np.linspace(0, d, 4001)
    assert obj(r) <= np.min(obj(grid)) + 1e-7 * (1 + abs(np.min(obj(grid))))
    h = 1e-6 * d
    slope = lambda a, b: (obj(b) - obj(a)) / (b - a)  # noqa: E731
    tol = 1e-3 * (1 + v * f.derivative(d) + y * lam)
    if r > h:
        assert slope(r - h, r) <= tol
    if r < d - h:
        assert slope(r, r + h) >= -tol


@given(st.floats(0.01, 100), st.floats(0.1, 5), st.floats(0.5, 100), st.floats(0.1, 6), st.floats(0.1, 5))
def test_aux_quadratic_closed_form(y, lam, v, d, c):
    assert delayfair_aux(y, lam, PenaltyFn.quadratic(c), v, d) == pytest.approx(min(d, y * lam / (v * c)))


def test_dynpower_zero_queues_picks_p_min(power_sys, power_sqrt):
    for cfg in (power_sys, power_sqrt):
        assert dynpower_decide([0, 0], cfg).power == cfg.p_min
        assert dynpower_decide_no_m2([0, 0], cfg).power == cfg.p_min


def test_dynpower_huge_v_minimizes_power_cost(power_sqrt):
    assert dynpower_decide([5, 5], power_sqrt.replace(v_param=1e9)).power == pytest.approx(4.0)


@pytest.mark.parametrize("rate", ["linear", "sqrt"])
@pytest.mark.parametrize("z", [(1.0, 1.0), (3.0, 0.2), (0.0, 4.0), (50.0, 1.0)])
def test_dynpower_matches_dense_grid(rate, z):
    cfg = two_class_power_system(rate=rate, v=1.0)
    dec = dynpower_decide(z, cfg)
    p_ref, v_ref = dense_argmin(lambda p: dynpower_objective(cfg, z, dec.order, p), cfg)
    assert dynpower_objective(cfg, z, dec.order, dec.power) <= v_ref + 1e-10 * abs(v_ref)


@pytest.mark.parametrize("z", [(1.0, 0.0), (2.0, 5.0)])
def test_dynpower_no_m2_matches_dense_grid(z):
    cfg = two_class_power_system(rate="sqrt", v=1.0)
    dec = dynpower_decide_no_m2(z, cfg, v_tilde=1.0)
    _, v_ref = dense_argmin(lambda p: dynpower_no_m2_objective(cfg, z, dec.order, p, 1.0), cfg)
    assert dynpower_no_m2_objective(cfg, z, dec.order, dec.power, 1.0) <= v_ref + 1e-10 * abs(v_ref)


def test_pwdelayfair_examples(power_sqrt):
    cfg = power_sqrt.replace(v_param=10.0)
    dec = pwdelayfair_decide(0.0, [0, 0], cfg)
    assert dec.power == cfg.p_min and np.all(dec.aux == 0)
    assert pwdelayfair_decide(1e9, [0, 0], cfg).power == cfg.p_min
    lin = two_class_power_system(rate="linear", p_const=3.5)
    assert pwdelayfair_decide(1e9, [0, 0], lin).power == lin.p_min


@pytest.mark.parametrize("rate", ["linear", "sqrt"])
def test_pwdelayfair_matches_dense_grid(rate):
    cfg = two_class_power_system(rate=rate, p_const=4.0, v=1.0)
    dec = pwdelayfair_decide(1.0, [1.0, 1.0], cfg)
    _, v_ref = dense_argmin(lambda p: pwdelayfair_objective(cfg, 1.0, [1, 1], dec.order, p), cfg)
    assert pwdelayfair_objective(cfg, 1.0, [1, 1], dec.order, dec.power) <= v_ref + 1e-10 * abs(v_ref)
    assert np.all(dec.aux <= default_r_max(cfg))


def test_default_r_max(power_sqrt):
    worst = max(power_priority_delays(power_sqrt, 4.0, o).max() for o in [(0, 1), (1, 0)])
    assert np.allclose(default_r_max(power_sqrt), 2 * worst)


queue_vec = st.lists(st.floats(0, 1e4), min_size=2, max_size=2)


def test_scale_invariance_on_random_states(power_sqrt):
    rng = np.random.default_rng(11)
    for _ in range(1000):
        z, y = rng.exponential(10.0, 2), rng.exponential(10.0, 2)
        x = float(rng.exponential(5.0))
        k = float(rng.uniform(0.01, 100))
        assert delayfeas_decide(z).order == delayfeas_decide(k * z).order
        assert delayfair_decide(z, y, power_sqrt).order == delayfair_decide(k * z, k * y, power_sqrt).order
        assert dynpower_decide(z, power_sqrt).order == dynpower_decide(k * z, power_sqrt).order
        assert (pwdelayfair_decide(x, y, power_sqrt).order
                == pwdelayfair_decide(k * x, k * y, power_sqrt).order)


@given(queue_vec)
def test_priority_is_decoupled_from_power(z):
    cfg = two_class_power_system(rate="sqrt")
    dec = dynpower_decide(z, cfg)
    lam = cfg.lambdas
    for P in np.linspace(4, 10, 10):
        cost = {o: float(np.dot(np.asarray(z) * lam, power_priority_delays(cfg, P, o)))
                for o in itertools.permutations(range(2))}
        assert cost[tuple(dec.order)] <= min(cost.values()) * (1 + 1e-12) + 1e-300


def test_no_m2_variant_matches_on_random_states():
    cfg = two_class_power_system(rate="sqrt", v=37.0)
    r_hat = second_moment_scale(cfg)
    rng = np.random.default_rng(5)
    for _ in range(100):
        z = rng.exponential(50.0, 2)
        a = dynpower_decide(z, cfg)
        b = dynpower_decide_no_m2(z, cfg, v_tilde=cfg.v_param / r_hat)
        assert a.order == b.order
        assert a.power == pytest.approx(b.power, abs=1e-9 * (cfg.p_max - cfg.p_min))


def test_chosen_power_beats_random_samples(power_sqrt):
    rng = np.random.default_rng(2)
    for _ in range(20):
        z = rng.exponential(20.0, 2)
        dec = dynpower_decide(z, power_sqrt)
        samples = rng.uniform(4, 10, 1000)
        assert dynpower_objective(power_sqrt, z, dec.order, dec.power) <= np.min(
            dynpower_objective(power_sqrt, z, dec.order, samples)) + 1e-12


def test_random_mixtures_never_beat_the_deterministic_choice(power_sqrt):
    cfg = power_sqrt.replace(v_param=20.0)
    rng = np.random.default_rng(8)
    lam, d = cfg.lambdas, cfg.delay_bounds
    orders = list(itertools.permutations(range(2)))

    def per_time(P, order, z):
        return cfg.v_param * power_cost_rate(cfg, P) + float(
            np.dot(z * lam, power_priority_delays(cfg, P, order) - d))

    for _ in range(50):
        z = rng.exponential(10.0, 2)
        dec = dynpower_decide(z, cfg)
        best = per_time(dec.power, dec.order, z)
        for _ in range(20):
            m = rng.integers(1, 5)
            Ps = rng.uniform(4, 10, m)
            os_ = [orders[i] for i in rng.integers(0, 2, m)]
            alpha = rng.dirichlet(np.ones(m))
            frame = np.array([expected_frame_size_at(cfg, P) for P in Ps])
            num = sum(a * t * per_time(P, o, z) for a, t, P, o in zip(alpha, frame, Ps, os_))
            assert num / np.dot(alpha, frame) >= best - 1e-9 * abs(best)


def test_policy_validation():
    with pytest.raises(ValueError):
        Policy("nonsense")
    with pytest.raises(ValueError):
        Policy("fixed-order")
    assert Policy("fixed-order", order=(1, 0)).order == (1, 0)
