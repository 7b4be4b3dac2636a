"""Minimizing average power under delay bounds with DynPower.

With a concave rate curve mu(P) = 2 sqrt(P) slower service saves energy, so the
controller has to trade power against the delay bounds frame by frame.

Run: python demos/power_control.py [--frames 200000]
"""

import argparse

import numpy as np

from mg1control.experiments import compare_to_oracle, two_class_power_system
from mg1control.oracle import min_power_target
from mg1control.simulator import run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=200_000)
    args = ap.parse_args()

    cfg = two_class_power_system(bounds=(0.3, 0.3), rate="sqrt")
    target = min_power_target(cfg)
    print(f"Lowest average power meeting W <= {cfg.delay_bounds.tolist()}: {target.average_power:.5f}")
    for pt, w in zip(target.points, target.mixture.weights):
        if w > 1e-9:
            print(f"  {w:6.3f} of the time at P = {pt.power:.4f}, order {[c + 1 for c in pt.order]}")

    vs, powers = [10.0, 100.0, 1000.0], []
    print(f"\n{'V':>6} {'W1':>8} {'W2':>8} {'avg power':>10} {'mean P chosen':>14}")
    for v in vs:
        res = run(cfg.replace(v_param=v), "dynpower", args.frames, seed=1)
        powers.append(res.power)
        print(f"{v:6.0f} {res.delays[0]:8.4f} {res.delays[1]:8.4f} {res.power:10.5f} "
              f"{np.mean(res.frames.power):14.4f}")
    rep = compare_to_oracle(vs, powers, target.average_power)
    print(f"\nGaps to the optimum: {np.round(rep.gaps, 5).tolist()} (fit c/V with c = {rep.fit_c:.3g})")


if __name__ == "__main__":
    main()
