"""Delay fairness under an average-power budget with PwDelayFair.

Run: python demos/power_budget.py [--frames 200000] [--budget 3.6]
"""

import argparse

import numpy as np

from mg1control.experiments import two_class_power_system
from mg1control.oracle import min_penalty_power_target
from mg1control.simulator import run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=200_000)
    ap.add_argument("--budget", type=float, default=3.6)
    args = ap.parse_args()

    cfg = two_class_power_system(bounds=(np.inf, np.inf), rate="sqrt", p_const=args.budget)
    target = min_penalty_power_target(cfg)
    print(f"Budget {args.budget}: best penalty {target.value:.5f} at W = {np.round(target.delays, 4)}")

    print(f"\n{'V':>6} {'W1':>8} {'W2':>8} {'penalty':>9} {'avg power':>10} {'X/K':>9}")
    for v in (10.0, 100.0, 1000.0):
        res = run(cfg.replace(v_param=v), "pwdelayfair", args.frames, seed=2, keep_frames=False)
        print(f"{v:6.0f} {res.delays[0]:8.4f} {res.delays[1]:8.4f} {res.penalty:9.4f} "
              f"{res.power:10.4f} {res.mean_rate()['x']:9.5f}")
    print("\nThe power queue X keeps the long-run power at the budget; V trades fairness for backlog.")


if __name__ == "__main__":
    main()
