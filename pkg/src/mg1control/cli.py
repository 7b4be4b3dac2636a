"""Command-line entry point: ``simulate``, ``scenario run`` and ``oracle``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import load_config
from .errors import CapabilityError, DivergenceError, InfeasibleError, UnstableConfigError
from .experiments import format_table, load_scenario, output_dir, run_scenario, write_scenario_csv
from .oracle import min_penalty_power_target, min_penalty_target, min_power_target
from .policies import POLICY_CODES, Policy
from .simulator import run, write_summary_csv

EXIT_USAGE, EXIT_INFEASIBLE, EXIT_DIVERGED = 2, 3, 4


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    out = output_dir(".")
    out.mkdir(parents=True, exist_ok=True)
    return out / p


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.v is not None:
        config = config.replace(v_param=args.v)
    if args.bounds is not None:
        config = config.with_bounds(_floats(args.bounds))
    order = None if args.order is None else tuple(int(c) - 1 for c in args.order.split(","))
    policy = Policy(args.policy, order=order, power=args.power)
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in range(args.reps):
        seed = args.seed + r
        res = run(config, policy, args.frames, seed, keep_frames=args.trace, keep_trace=args.trace)
        rows.append(res.summary_row())
        if args.trace:
            res.frames.to_csv(out.with_name(f"{out.stem}_frames_seed{seed}.csv"))
            res.trace.to_csv(out.with_name(f"{out.stem}_queues_seed{seed}.csv"))
    write_summary_csv(rows, out)
    n = config.n_classes
    w = np.array([[row[f"W_{i + 1}"] for i in range(n)] for row in rows])
    print(f"{args.policy}: {args.reps} run(s) x {args.frames} frames -> {out}")
    print("mean delays: " + ", ".join(f"{x:.5g}" for x in w.mean(axis=0)))
    print(f"mean power: {np.mean([row['power'] for row in rows]):.5g}")
    print(f"mean penalty: {np.mean([row['penalty'] for row in rows]):.5g}")
    return 0


def _cmd_scenario(args) -> int:
    scenario = load_scenario(args.file)
    result = run_scenario(scenario)
    out = _resolve(args.out if args.out else f"{scenario.name}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scenario_csv(result, out)
    print(format_table(result), end="")
    print(f"wrote {out}")
    return 0


def _cmd_oracle(args) -> int:
    config = load_config(args.config)
    bounds = None if args.bounds is None else _floats(args.bounds)
    if args.kind == "penalty" and args.budget is not None:
        t = min_penalty_power_target(config, p_const=args.budget)
        report = {"delays": t.delays.tolist(), "penalty": t.value,
                  "average_power": t.average_power, "iterations": t.iterations}
    elif args.kind == "penalty":
        t = min_penalty_target(config, delay_bounds=bounds, power=args.power)
        report = {"delays": t.delays.tolist(), "penalty": t.value,
                  "iterations": t.iterations, "gap": t.gap}
    else:
        t = min_power_target(config, bounds)
        report = {
            "average_power": t.average_power,
            "delays": t.delays.tolist(),
            "points": [{"power": p.power, "order": [c + 1 for c in p.order], "weight": float(w)}
                       for p, w in zip(t.points, t.mixture.weights)],
        }
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mg1control", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate one policy on one config")
    sim.add_argument("--config", required=True, help="system config (JSON)")
    sim.add_argument("--policy", required=True, choices=sorted(POLICY_CODES))
    sim.add_argument("--frames", type=int, default=1_000_000)
    sim.add_argument("--reps", type=int, default=1)
    sim.add_argument("--seed", type=int, default=0, help="seed of the first replication")
    sim.add_argument("--out", default="summary.csv", help="summary CSV path")
    sim.add_argument("--trace", action="store_true", help="also write per-frame and queue traces")
    sim.add_argument("--order", help="fixed-order priority, 1-based, e.g. 1,2")
    sim.add_argument("--power", type=float, help="constant power for fixed-power policies")
    sim.add_argument("--v", type=float, help="override the control parameter V")
    sim.add_argument("--bounds", help="override delay bounds, e.g. 1.25,1.25")
    sim.set_defaults(func=_cmd_simulate)

    scen = sub.add_parser("scenario", help="scenario sweeps")
    scen_sub = scen.add_subparsers(dest="action", required=True)
    scen_run = scen_sub.add_parser("run", help="run a scenario file")
    scen_run.add_argument("file")
    scen_run.add_argument("--out", help="CSV path (default <name>.csv in the output dir)")
    scen_run.set_defaults(func=_cmd_scenario)

    orc = sub.add_parser("oracle", help="optimal targets for a config")
    orc.add_argument("kind", choices=["penalty", "power"])
    orc.add_argument("--config", required=True)
    orc.add_argument("--bounds", help="delay bounds, e.g. 2,2 (default: from config)")
    orc.add_argument("--power", type=float, help="constant power for the penalty oracle")
    orc.add_argument("--budget", type=float, help="average-power budget for the penalty oracle")
    orc.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UnstableConfigError, CapabilityError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
