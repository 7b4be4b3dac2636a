import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mg1control.experiments import (
    CSV_VERSION,
    FAIRNESS_OPTIMUM,
    FAIRNESS_REFERENCE,
    Scenario,
    compare_to_oracle,
    format_table,
    load_scenario,
    run_scenario,
    two_class_mm1,
    write_scenario_csv,
)

ROOT = Path(__file__).resolve().parent.parent


def small(policy="delayfeas", **kw):
    kw.setdefault("frames", 3000)
    kw.setdefault("reps", 2)
    return Scenario(name="t", config=two_class_mm1(), policy=policy, **kw)


def test_rows_follow_declaration_order():
    sc = small(bound_sets=[(2.05, 0.45), (0.45, 2.05), (1.25, 1.25)], v_values=[10, 1])
    res = run_scenario(sc, workers=3)
    assert [(r["V"], r["d_1"]) for r in res.rows] == [
        (10, 2.05), (10, 0.45), (10, 1.25), (1, 2.05), (1, 0.45), (1, 1.25)]
    assert [r["point"] for r in res.rows] == list(range(6))


def test_rerun_is_bit_identical_and_worker_count_irrelevant():
    sc = small("delayfair", v_values=[10, 100])
    a = run_scenario(sc, workers=1)
    b = run_scenario(sc, workers=4)
    assert a.rows == b.rows


def test_empty_v_sweep(tmp_path):
    res = run_scenario(small(v_values=[]))
    assert res.rows == []
    write_scenario_csv(res, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().startswith(f"# {CSV_VERSION}")
    assert "no parameter points" in format_table(res)


def test_csv_header_and_columns(tmp_path):
    res = run_scenario(small(v_values=[10]))
    write_scenario_csv(res, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith(f"# {CSV_VERSION}")
    row = next(csv.DictReader(lines[1:]))
    assert list(row)[:6] == ["point", "V", "d_1", "d_2", "W_1", "se_W_1"]
    assert float(row["W_1"]) == res.rows[0]["W_1"]
    for key in ("penalty", "power", "Zrate_1", "Yrate_2", "Xrate", "pathwise_ok"):
        assert key in row


def test_failure_names_the_point():
    sc = small(bound_sets=[(1.0, 1.0), (np.inf, 1.0)])
    with pytest.raises(RuntimeError, match="point 1"):
        run_scenario(sc)


def test_scenario_validation():
    with pytest.raises(ValueError):
        small("nonsense")
    with pytest.raises(ValueError):
        small(bound_sets=[(1.0,)])
    with pytest.raises(ValueError):
        small(frames=0)


def test_bundled_scenarios_load():
    for path in sorted((ROOT / "scenarios").glob("*.json")):
        sc = load_scenario(path)
        assert sc.points()
    fair = load_scenario(ROOT / "scenarios" / "fairness_sweep.json")
    assert [v for v, _ in fair.points()] == [100, 1000, 5000, 10000]
    assert fair.reps == 10 and fair.frames == 10**6


def test_fairness_queue_metrics_shrink_with_smaller_v():
    sc = small("delayfair", v_values=[100, 10000], frames=100_000, reps=3)
    lo, hi = run_scenario(sc).rows
    assert lo["Zrate_1"] + lo["Zrate_2"] <= hi["Zrate_1"] + hi["Zrate_2"]
    assert lo["Yrate_1"] + lo["Yrate_2"] <= hi["Yrate_1"] + hi["Yrate_2"]


def test_reference_table_gaps():
    vs = sorted(FAIRNESS_REFERENCE)
    rep = compare_to_oracle(vs, [FAIRNESS_REFERENCE[v][2] for v in vs], FAIRNESS_OPTIMUM[1], noise=0.01)
    assert np.allclose(rep.gaps, [0.225, 0.031, 0.008, -0.003], atol=1e-9)
    assert rep.monotone and rep.fit_c > 0


def test_compare_to_oracle_exact_fit():
    v = [10, 100, 1000]
    rep = compare_to_oracle(v, [5 + 3 / x for x in v], 5.0)
    assert rep.fit_c == pytest.approx(3.0) and rep.fit_r2 == pytest.approx(1.0)
    assert rep.monotone
    rep = compare_to_oracle([1e12], [5.0], 5.0)
    assert rep.gaps[0] == 0.0
    rep = compare_to_oracle([10, 100], [5.0, 5.5], 5.0)
    assert not rep.monotone


def cli(*args, env_dir=None, cwd=None):
    env = dict(os.environ)
    if env_dir is not None:
        env["MG1CONTROL_OUTPUT_DIR"] = str(env_dir)
    return subprocess.run([sys.executable, "-m", "mg1control", *args], capture_output=True,
                          text=True, env=env, cwd=cwd, timeout=600)


def test_cli_simulate_with_trace(tmp_path):
    cfg = ROOT / "configs" / "two_class_mm1.json"
    r = cli("simulate", "--config", str(cfg), "--policy", "delayfeas", "--frames", "500",
            "--reps", "2", "--seed", "3", "--out", "run.csv", "--trace", env_dir=tmp_path)
    assert r.returncode == 0, r.stderr
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["run.csv", "run_frames_seed3.csv", "run_frames_seed4.csv",
                     "run_queues_seed3.csv", "run_queues_seed4.csv"]
    rows = list(csv.DictReader(open(tmp_path / "run.csv")))
    assert [int(r["seed"]) for r in rows] == [3, 4]


def test_cli_scenario_and_empty_sweep(tmp_path):
    scenario_doc = {"name": "empty", "config": "two-class-mm1", "policy": "delayfair", "v_values": [],
            "frames": 100, "reps": 1}
    (tmp_path / "e.json").write_text(json.dumps(scenario_doc))
    r = cli("scenario", "run", str(tmp_path / "e.json"), env_dir=tmp_path)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "empty.csv").exists()
    scenario_doc.update(name="one", v_values=[10], frames=200)
    (tmp_path / "o.json").write_text(json.dumps(scenario_doc))
    r = cli("scenario", "run", str(tmp_path / "o.json"), "--out", "one_out.csv", env_dir=tmp_path)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "one_out.csv").read_text().count("\n") == 3


def test_cli_oracle(tmp_path):
    r = cli("oracle", "penalty", "--config", str(ROOT / "configs" / "two_class_mm1.json"))
    assert r.returncode == 0, r.stderr
    out = json.loads(r.stdout)
    assert np.allclose(out["delays"], [1.92, 0.48], atol=1e-4)
    assert out["penalty"] == pytest.approx(2.304, abs=1e-6)
    r = cli("oracle", "power", "--config", str(ROOT / "configs" / "two_class_power_sqrt.json"))
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["average_power"] == pytest.approx(3.3646, abs=1e-3)


def test_cli_exit_codes(tmp_path):
    cfg = str(ROOT / "configs" / "two_class_mm1.json")
    assert cli("oracle", "power", "--config", cfg, "--bounds", "0.1,0.1").returncode == 3
    assert cli("simulate", "--config", cfg, "--policy", "delayfeas", "--frames", "0",
               env_dir=tmp_path).returncode == 2
    assert cli("simulate", "--config", str(tmp_path / "missing.json"), "--policy", "delayfeas",
               env_dir=tmp_path).returncode == 2
    assert cli("simulate", "--config", cfg, "--policy", "bogus").returncode == 2
