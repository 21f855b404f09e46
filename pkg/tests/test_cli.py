import csv
import json

import pytest

from resguard.cli import (
    EXIT_CONFIG,
    EXIT_DEPENDENCY,
    EXIT_OK,
    load_config,
    main,
)


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """Run the full desk-scale pipeline once; several tests inspect it."""
    out = tmp_path_factory.mktemp("run")
    config = {
        "version": 1,
        "seed": 3,
        "output_dir": str(out),
        "plant": {"preset": "desk", "steps": 600, "overrides": {"critical_sensors": [0, 1]}},
        "model_family": "linear",
        "calibration": {"target_period_steps": 60.0},
        "attack": {"budget": 2, "budgets": [0, 1, 2, 3], "rows": 4},
        "defense": {"gamma": 0.0, "epsilon": 0.1, "n_max": 3, "horizon": 2},
    }
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(config))
    for command in ("simulate", "train", "calibrate", "attack", "defend", "report"):
        assert main([command, "--config", str(cfg_path)]) == EXIT_OK, command
    return out, cfg_path


def test_pipeline_artifacts_exist(pipeline_dir):
    out, _ = pipeline_dir
    for rel in (
        "data/clean.csv",
        "data/roles.json",
        "models/bank.json",
        "models/mse_table.csv",
        "thresholds/baseline.json",
        "attack/per_sensor.csv",
        "attack/budget_sweep.csv",
        "attack/trajectory.csv",
        "attack/attack_report.json",
        "defense/thresholds_resilient.json",
        "defense/trace.csv",
        "defense/report.json",
        "report/summary.json",
    ):
        assert (out / rel).exists(), rel


def test_simulate_idempotent(pipeline_dir):
    out, cfg_path = pipeline_dir
    before = (out / "data" / "clean.csv").read_bytes()
    assert main(["simulate", "--config", str(cfg_path)]) == EXIT_OK
    assert (out / "data" / "clean.csv").read_bytes() == before


def test_budget_sweep_monotone_and_anchored(pipeline_dir):
    out, _ = pipeline_dir
    with open(out / "attack" / "budget_sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    objectives = [float(r["objective"]) for r in rows]
    budgets = [int(r["budget"]) for r in rows]
    assert budgets == sorted(budgets)
    for a, b in zip(objectives, objectives[1:]):
        assert b <= a + 1e-9  # minimize: more budget never hurts

    # Zero budget: the attacked value equals the chosen target's clean value.
    report = json.loads((out / "attack" / "attack_report.json").read_text())
    b0 = next(r for r in report["budget_sweep"] if r["budget"] == 0)
    assert b0["feasible"] is True
    with open(out / "attack" / "per_sensor.csv", newline="") as fh:
        clean_values = {r["sensor"]: float(r["clean_value"]) for r in csv.DictReader(fh)}
    assert b0["objective"] == pytest.approx(clean_values[b0["target"]], abs=1e-12)


def test_defense_report_guarantees(pipeline_dir):
    out, _ = pipeline_dir
    report = json.loads((out / "defense" / "report.json").read_text())
    assert report["final_false_alarms"] <= report["baseline_false_alarms"] + report["gamma"]
    assert report["final_worst_impact"] <= report["baseline_worst_impact"] + 1e-9


def test_dependency_error_exit_code(tmp_path):
    cfg = {"version": 1, "output_dir": str(tmp_path / "empty")}
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["attack", "--config", str(cfg_path)]) == EXIT_DEPENDENCY


def test_config_error_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad)]) == EXIT_CONFIG
    versioned = tmp_path / "v.json"
    versioned.write_text(json.dumps({"version": 99}))
    assert main(["simulate", "--config", str(versioned)]) == EXIT_CONFIG
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_cli_overrides(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"version": 1, "output_dir": str(tmp_path / "a")}))
    assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "b"), "--seed", "9"]) == EXIT_OK
    assert (tmp_path / "b" / "data" / "clean.csv").exists()
    assert not (tmp_path / "a").exists()


def test_load_config_merges_defaults(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"version": 1, "attack": {"budget": 5}}))
    cfg = load_config(str(cfg_path))
    assert cfg["attack"]["budget"] == 5
    assert cfg["attack"]["direction"] == "minimize"  # default preserved
    assert cfg["model_family"] == "linear"
