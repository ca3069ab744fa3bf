import json
import os

import pytest

from sbdsim.cli import load_config, main, run_validation_battery

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
CONSTANT = os.path.join(CONFIG_DIR, "constant_demo.json")
PAIRWISE = os.path.join(CONFIG_DIR, "pairwise_demo.json")
CELLS = os.path.join(CONFIG_DIR, "cells_demo.json")


def write_config(tmp_path, body, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(body) if isinstance(body, dict) else body)
    return str(path)


def tree_bytes(root):
    out = {}
    for base, _, files in os.walk(root):
        for f in files:
            p = os.path.join(base, f)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_writes_the_documented_files(tmp_path, capsys):
    out = str(tmp_path / "run")
    code = main(["simulate", "--config", CONSTANT, "--out", out,
                 "--snapshot-times", "0,5,10"])
    assert code == 0
    for name in ("events.csv", "final_state.json", "summary.json",
                 "config.json", "provenance.json",
                 "snapshot_000.json", "snapshot_001.json", "snapshot_002.json"):
        assert os.path.exists(os.path.join(out, name)), name
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["horizon"] == 10.0 and summary["seed"] == 7
    events = open(os.path.join(out, "events.csv")).read().strip().split("\n")
    assert events[0] == "time,kind,point_id,x1"
    assert summary["events"] == len(events) - 1
    snap = json.loads(open(os.path.join(out, "snapshot_000.json")).read())
    assert snap["time"] == 0.0 and snap["points"] == []
    assert "events" in capsys.readouterr().out


def test_simulate_reruns_are_byte_identical(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", CONSTANT, "--out", a]) == 0
    assert main(["simulate", "--config", CONSTANT, "--out", b]) == 0
    assert tree_bytes(a) == tree_bytes(b)


def test_seed_override_changes_the_run(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", CONSTANT, "--out", a, "--seed", "99"]) == 0
    assert main(["simulate", "--config", CONSTANT, "--out", b]) == 0
    assert open(os.path.join(a, "events.csv")).read() != \
        open(os.path.join(b, "events.csv")).read()
    assert json.load(open(os.path.join(a, "config.json")))["seed"] == 99


def test_simulate_rejects_snapshots_outside_horizon(tmp_path, capsys):
    out = str(tmp_path / "x")
    code = main(["simulate", "--config", CONSTANT, "--out", out,
                 "--snapshot-times", "0,11"])
    assert code == 2
    assert "config error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# config loading and errors
# ---------------------------------------------------------------------------

def test_malformed_json_reports_position(tmp_path, capsys):
    bad = write_config(tmp_path, '{"space": {,}')
    code = main(["simulate", "--config", bad, "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "line" in err and "column" in err


def test_unknown_model_type_is_a_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "space": {"dimension": 1, "lengths": [1.0], "intensity": 1.0},
        "model": {"type": "galactic"}, "seed": 1, "run": {}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "galactic" in capsys.readouterr().err


def test_unknown_space_field_rejected(tmp_path):
    cfg = write_config(tmp_path, {
        "space": {"dimension": 1, "lengths": [1.0], "wrap": True},
        "model": {"type": "constant", "rate": 1.0}, "seed": 1, "run": {}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_bad_snapshot_times_flag(tmp_path, capsys):
    code = main(["simulate", "--config", CONSTANT, "--out", str(tmp_path / "o"),
                 "--snapshot-times", "1,abc"])
    assert code == 2
    assert "snapshot-times" in capsys.readouterr().err


def test_thread_count_validated(tmp_path):
    assert main(["simulate", "--config", CONSTANT, "--out", str(tmp_path / "o"),
                 "--threads", "0"]) == 2


def test_load_config_applies_overrides(tmp_path):
    cfg = load_config(CONSTANT, {"seed": 123, "horizon": 3.0, "replicates": None})
    assert cfg.seed == 123
    assert cfg.run["horizon"] == 3.0
    assert cfg.run["replicates"] == 50  # untouched by a None override


# ---------------------------------------------------------------------------
# perfect-sample
# ---------------------------------------------------------------------------

def test_perfect_sample_outputs(tmp_path):
    out = str(tmp_path / "ps")
    code = main(["perfect-sample", "--config", PAIRWISE, "--out", out,
                 "--replicates", "6", "--threads", "2"])
    assert code == 0
    rows = open(os.path.join(out, "coalescence.csv")).read().strip().split("\n")
    assert rows[0] == "replicate,seed,status,lookback,count"
    assert len(rows) == 7
    for i in range(6):
        body = json.load(open(os.path.join(out, "samples", f"sample_{i:05d}.json")))
        assert body["status"] == "Coalesced"
        assert len(body["points"]) == body["count"]
        assert body["points"] == sorted(body["points"])
        row = rows[1 + i].split(",")
        assert int(row[0]) == i and row[2] == "Coalesced"
        assert int(row[4]) == body["count"]


def test_perfect_sample_threaded_matches_serial(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["perfect-sample", "--config", PAIRWISE, "--out", a,
                 "--replicates", "4", "--threads", "1"]) == 0
    assert main(["perfect-sample", "--config", PAIRWISE, "--out", b,
                 "--replicates", "4", "--threads", "3"]) == 0
    assert tree_bytes(a) == tree_bytes(b)


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def test_oracle_outputs_and_agreement(tmp_path, capsys):
    out = str(tmp_path / "oracle")
    assert main(["oracle", "--config", CELLS, "--out", out]) == 0
    report = json.load(open(os.path.join(out, "oracle_report.json")))
    assert report["tv_oracle_vs_gibbs"] < 1e-10
    assert report["balance_residual"] < 1e-10
    assert os.path.exists(os.path.join(out, "oracle_stationary.csv"))
    assert os.path.exists(os.path.join(out, "gibbs_table.csv"))
    assert "TV" in capsys.readouterr().out
    head = open(os.path.join(out, "oracle_stationary.csv")).readline().strip()
    assert head == "state,probability"


def test_oracle_requires_a_cell_model(tmp_path, capsys):
    assert main(["oracle", "--config", CONSTANT, "--out", str(tmp_path / "o")]) == 2
    assert "cell" in capsys.readouterr().err.lower()


# ---------------------------------------------------------------------------
# contraction
# ---------------------------------------------------------------------------

def test_contraction_prints_constant_and_verdict(tmp_path, capsys):
    assert main(["contraction", "--config", PAIRWISE]) == 0
    text = capsys.readouterr().out
    assert "M = 0.157387" in text
    assert "unique" in text
    out = str(tmp_path / "c")
    assert main(["contraction", "--config", PAIRWISE, "--out", out]) == 0
    body = json.load(open(os.path.join(out, "contraction.json")))
    assert abs(body["M"] - 0.15738773611494664) < 1e-6
    assert body["certifies_uniqueness"] is True


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------

def test_stats_outputs(tmp_path):
    out = str(tmp_path / "stats")
    code = main(["stats", "--config", CONSTANT, "--out", out,
                 "--replicates", "30", "--horizon", "8"])
    assert code == 0
    for name in ("count_table.csv", "ripley_k.csv", "block_variance.csv",
                 "stats.json"):
        assert os.path.exists(os.path.join(out, name)), name
    body = json.load(open(os.path.join(out, "stats.json")))
    assert body["replicates"] == 30
    assert body["horizon"] == 8.0
    table = open(os.path.join(out, "count_table.csv")).read().strip().split("\n")
    probs = [float(r.split(",")[1]) for r in table[1:]]
    assert sum(probs) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# validation battery
# ---------------------------------------------------------------------------

def test_fast_validation_battery_passes():
    report = run_validation_battery(seed=20260816, fast=True)
    failed = [c["name"] for c in report["checks"] if not c["passed"]]
    assert report["all_passed"], f"failed checks: {failed}"
    assert len(report["checks"]) >= 10


def test_validate_command_writes_report(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "space": {"dimension": 1, "lengths": [1.0], "intensity": 1.0},
        "model": {"type": "constant", "rate": 1.0},
        "seed": 20260816,
        "run": {"validate": {"fast": True}}})
    out = str(tmp_path / "v")
    assert main(["validate", "--config", cfg, "--out", out]) == 0
    report = json.load(open(os.path.join(out, "validation_report.json")))
    assert report["all_passed"] is True
    text = capsys.readouterr().out
    assert "[PASS]" in text and "[FAIL]" not in text


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
