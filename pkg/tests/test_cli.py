# tests/test_cli.py
import csv
import json

import pytest
from click.testing import CliRunner

from fofiv.cli import _exit_code, main
from fofiv.reporting import SCHEMAS, missing_outputs
from tests.conftest import write_edges


@pytest.fixture
def runner():
    return CliRunner()


def header(path):
    with open(path, newline="") as f:
        return next(csv.reader(f))


def test_simulate_writes_tables_and_manifest(runner, tmp_path):
    out = tmp_path / "run"
    result = runner.invoke(main, [
        "simulate", "--n", "120", "--regime", "constant:3", "--beta", "0.4666",
        "--scaled", "--reps", "4", "--seed", "11", "--out-dir", str(out), "--draws",
    ])
    assert result.exit_code == 0, result.output
    for name in ("estimates", "coverage", "ci_lengths", "covariance", "draws"):
        assert header(out / f"{name}.csv") == SCHEMAS[name]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 11
    assert manifest["cells_failed"] == 0
    assert missing_outputs(out) == []


def test_simulate_is_reproducible(runner, tmp_path):
    args = ["simulate", "--n", "100", "--regime", "constant:3", "--beta", "0.4666", "--reps", "3"]
    runner.invoke(main, args + ["--out-dir", str(tmp_path / "a")])
    runner.invoke(main, args + ["--out-dir", str(tmp_path / "b"), "--threads", "2"])
    for name in ("estimates", "coverage"):
        assert (tmp_path / "a" / f"{name}.csv").read_text() == (tmp_path / "b" / f"{name}.csv").read_text()


def test_verbose_prints_the_step_tree(runner, tmp_path):
    result = runner.invoke(main, [
        "simulate", "--n", "100", "--regime", "constant:3", "--beta", "0.4666", "--reps", "2",
        "--out-dir", str(tmp_path), "-v",
    ])
    assert result.exit_code == 0, result.output
    assert "Run steps" in result.output
    assert "n=100|constant:3" in result.output


def test_bad_regime_is_a_usage_error(runner, tmp_path):
    result = runner.invoke(main, [
        "simulate", "--n", "100", "--regime", "bogus:1", "--beta", "0.5", "--out-dir", str(tmp_path),
    ])
    assert result.exit_code == 2
    assert "--regime" in result.output


def test_unknown_config_key_is_a_usage_error(runner, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"n": 100, "bogus_key": 1}))
    result = runner.invoke(main, ["simulate", "--config", str(cfg)])
    assert result.exit_code == 2
    assert "--bogus-key" in result.output


def test_missing_grid_axis(runner, tmp_path):
    result = runner.invoke(main, ["simulate", "--n", "100", "--out-dir", str(tmp_path)])
    assert result.exit_code == 2
    assert "--regime" in result.output


def test_failed_cells_set_the_exit_code(runner, tmp_path):
    # constant:0 has no edges, so G2X vanishes in every cell
    result = runner.invoke(main, [
        "simulate", "--n", "50", "--regime", "constant:0", "--beta", "0.5", "--reps", "2",
        "--out-dir", str(tmp_path),
    ])
    assert result.exit_code == 4
    assert json.loads((tmp_path / "manifest.json").read_text())["cells_failed"] == 2


def test_exit_codes():
    assert _exit_code(["ok", "partial: 2 failed reps"]) == 0
    assert _exit_code(["ok", "failed: SolveError"]) == 3
    assert _exit_code(["failed: a", "failed: b"]) == 4


def test_graph_stats(runner, tmp_path):
    edges = write_edges(tmp_path, "0 1\n1 2\n")
    out = tmp_path / "stats.csv"
    result = runner.invoke(main, ["graph-stats", str(edges), "--out", str(out)])
    assert result.exit_code == 0, result.output
    with open(out, newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["graph"] for r in rows] == ["G", "G2_support", "G2_weighted"]
    assert rows[0]["max"] == "2.0"


def test_graph_stats_parse_error(runner, tmp_path):
    edges = write_edges(tmp_path, "0 1\n1\n")
    result = runner.invoke(main, ["graph-stats", str(edges)])
    assert result.exit_code == 4
    assert "2" in result.output


def test_diagnose_reports_degenerate_instrument(runner, tmp_path):
    edges = write_edges(tmp_path, "0 1\n")
    out = tmp_path / "diag.csv"
    result = runner.invoke(main, ["diagnose", "--edges", str(edges), "--out", str(out)])
    assert result.exit_code == 0, result.output
    with open(out, newline="") as f:
        row = next(csv.DictReader(f))
    assert list(row) == SCHEMAS["diagnose"]
    assert row["status"].startswith("DegenerateInstrumentError")
    assert row["collinearity_angle_deg"] == "NA"


def test_diagnose_generated_graph(runner, tmp_path):
    out = tmp_path / "diag.csv"
    result = runner.invoke(main, [
        "diagnose", "--n", "80", "--regime", "constant:3", "--scaled", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    with open(out, newline="") as f:
        row = next(csv.DictReader(f))
    assert row["status"] == "ok"
    assert row["scaling"] == "scaled"


def test_diagnose_writes_a_sample(runner, tmp_path):
    edges = write_edges(tmp_path, "0 1\n1 2\n2 3\n")
    out = tmp_path / "sample.csv"
    result = runner.invoke(main, [
        "diagnose", "--edges", str(edges), "--beta", "0.3", "--seed", "5", "--sample-out", str(out),
    ])
    assert result.exit_code == 0, result.output
    assert header(out) == ["i", "x", "eps", "y", "gx", "gy", "g2x"]
    with open(out, newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["i"] for r in rows] == ["0", "1", "2", "3"]
    # path 0-1-2-3: node 0 reaches only node 2 in two steps
    assert float(rows[0]["g2x"]) == pytest.approx(float(rows[2]["x"]))


def test_bounds(runner, tmp_path):
    result = runner.invoke(main, [
        "bounds", "--regime", "constant:2", "--n", "50", "--n", "100", "--seeds", "3",
        "--unscaled", "--out-dir", str(tmp_path),
    ])
    assert result.exit_code == 0, result.output
    assert header(tmp_path / "bounds.csv") == SCHEMAS["bounds"]
    assert missing_outputs(tmp_path) == []


def test_curves(runner, tmp_path):
    result = runner.invoke(main, [
        "curves", "--regime", "constant:3", "--n", "80", "--reps", "3", "--scaled", "--out-dir", str(tmp_path),
    ])
    assert result.exit_code == 0, result.output
    assert header(tmp_path / "curves.csv") == SCHEMAS["curves"]
