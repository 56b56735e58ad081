import csv
import json

import numpy as np
from click.testing import CliRunner

from arsynth.cli import main


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def _stdout_json(res):
    return json.loads(res.stdout)


def test_check_passes():
    res = run("check", "--sigma", 0.05, "--seed", 1)
    assert res.exit_code == 0, res.output
    d = _stdout_json(res)
    assert d["status"] == "ok" and d["checks"]["n_tilde"] == 7


def test_simulate_zero_input(tmp_path):
    res = run("simulate", "--zero-input", "--out", tmp_path)
    assert res.exit_code == 0, res.output
    with open(tmp_path / "trajectory.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(float(v) == 0.0 for r in rows for k, v in r.items() if k != "t")


def test_check_on_zero_input_data(tmp_path):
    # u = 0 and chi(0) = 0 give X = 0, which is rejected outright
    run("simulate", "--zero-input", "--out", tmp_path)
    res = run("check", "--data", tmp_path / "trajectory.csv")
    assert res.exit_code == 1
    err = json.loads(res.stderr)
    assert err["status"] == "error" and err["reason"] == "degenerate-data"


def test_synth_and_analyze(tmp_path):
    res = run("synth", "--sigma", 0.0, "--seed", 1, "--mode", "h2", "--samples", 10, "--out", tmp_path)
    assert res.exit_code == 0, res.output
    d = _stdout_json(res)
    assert abs(d["bound"] - 1.414) <= 0.01
    assert d["verification"]["sample_margin"] >= -1e-6
    res = run("analyze", "--controller", tmp_path / "controller.json", "--out", tmp_path, "--grid", 200)
    assert res.exit_code == 0, res.output
    a = _stdout_json(res)
    assert a["spectral_radius"] < 1 and a["h2"] <= d["bound"] + 1e-4
    assert (tmp_path / "freq.csv").exists()


def test_synth_from_csv(tmp_path):
    run("simulate", "--sigma", 0.05, "--seed", 2, "--out", tmp_path)
    res = run("synth", "--sigma", 0.05, "--data", tmp_path / "trajectory.csv", "--samples", 10)
    assert res.exit_code == 0, res.output
    assert np.isfinite(_stdout_json(res)["bound"])


def test_synth_infeasible_level():
    res = run("synth", "--sigma", 0.0, "--seed", 1, "--gamma", 0.5, "--samples", 0)
    assert res.exit_code == 1
    assert json.loads(res.stderr)["status"] == "error"


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"unknown_key": 1}))
    res = run("check", "--config", cfg)
    assert res.exit_code == 2
    assert json.loads(res.stderr)["reason"] == "invalid-config"
    res = run("check", "--config", tmp_path / "missing.json")
    assert res.exit_code == 2


def test_reproduce_paper_cli(tmp_path):
    res = run("reproduce-paper", "--sigma", 0.0, "--mode", "hinf", "--out", tmp_path)
    assert res.exit_code == 0, res.output
    assert (tmp_path / "report.json").exists() and (tmp_path / "table.csv").exists()
    assert abs(_stdout_json(res)["table"][0]["gamma_bound"] - 1.618) <= 0.01
