import json

import numpy as np
import pytest
from scipy.stats import chi2

from arsynth.armodel import simulate
from arsynth.errors import InvalidModelError
from arsynth.harness import (
    ExperimentConfig,
    RunReport,
    generate_experiment_data,
    load_example,
    reproduce_paper,
    run_sigma,
)
from arsynth.uncertainty import check_noise_consistency, norm_bound_phi


def test_data_deterministic(example):
    model = example[0]
    a = generate_experiment_data(model, 32, 0.05, seed=4)
    b = generate_experiment_data(model, 32, 0.05, seed=4)
    assert np.array_equal(a.traj.y, b.traj.y) and np.array_equal(a.traj.u, b.traj.u)
    c = generate_experiment_data(model, 32, 0.05, seed=5)
    assert not np.array_equal(a.traj.y, c.traj.y)


def test_zero_noise_record(example):
    model = example[0]
    ed = generate_experiment_data(model, 32, 0.0, seed=2)
    assert not ed.W.any()
    assert ed.traj.length == 32 + model.l


def test_same_directions_across_sigma(example):
    model = example[0]
    a = generate_experiment_data(model, 32, 0.05, seed=9)
    b = generate_experiment_data(model, 32, 0.2, seed=9)
    assert np.allclose(4 * a.W, b.W) and np.array_equal(a.traj.u, b.traj.u)


def test_recorded_trajectory_obeys_recursion(example):
    model = example[0]
    ed = generate_experiment_data(model, 32, 0.1, seed=1)
    l = model.l
    y = simulate(model, ed.traj.u[:, l:], ed.W, ed.chi0)
    assert np.allclose(y, ed.traj.y[:, l:], atol=1e-10)


def test_noise_within_bound(example):
    model = example[0]
    for seed in range(20):
        ed = generate_experiment_data(model, 32, 0.1, seed=seed)
        assert check_noise_consistency(ed.W, norm_bound_phi(0.1, 32))


def test_redraw_rate(example):
    """Per attempt the energy test passes with the chi-square probability of the bound."""
    model = example[0]
    p_accept = chi2.cdf(1.35 * 32, 32)
    first = np.mean([generate_experiment_data(model, 32, 0.1, seed=s).redraws == 0 for s in range(1000)])
    assert abs(first - p_accept) <= 3 * np.sqrt(p_accept * (1 - p_accept) / 1000)


def test_config_validation(tmp_path):
    with pytest.raises(InvalidModelError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(InvalidModelError):
        ExperimentConfig(sigmas=[-0.1])
    with pytest.raises(InvalidModelError):
        ExperimentConfig(mode="nope")
    cfg = ExperimentConfig(seed=3, sigmas=[0.0])
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_json(path) == cfg


def test_example_file():
    model, perf, exp = load_example()
    assert (model.p, model.m, model.m_w, model.l) == (2, 2, 1, 2)
    assert exp["N"] == 32 and exp["n"] == 3


def test_run_sigma_row():
    row = run_sigma(ExperimentConfig(sigmas=[0.0], n_samples=10), 0.0)
    assert row["certified"]
    for mode in ("hinf", "h2"):
        e = row[mode]
        assert e["achieved"] <= e["bound"] + 1e-4
        assert e["verification"]["sample_margin"] >= -1e-6
        assert e["verification"]["nominal_margin"] >= -1e-6


def test_run_sigma_assumption_failure():
    """Too few samples for persistency of excitation is reported, not solved."""
    row = run_sigma(ExperimentConfig(N=6, sigmas=[0.0], n_samples=5), 0.0)
    assert not row["certified"] and row["reason"] == "assumption-violated"


def test_reproduce_artifacts(tmp_path):
    cfg = ExperimentConfig(sigmas=[0.0, 0.05], n_samples=10, mode="hinf")
    report = reproduce_paper(cfg, tmp_path)
    assert isinstance(report, RunReport)
    for name in ("report.json", "table.csv", "plot_frequency.py", "freq_sigma_0.csv", "freq_sigma_0.05.csv"):
        assert (tmp_path / name).exists()
    d = json.loads((tmp_path / "report.json").read_text())
    assert len(d["rows"]) == 2
    b = [r["gamma_bound"] for r in report.table()]
    assert b[1] >= b[0] - 1e-6
