"""Command line interface.

Every subcommand prints a JSON summary on stdout. Failures print
``{"status": "error", "reason": <code>, "message": ...}`` and exit with 1
(infeasible or failed check) or 2 (bad input).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import synthesis as syn
from .analysis import frequency_response, h2_norm, hinf_norm, spectral_radius, write_frequency_csv
from .armodel import ControllerGain, ar_to_state_space, close_loop, reduce, simulate_state_space
from .datamat import Trajectory, read_trajectory_csv, write_trajectory_csv
from .errors import ArsynthError
from .harness import (
    ExperimentConfig,
    _jsonable,
    controllable_basis,
    generate_experiment_data,
    load_example,
    reproduce_paper,
    verify_result,
)
from .uncertainty import norm_bound_phi

INPUT_ERRORS = {"invalid-model", "invalid-controller", "dimension-mismatch", "invalid-config", "missing-file"}


def _emit(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2, default=_jsonable))


def _fail(reason: str, message: str):
    click.echo(json.dumps({"status": "error", "reason": reason, "message": message}), err=True)
    sys.exit(2 if reason in INPUT_ERRORS else 1)


def _config(path, seed, sigma, **overrides) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.from_json(path) if path else ExperimentConfig()
    except FileNotFoundError as exc:
        _fail("missing-file", str(exc))
    except (ArsynthError, TypeError, json.JSONDecodeError) as exc:
        _fail("invalid-config", str(exc))
    if seed is not None:
        cfg.seed = seed
    if sigma is not None:
        cfg.sigmas = [sigma]
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg


def _solver_opts(cfg: ExperimentConfig, eps, solver_tol) -> dict:
    opts = dict(cfg.solver)
    if eps is not None:
        opts["eps"] = eps
    if solver_tol is not None:
        opts["solver_tol"] = solver_tol
    return opts


def _load_data(cfg: ExperimentConfig, data_path):
    model, perf, exp = load_example(cfg.model)
    sigma = cfg.sigmas[0]
    if data_path:
        traj = read_trajectory_csv(data_path, model.m, model.p)
    else:
        traj = generate_experiment_data(model, cfg.N, sigma, cfg.seed, cfg.noise_factor, cfg.max_redraws).traj
    l = cfg.l or exp.get("l", model.l)
    n = cfg.n or exp.get("n")
    N = traj.length - l
    qmi = norm_bound_phi(sigma, N, cfg.noise_factor, model.m_w)
    return model, perf, traj, l, n, qmi


common = [
    click.option("--config", "config", type=click.Path(dir_okay=False), help="Experiment config JSON."),
    click.option("--seed", type=int, help="RNG seed for generated data."),
    click.option("--sigma", type=float, help="Noise standard deviation."),
]


def with_common(f):
    for opt in reversed(common):
        f = opt(f)
    return f


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log redraws and solver fallbacks.")
def main(verbose):
    """Data-driven robust output-feedback synthesis for AR plants."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@with_common
@click.option("--zero-input", is_flag=True, help="u = 0, w = 0 and chi(0) = 0.")
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True)
def simulate(config, seed, sigma, zero_input, out):
    """Simulate the model and write trajectory.csv."""
    cfg = _config(config, seed, sigma)
    model, _, _ = load_example(cfg.model)
    if zero_input:
        real = ar_to_state_space(model)
        u = np.zeros((model.m, cfg.N + model.l))
        y, _ = simulate_state_space(real, u, np.zeros((model.m_w, u.shape[1])), np.zeros(model.nx))
        traj, redraws = Trajectory(u, y, np.zeros((model.m_w, u.shape[1]))), 0
    else:
        ed = generate_experiment_data(model, cfg.N, cfg.sigmas[0], cfg.seed, cfg.noise_factor, cfg.max_redraws)
        traj, redraws = ed.traj, ed.redraws
    path = write_trajectory_csv(traj, Path(out) / "trajectory.csv")
    _emit({"status": "ok", "trajectory": str(path), "samples": traj.length, "redraws": redraws})


@main.command()
@with_common
@click.option("--data", type=click.Path(exists=True, dir_okay=False), help="Trajectory CSV (else generated).")
def check(config, seed, sigma, data):
    """Run the data assumption checks."""
    cfg = _config(config, seed, sigma)
    model, perf, traj, l, n, qmi = _load_data(cfg, data)
    try:
        _, report = syn.prepare(traj, model.B_w, l, perf, qmi, n_order=n, strict=False)
    except ArsynthError as exc:
        _fail(exc.reason, str(exc))
    _emit({"status": "ok" if report.all_passed else "failed", "checks": report.to_dict()})
    if not report.all_passed:
        _fail("assumption-violated", "failed: " + ", ".join(report.failed()))


@main.command()
@with_common
@click.option("--data", type=click.Path(exists=True, dir_okay=False), help="Trajectory CSV (else generated).")
@click.option("--mode", type=click.Choice(["hinf", "h2", "dissip"]), default="hinf", show_default=True)
@click.option("--gamma", type=float, help="Fixed H-infinity level.")
@click.option("--mu", type=float, help="Fixed H2 level.")
@click.option("--minimize/--fixed", default=True, help="Minimize the level or check a fixed one.")
@click.option("--method", type=click.Choice(["direct", "bisection"]), default="direct", show_default=True)
@click.option("--eps", type=float, help="Strictness margin for the LMIs.")
@click.option("--solver-tol", type=float, help="Solver accuracy.")
@click.option("--samples", type=int, default=100, show_default=True, help="Consistent plants to verify on.")
@click.option("--out", type=click.Path(file_okay=False), help="Write controller.json here.")
def synth(config, seed, sigma, data, mode, gamma, mu, minimize, method, eps, solver_tol, samples, out):
    """Synthesize a controller certified for every plant consistent with the data."""
    cfg = _config(config, seed, sigma)
    opts = _solver_opts(cfg, eps, solver_tol)
    model, perf, traj, l, n, qmi = _load_data(cfg, data)
    supply = None
    try:
        sd, _ = syn.prepare(traj, model.B_w, l, perf, qmi, n_order=n)
        if mode == "hinf":
            fixed = gamma is not None or not minimize
            if fixed and gamma is None:
                _fail("invalid-config", "--fixed needs --gamma")
            res = syn.synthesize_hinf(sd, gamma, minimize=not fixed, method=method, options=opts)
        elif mode == "h2":
            fixed = mu is not None or not minimize
            if fixed and mu is None:
                _fail("invalid-config", "--fixed needs --mu")
            res = syn.synthesize_h2(sd, mu, minimize=not fixed, options=opts)
        else:
            if cfg.supply is None:
                _fail("invalid-config", "mode dissip needs a supply {Q, S, R} in the config")
            supply = syn.SupplyRate(cfg.supply["Q"], cfg.supply["S"], cfg.supply["R"])
            res = syn.synthesize_dissipative(sd, supply, opts)
    except ArsynthError as exc:
        _fail(exc.reason, str(exc))
    ver = verify_result(sd, res, None, samples, cfg.seed + 1, supply)
    payload = {"status": "ok", "mode": mode, "bound": res.bound, "path": res.path, "alpha": res.alpha,
               "verification": ver, "controller": res.to_dict()}
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        payload["X_s"] = sd.X_s.tolist()
        (Path(out) / "controller.json").write_text(json.dumps(payload, indent=2, default=_jsonable))
    _emit(payload)


@main.command()
@click.option("--config", "config", type=click.Path(dir_okay=False), help="Experiment config JSON (model).")
@click.option("--controller", type=click.Path(exists=True, dir_okay=False), required=True,
              help="controller.json written by synth --out.")
@click.option("--out", type=click.Path(file_okay=False), help="Write freq.csv here.")
@click.option("--grid", type=int, default=2000, show_default=True)
def analyze(config, controller, out, grid):
    """Norms and frequency response of the true closed loop with a saved controller."""
    cfg = _config(config, None, None)
    model, perf, _ = load_example(cfg.model)
    real = ar_to_state_space(model)
    with open(controller) as fh:
        d = json.load(fh)
    c = d.get("controller", d)
    gain = ControllerGain(np.array(c["K"]), c["l"], c["p"], c["m"])
    X_s = np.array(d["X_s"]) if "X_s" in d else controllable_basis(real)
    try:
        sys_ = reduce(close_loop(real, gain, perf), X_s)
    except ArsynthError as exc:
        _fail(exc.reason, str(exc))
    rho = spectral_radius(sys_.A)
    if rho >= 1:
        _fail("unstable", f"closed loop has spectral radius {rho:.6g}")
    payload = {"status": "ok", "spectral_radius": rho, "hinf": hinf_norm(sys_, n_grid=grid), "h2": h2_norm(sys_),
               "bound": d.get("bound")}
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        omegas = np.linspace(0.0, np.pi, grid)
        bound = d.get("bound") if d.get("mode") == "hinf" else None
        write_frequency_csv(Path(out) / "freq.csv", omegas, frequency_response(sys_, omegas), bound)
    _emit(payload)


@main.command("reproduce-paper")
@with_common
@click.option("--mode", type=click.Choice(["hinf", "h2", "both"]), default="both", show_default=True)
@click.option("--eps", type=float)
@click.option("--solver-tol", type=float)
@click.option("--workers", type=int, help="Parallel noise levels.")
@click.option("--out", type=click.Path(file_okay=False), default="reproduction", show_default=True)
def reproduce(config, seed, sigma, mode, eps, solver_tol, workers, out):
    """Noise sweep on the example plant: report.json, table.csv, freq_sigma_<s>.csv."""
    cfg = _config(config, seed, sigma, mode=mode, workers=workers)
    cfg.solver = _solver_opts(cfg, eps, solver_tol)
    try:
        report = reproduce_paper(cfg, out)
    except ArsynthError as exc:
        _fail(exc.reason, str(exc))
    _emit({"status": "ok", "out": out, "table": report.table()})
    if not all(r["certified"] for r in report.rows):
        _fail("not-certified", "some noise levels were not certified")


if __name__ == "__main__":  # pragma: no cover
    main()
