"""Experiment pipeline: data generation, checks, synthesis, verification and the sigma sweep."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import synthesis as syn
from .analysis import frequency_response, h2_norm, hinf_norm, spectral_radius, write_frequency_csv
from .armodel import (
    ARModel,
    PerformanceSpec,
    StructuredRealization,
    ar_to_state_space,
    chi_to_window,
    close_loop,
    load_performance,
    reduce,
    simulate_state_space,
)
from .datamat import Trajectory
from .errors import ArsynthError, InvalidModelError, SDPError
from .uncertainty import check_noise_consistency, norm_bound_phi, sample_consistent_plants

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "ExperimentData",
    "RunReport",
    "example_path",
    "load_example",
    "controllable_basis",
    "generate_experiment_data",
    "achieved_norms",
    "verify_result",
    "run_sigma",
    "reproduce_paper",
]

REFERENCE_SIGMAS = (0.0, 0.01, 0.05, 0.1, 0.2)


def example_path() -> Path:
    return Path(str(resources.files("arsynth") / "data" / "example_plant.json"))


@dataclass
class ExperimentConfig:
    model: str | None = None  # JSON with the AR model and "performance"; None = bundled example
    N: int = 32
    l: int | None = None
    n: int | None = None
    sigmas: list = field(default_factory=lambda: list(REFERENCE_SIGMAS))
    noise_factor: float = 1.35
    seed: int = 0
    mode: str = "both"  # hinf | h2 | dissip | both
    gamma: float | None = None
    mu: float | None = None
    supply: dict | None = None  # {"Q", "S", "R"} for mode dissip
    solver: dict = field(default_factory=dict)
    n_samples: int = 100
    workers: int = 1
    max_redraws: int = 1000
    out: str | None = None

    def __post_init__(self):
        if any(s < 0 for s in self.sigmas):
            raise InvalidModelError("sigma must be nonnegative")
        if self.mode not in ("hinf", "h2", "dissip", "both"):
            raise InvalidModelError(f"unknown mode {self.mode!r}")
        if self.noise_factor <= 0:
            raise InvalidModelError("noise factor must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidModelError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def load_example(path=None) -> tuple[ARModel, PerformanceSpec, dict]:
    """Model, performance channel and the optional ``experiment`` section of a model file."""
    path = example_path() if path is None else Path(path)
    with open(path) as fh:
        d = json.load(fh)
    return ARModel.from_dict(d), load_performance(d), d.get("experiment", {})


def controllable_basis(real: StructuredRealization, rank_tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis of the controllable subspace of (A_z, (B_z  B_hat))."""
    B = np.hstack([real.B_z, real.B_hat])
    blocks = [B]
    for _ in range(real.nx - 1):
        blocks.append(real.A_z @ blocks[-1])
    U, s, _ = np.linalg.svd(np.hstack(blocks), full_matrices=False)
    r = int(np.sum(s > rank_tol * s[0] * real.nx)) if s[0] > 0 else 0
    return U[:, :r]


@dataclass
class ExperimentData:
    traj: Trajectory
    W: np.ndarray  # oracle use only
    chi0: np.ndarray
    redraws: int
    sigma: float


def generate_experiment_data(model: ARModel, N: int, sigma: float, seed: int = 0, noise_factor: float = 1.35,
                             max_redraws: int = 1000) -> ExperimentData:
    """Simulate ``N`` samples with Gaussian input, noise and initial condition.

    The noise is drawn as ``sigma`` times a standard normal record, which is
    redrawn (together with u and chi(0)) while it violates the
    ``noise_factor * N`` energy bound. The redraw decision does not depend on
    sigma, so one seed gives the same directions at every noise level.
    The returned trajectory has ``l + N`` samples, the first ``l`` being the
    initial window chi(0).
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    real = ar_to_state_space(model)
    basis = controllable_basis(real)
    rng = np.random.default_rng(seed)
    m, m_w = model.m, model.m_w
    for redraws in range(max_redraws + 1):
        coeff = rng.standard_normal(basis.shape[1])
        u = rng.standard_normal((m, N))
        w_hat = rng.standard_normal((m_w, N))
        if check_noise_consistency(w_hat, norm_bound_phi(1.0, N, noise_factor, m_w)):
            break
        log.info("seed %s: noise record violates the energy bound, redrawing (%d)", seed, redraws + 1)
    else:
        raise ArsynthError(f"no admissible noise record after {max_redraws} redraws")
    chi0 = basis @ coeff
    W = sigma * w_hat
    y, _ = simulate_state_space(real, u, W, chi0)
    y_past, u_past = chi_to_window(chi0, model.p, m, model.l)
    traj = Trajectory(np.hstack([u_past, u]), np.hstack([y_past, y]),
                      np.hstack([np.zeros((m_w, model.l)), W]))
    return ExperimentData(traj, W, chi0, redraws, float(sigma))


def achieved_norms(real: StructuredRealization, perf: PerformanceSpec, K, X_s, which=("hinf", "h2"),
                   n_grid: int = 2000) -> dict:
    """H-infinity and H2 norms of the true closed loop restricted to im(X_s)."""
    sys = reduce(close_loop(real, K, perf), X_s)
    out = {"spectral_radius": spectral_radius(sys.A)}
    if out["spectral_radius"] >= 1.0:
        out.update({k: math.inf for k in which})
        return out
    if "hinf" in which:
        out["hinf"] = hinf_norm(sys, n_grid=n_grid)
    if "h2" in which:
        out["h2"] = h2_norm(sys)
    return out


def verify_result(data: syn.SynthesisData, res: syn.SynthesisResult, real: StructuredRealization | None = None,
                  n_samples: int = 100, seed: int = 0, supply: syn.SupplyRate | None = None) -> dict:
    """Check the returned certificate on the nominal plant and on sampled members of the consistent set.

    Returns the worst margins; both should be >= -1e-6.
    """
    def margin(AB_s, B_0):
        cl = syn.reduced_closed_loop(data, AB_s, B_0, res.gain)
        if res.kind == "h2":
            return syn.h2_certificate_margin(cl, res.P_tilde, res.Z)
        return syn.dissipativity_margin(cl, sup, np.linalg.inv(res.P_tilde))

    sup = supply
    if res.kind == "hinf":
        sup = syn.SupplyRate.hinf(res.bound, data.m_w, data.perf.p_z)
    plants = sample_consistent_plants(data.H, data.n_tilde, data.m, n_samples, seed)
    sample = min((margin(AB, B0) for AB, B0 in plants), default=math.inf)
    out = {"sample_margin": float(sample), "n_samples": n_samples}
    if real is not None:
        out["nominal_margin"] = float(margin(real.AB_bar @ data.X_s, real.B_0))
    return out


def _solve_mode(mode, data, cfg: ExperimentConfig):
    opts = dict(cfg.solver)
    if mode == "hinf":
        if cfg.gamma is not None:
            return syn.synthesize_hinf(data, cfg.gamma, minimize=False, options=opts), None
        return syn.synthesize_hinf(data, options=opts), None
    if mode == "h2":
        if cfg.mu is not None:
            return syn.synthesize_h2(data, cfg.mu, minimize=False, options=opts), None
        return syn.synthesize_h2(data, options=opts), None
    if cfg.supply is None:
        raise InvalidModelError("mode dissip needs a supply {Q, S, R}")
    sup = syn.SupplyRate(cfg.supply["Q"], cfg.supply["S"], cfg.supply["R"])
    return syn.synthesize_dissipative(data, sup, opts), sup


def run_sigma(cfg: ExperimentConfig, sigma: float, out_dir=None) -> dict:
    """Full pipeline for one noise level; returns one report row."""
    t0 = time.perf_counter()
    model, perf, exp = load_example(cfg.model)
    l = cfg.l or exp.get("l", model.l)
    n = cfg.n or exp.get("n")
    real = ar_to_state_space(model)
    ed = generate_experiment_data(model, cfg.N, sigma, cfg.seed, cfg.noise_factor, cfg.max_redraws)
    qmi = norm_bound_phi(sigma, cfg.N, cfg.noise_factor, model.m_w)
    row = {"sigma": float(sigma), "seed": cfg.seed, "redraws": ed.redraws}
    data, report = syn.prepare(ed.traj, model.B_w, l, perf, qmi, n_order=n, strict=False)
    row["assumptions"] = report.to_dict()
    row["n_tilde"] = report.n_tilde
    if not report.all_passed:
        row["certified"] = False
        row["reason"] = "assumption-violated"
        return row
    modes = ["hinf", "h2"] if cfg.mode == "both" else [cfg.mode]
    for mode in modes:
        entry = {"certified": False}
        try:
            res, sup = _solve_mode(mode, data, cfg)
        except SDPError as exc:
            entry.update(reason=exc.reason, message=str(exc))
            row[mode] = entry
            continue
        ach = achieved_norms(real, perf, res.gain, data.X_s)
        ver = verify_result(data, res, real, cfg.n_samples, cfg.seed + 1, sup)
        key = "h2" if mode == "h2" else "hinf"
        entry.update(
            certified=True, bound=res.bound, achieved=ach.get(key), spectral_radius=ach["spectral_radius"],
            path=res.path, alpha=res.alpha, solver_status=res.solver_status, margin=res.margin,
            verification=ver, controller=res.to_dict(), timings=res.timings,
        )
        if mode == "hinf" and out_dir is not None:
            sys = reduce(close_loop(real, res.gain, perf), data.X_s)
            omegas = np.linspace(0.0, np.pi, 2000)
            write_frequency_csv(Path(out_dir) / f"freq_sigma_{sigma:g}.csv", omegas,
                                frequency_response(sys, omegas), res.bound)
        row[mode] = entry
    row["certified"] = all(row[m]["certified"] for m in modes)
    row["time_s"] = time.perf_counter() - t0
    return row


@dataclass
class RunReport:
    config: dict
    rows: list

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps({"config": self.config, "rows": self.rows}, indent=2, default=_jsonable))
        return path

    def table(self) -> list[dict]:
        out = []
        for r in self.rows:
            t = {"sigma": r["sigma"], "n_tilde": r.get("n_tilde"), "redraws": r["redraws"]}
            for mode, name in (("hinf", "gamma"), ("h2", "mu"), ("dissip", "dissip")):
                if mode in r:
                    t[f"{name}_bound"] = r[mode].get("bound")
                    t[f"{name}_achieved"] = r[mode].get("achieved")
                    t[f"{name}_certified"] = r[mode]["certified"]
            t["certified"] = r["certified"]
            out.append(t)
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        rows = self.table()
        cols = list(dict.fromkeys(k for r in rows for k in r))
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)
        return path


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


PLOT_SCRIPT = '''"""Plot the frequency responses written by reproduce-paper (needs matplotlib)."""
import csv, glob, sys
import matplotlib.pyplot as plt

folder = sys.argv[1] if len(sys.argv) > 1 else "."
for path in sorted(glob.glob(f"{folder}/freq_sigma_*.csv")):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    om = [float(r["omega"]) for r in rows]
    line, = plt.plot(om, [float(r["sigma_max"]) for r in rows], label=path.split("freq_sigma_")[1][:-4])
    if "bound" in rows[0]:
        plt.plot(om, [float(r["bound"]) for r in rows], "--", color=line.get_color())
plt.xlabel("omega [rad/sample]")
plt.ylabel("largest singular value")
plt.legend(title="sigma")
plt.savefig(f"{folder}/frequency_response.png", dpi=150)
'''


def reproduce_paper(cfg: ExperimentConfig | None = None, out_dir=None) -> RunReport:
    """Sweep the configured noise levels and write report.json, table.csv and frequency CSVs."""
    cfg = cfg or ExperimentConfig()
    out_dir = out_dir or cfg.out
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            rows = list(ex.map(run_sigma, [cfg] * len(cfg.sigmas), cfg.sigmas, [out_dir] * len(cfg.sigmas)))
    else:
        rows = [run_sigma(cfg, s, out_dir) for s in cfg.sigmas]
    report = RunReport(cfg.to_dict(), rows)
    if out_dir is not None:
        report.to_json(Path(out_dir) / "report.json")
        report.to_csv(Path(out_dir) / "table.csv")
        (Path(out_dir) / "plot_frequency.py").write_text(PLOT_SCRIPT)
    return report
