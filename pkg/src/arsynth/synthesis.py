"""Robust output-feedback synthesis over every plant consistent with the data.

The decision variables are P~ (n~ x n~, the inverse storage matrix), K~ = K X_s P~
(m x n~) and a multiplier alpha >= 0 for the consistency QMI. The synthesis
LMIs are assembled from the blocks returned by :func:`build_cs_blocks`; the
controller is recovered from K X_s = K~ P~^{-1}.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import lmi
from .analysis import LinearSystem
from .armodel import ControllerGain, PerformanceSpec, gain_to_controller, shift_structure
from .datamat import (
    DataMatrices,
    ReducedBasis,
    SubspaceMaps,
    Trajectory,
    build_data_matrices,
    check_assumption1,
    check_assumption2,
    check_assumption3,
    check_persistency,
    compact_svd,
    compute_LF,
)
from .errors import (
    AssumptionViolation,
    DimensionError,
    InfeasibleError,
    InsufficientDataError,
    InvalidModelError,
    NumericalError,
    SDPError,
)
from .uncertainty import ConsistencyQMI, NoiseQMI, build_H

log = logging.getLogger(__name__)

# Cap on the multiplier for the unit-norm H (see _scaled_H). With a zero noise
# bound the consistent set is a point and the optimum is only approached as
# alpha -> inf; the cap keeps the SDP attained. Override with options["alpha_max"].
_ALPHA_MAX = 1e6

__all__ = [
    "SupplyRate",
    "SynthesisData",
    "AssumptionReport",
    "SynthesisResult",
    "prepare",
    "check_assumptions",
    "build_cs_blocks",
    "robust_performance_lmi",
    "h2_lmis",
    "synthesize_dissipative",
    "synthesize_hinf",
    "synthesize_h2",
    "recover_controller",
    "reduced_closed_loop",
    "dissipativity_margin",
    "h2_certificate_margin",
    "slemma_matrix",
    "model_based_hinf",
    "model_based_h2",
]


@dataclass(frozen=True, eq=False)
class SupplyRate:
    """Quadratic supply s(w, z) = -(w; z)' [[Q, S], [S', R]] (w; z).

    The inverse blocks ``Q_t``, ``S_t``, ``R_t`` are computed once at
    construction. ``Q_t`` must be negative semidefinite.
    """

    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    Q_t: np.ndarray = field(init=False)
    S_t: np.ndarray = field(init=False)
    R_t: np.ndarray = field(init=False)

    def __post_init__(self):
        Q, S, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (self.Q, self.S, self.R))
        m_w, p_z = Q.shape[0], R.shape[0]
        if Q.shape != (m_w, m_w) or S.shape != (m_w, p_z) or R.shape != (p_z, p_z):
            raise DimensionError("supply blocks have inconsistent shapes")
        if not (np.allclose(Q, Q.T) and np.allclose(R, R.T)):
            raise InvalidModelError("Q and R must be symmetric")
        if np.linalg.eigvalsh(R).min() < -1e-12 * max(1.0, np.abs(R).max()):
            raise InvalidModelError("R must be positive semidefinite")
        M = np.block([[Q, S], [S.T, R]])
        cond = np.linalg.cond(M)
        if not np.isfinite(cond):
            raise InvalidModelError("supply matrix is singular")
        if cond > 1e10:
            warnings.warn(f"supply matrix is ill-conditioned (cond {cond:.2e})", RuntimeWarning, stacklevel=2)
        Mi = np.linalg.inv(M)
        Mi = 0.5 * (Mi + Mi.T)
        Q_t, S_t, R_t = Mi[:m_w, :m_w], Mi[:m_w, m_w:], Mi[m_w:, m_w:]
        if np.linalg.eigvalsh(Q_t).max() > 1e-10 * max(1.0, np.abs(Q_t).max()):
            raise InvalidModelError("inverse supply block Q~ must be negative semidefinite")
        for name, val in (("Q", Q), ("S", S), ("R", R), ("Q_t", Q_t), ("S_t", S_t), ("R_t", R_t)):
            object.__setattr__(self, name, val)

    @classmethod
    def hinf(cls, gamma: float, m_w: int, p_z: int) -> "SupplyRate":
        """l2-gain bound gamma: Q = -gamma^2 I, S = 0, R = I."""
        return cls(-gamma ** 2 * np.eye(m_w), np.zeros((m_w, p_z)), np.eye(p_z))

    @property
    def m_w(self) -> int:
        return self.Q.shape[0]

    @property
    def p_z(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True, eq=False)
class SynthesisData:
    """Everything the synthesis LMIs need, computed from data and the known B_w."""

    p: int
    m: int
    l: int
    B_w: np.ndarray
    perf: PerformanceSpec
    dm: DataMatrices
    basis: ReducedBasis
    maps: SubspaceMaps
    qmi: NoiseQMI
    H: ConsistencyQMI
    J_Az: np.ndarray
    J_Bz: np.ndarray

    @property
    def X_s(self) -> np.ndarray:
        return self.basis.X_s

    @property
    def n_tilde(self) -> int:
        return self.basis.n_tilde

    @property
    def B_hat(self) -> np.ndarray:
        nx = (self.p + self.m) * self.l
        return np.vstack([self.B_w, np.zeros((nx - self.p, self.B_w.shape[1]))])

    @property
    def m_w(self) -> int:
        return self.B_w.shape[1]


@dataclass
class AssumptionReport:
    persistency: bool | None
    image: bool
    first_rows: bool
    rank: bool
    noise_phi22: bool = True
    n_tilde: int = 0
    image_residual: float = 0.0

    @property
    def all_passed(self) -> bool:
        return bool(self.image and self.first_rows and self.rank and self.noise_phi22
                    and (self.persistency is None or self.persistency))

    def failed(self) -> list[str]:
        names = {"persistency": self.persistency, "image": self.image,
                 "first_rows": self.first_rows, "rank": self.rank}
        return [k for k, v in names.items() if v is False]

    def to_dict(self) -> dict:
        return {"persistency": self.persistency, "image": self.image, "first_rows": self.first_rows,
                "rank": self.rank, "n_tilde": self.n_tilde, "image_residual": self.image_residual,
                "all_passed": self.all_passed}


def check_assumptions(dm: DataMatrices, basis: ReducedBasis, B_hat, p: int, u=None, order: int | None = None,
                      rank_tol: float = 1e-9) -> AssumptionReport:
    """Run the four data checks. Persistency is skipped (None) when ``u`` or ``order`` is missing."""
    from .datamat import image_residual

    pe = None
    if u is not None and order is not None:
        try:
            pe = check_persistency(u, order, rank_tol)
        except InsufficientDataError:
            # a record too short for the Hankel test cannot be exciting enough
            pe = False
    return AssumptionReport(
        persistency=pe,
        image=check_assumption1(basis, B_hat),
        first_rows=check_assumption2(dm.X, p, rank_tol),
        rank=check_assumption3(basis.X_d, dm.U, rank_tol),
        n_tilde=basis.n_tilde,
        image_residual=image_residual(basis, B_hat),
    )


def prepare(traj: Trajectory | DataMatrices, B_w, l: int, perf: PerformanceSpec, qmi: NoiseQMI,
            rank_tol: float = 1e-9, n_order: int | None = None, strict: bool = True):
    """Build :class:`SynthesisData` from recorded data and check the data assumptions.

    ``n_order`` is the (upper bound on the) minimal plant order; when given the
    recorded input is checked for persistency of excitation of order n + l + 1.
    Returns ``(data, report)``. With ``strict`` a failed check raises
    :class:`AssumptionViolation`; otherwise ``data`` is None when the failed
    checks leave no usable subspace maps.
    """
    B_w = np.atleast_2d(np.asarray(B_w, dtype=float))
    dm = traj if isinstance(traj, DataMatrices) else build_data_matrices(traj, l)
    p, m = dm.Y.shape[0], dm.U.shape[0]
    if B_w.shape[0] != p:
        raise DimensionError(f"B_w must have {p} rows")
    if dm.X.shape[0] != (p + m) * l:
        raise DimensionError("X does not match (p + m) * l rows")
    basis = compact_svd(dm.X, rank_tol)
    nx = (p + m) * l
    B_hat = np.vstack([B_w, np.zeros((nx - p, B_w.shape[1]))])
    u_rec = dm.U if isinstance(traj, DataMatrices) else traj.u
    order = None if n_order is None else n_order + l + 1
    report = check_assumptions(dm, basis, B_hat, p, u_rec if order else None, order, rank_tol)
    if strict and not report.all_passed:
        raise AssumptionViolation(f"data assumptions failed: {', '.join(report.failed())}")
    try:
        maps = compute_LF(basis, p)
        H = build_H(qmi, B_w, dm.Y, basis.X_d, dm.U)
    except AssumptionViolation:
        if report.all_passed:
            raise
        # failed checks reported without strict: nothing to synthesize from
        return None, report
    J_Az, J_Bz = shift_structure(p, m, l)
    data = SynthesisData(p, m, l, B_w, perf, dm, basis, maps, qmi, H, J_Az, J_Bz)
    return data, report


# ---------------------------------------------------------------------------
# LMI blocks


def _is_affine(*xs) -> bool:
    return any(isinstance(x, lmi.Affine) for x in xs)


def _vstack(*parts):
    if not _is_affine(*parts):
        return np.vstack(parts)
    rows = [p.shape[0] for p in parts]
    total = sum(rows)
    out, r = None, 0
    for p, k in zip(parts, rows):
        E = np.zeros((total, k))
        E[r:r + k] = np.eye(k)
        term = E @ p
        out = term if out is None else out + term
        r += k
    return out


def _T(x):
    return x.T


def build_cs_blocks(data: SynthesisData, Q_t, S_t, R_t, P, K, alpha, H: ConsistencyQMI | None = None) -> dict:
    """The blocks Pi11, Pi12, Pi13, Pi22, Pi23 of the synthesis LMI.

    ``P``, ``K``, ``alpha`` and ``Q_t`` may be numbers/arrays or affine
    expressions. Pi11 is returned as its 2x2 sub-blocks (``Pi11_a`` for the
    (n~+m) part, ``Pi11_ab``, ``Pi11_b`` for the n~ part) plus the assembled
    matrix when everything is numeric. ``S_t``/``R_t`` may be None (H2 case).
    """
    H = data.H if H is None else H
    p, n_t = data.p, data.n_tilde
    E = np.vstack([np.eye(p), np.zeros((n_t - p, p))])
    L, F, X_s, B_w = data.maps.L, data.maps.F, data.X_s, data.B_w
    perf = data.perf

    Pi11_a = -(alpha * H.H22)
    Pi11_ab = -(alpha * H.H12.T) @ E.T
    Pi11_b = L @ P @ L.T + E @ (B_w @ Q_t @ B_w.T - alpha * H.H11) @ E.T
    Pi13 = _vstack(P, K, F @ (data.J_Az @ X_s @ P + data.J_Bz @ K))
    Pi23 = perf.C_z @ X_s @ P + perf.D_z @ K
    blocks = {"Pi11_a": Pi11_a, "Pi11_ab": Pi11_ab, "Pi11_b": Pi11_b, "Pi13": Pi13, "Pi23": Pi23}
    if S_t is not None:
        Dt = perf.D_tilde
        blocks["Pi12_b"] = E @ (B_w @ Q_t @ Dt.T - B_w @ S_t)
        DS = Dt @ S_t
        blocks["Pi22"] = Dt @ Q_t @ Dt.T - (DS + DS.T) + R_t
        if not _is_affine(*blocks.values()):
            blocks["Pi12"] = np.vstack([np.zeros((n_t + data.m, perf.p_z)), blocks["Pi12_b"]])
    if not _is_affine(Pi11_a, Pi11_ab, Pi11_b):
        blocks["Pi11"] = np.block([[Pi11_a, Pi11_ab], [Pi11_ab.T, Pi11_b]])
    return blocks


def robust_performance_lmi(data: SynthesisData, Q_t, S_t, R_t, P, K, alpha, H=None) -> lmi.LMIExpression:
    """Block layout [[Pi11, Pi12, Pi13], [., Pi22, Pi23], [., ., P~]] with Pi11 split in two."""
    b = build_cs_blocks(data, Q_t, S_t, R_t, P, K, alpha, H)
    n_t, m = data.n_tilde, data.m
    Pi13 = b["Pi13"]
    top = np.vstack([np.eye(n_t + m), np.zeros((n_t, n_t + m))]).T
    bot = np.vstack([np.zeros((n_t + m, n_t)), np.eye(n_t)]).T
    Pi13_a, Pi13_b = top @ Pi13, bot @ Pi13
    return lmi.assemble([
        [b["Pi11_a"], b["Pi11_ab"], None, Pi13_a],
        [None, b["Pi11_b"], b["Pi12_b"], Pi13_b],
        [None, None, b["Pi22"], b["Pi23"]],
        [None, None, None, P],
    ])


def h2_lmis(data: SynthesisData, P, K, alpha, Z, H=None) -> tuple[lmi.LMIExpression, lmi.LMIExpression]:
    """The two H2 synthesis LMIs: [[Pi11, Pi13], [., P~]] with Q~ = -I, and the output LMI."""
    m_w = data.m_w
    b = build_cs_blocks(data, -np.eye(m_w), None, None, P, K, alpha, H)
    n_t, m = data.n_tilde, data.m
    Pi13 = b["Pi13"]
    top = np.vstack([np.eye(n_t + m), np.zeros((n_t, n_t + m))]).T
    bot = np.vstack([np.zeros((n_t + m, n_t)), np.eye(n_t)]).T
    first = lmi.assemble([
        [b["Pi11_a"], b["Pi11_ab"], top @ Pi13],
        [None, b["Pi11_b"], bot @ Pi13],
        [None, None, P],
    ])
    Dt = data.perf.D_tilde
    second = lmi.assemble([[Z - Dt @ Dt.T, b["Pi23"]], [None, P]])
    return first, second


# ---------------------------------------------------------------------------
# results


@dataclass
class SynthesisResult:
    kind: str  # "dissipative" | "hinf" | "h2"
    gain: ControllerGain
    P_tilde: np.ndarray
    K_tilde: np.ndarray
    alpha: float
    bound: float | None
    Z: np.ndarray | None = None
    tau: float | None = None
    path: str = "direct"
    margins: list = field(default_factory=list)
    solver_status: str = "optimal"
    diagnostics: dict = field(default_factory=dict, repr=False)
    timings: dict = field(default_factory=dict)
    recovery_residual: float = 0.0

    @property
    def K(self) -> np.ndarray:
        return self.gain.K

    @property
    def margin(self) -> float:
        return min(self.margins) if self.margins else math.inf

    def to_dict(self) -> dict:
        ctrl = gain_to_controller(self.gain)
        return {
            "kind": self.kind,
            "K": self.gain.K.tolist(),
            "C_bar": self.gain.C_bar.tolist(),
            "D_bar": self.gain.D_bar.tolist(),
            "C": [c.tolist() for c in ctrl.C_coeffs],
            "D": [d.tolist() for d in ctrl.D_coeffs],
            "P_tilde": self.P_tilde.tolist(),
            "K_tilde": self.K_tilde.tolist(),
            "alpha": self.alpha,
            "Z": None if self.Z is None else self.Z.tolist(),
            "bound": self.bound,
            "path": self.path,
            "margins": [float(m) for m in self.margins],
            "solver_status": self.solver_status,
            "timings": self.timings,
            "l": self.gain.l, "p": self.gain.p, "m": self.gain.m,
        }


def recover_controller(K_tilde, P_tilde, X_s, l: int, p: int, m: int) -> tuple[ControllerGain, float]:
    """K = K~ P~^{-1} X_s' and the relative residual of K X_s = K~ P~^{-1}."""
    K_tilde = np.atleast_2d(np.asarray(K_tilde, dtype=float))
    KP = np.linalg.solve(np.asarray(P_tilde, dtype=float).T, K_tilde.T).T
    K = KP @ X_s.T
    res = np.linalg.norm(K @ X_s - KP) / max(np.linalg.norm(KP), 1e-300)
    return ControllerGain(K, l, p, m), float(res)


def _scaled_H(data: SynthesisData):
    """H normalised to unit spectral norm; alpha is reported in the original scale."""
    s = float(np.linalg.norm(data.H.H, 2))
    s = s if s > 0 else 1.0
    return ConsistencyQMI(data.H.H / s, data.p), s


def _alpha_max(options: dict | None) -> float:
    return float((options or {}).get("alpha_max", _ALPHA_MAX))


def _solve_opts(options: dict | None) -> dict:
    opts = {"eps": 1e-7}
    opts.update(options or {})
    opts.pop("alpha_max", None)
    return opts


def _solve(prob: lmi.Problem, options: dict | None, **kw) -> lmi.SDPSolution:
    """Solve, retrying numerical failures on the other backend and then with a 10x margin.

    A larger margin only tightens the LMIs, so any point found this way is
    still a certificate. Infeasibility is never retried.
    """
    base = _solve_opts(options)
    other = "cvxpy" if base.get("backend", "cvxopt") == "cvxopt" else "cvxopt"
    attempts = [base, dict(base, backend=other), dict(base, eps=10 * base["eps"])]
    for k, opts in enumerate(attempts):
        try:
            sol = prob.solve(**kw, **opts)
        except NumericalError as exc:
            last = exc
            log.info("solve attempt %d failed numerically: %s", k, exc)
            continue
        sol.diagnostics["attempt"] = k
        return sol
    raise last


def _finish(kind, data, sol, P, K, alpha_scaled, h_scale, bound, t0, **extra) -> SynthesisResult:
    gain, res = recover_controller(K, P, data.X_s, data.l, data.p, data.m)
    return SynthesisResult(
        kind=kind, gain=gain, P_tilde=P, K_tilde=K, alpha=alpha_scaled / h_scale, bound=bound,
        margins=list(sol.margins), solver_status=sol.status, diagnostics=sol.diagnostics,
        timings={"solve_s": time.perf_counter() - t0}, recovery_residual=res, **extra,
    )


def synthesize_dissipative(data: SynthesisData, supply: SupplyRate, options: dict | None = None) -> SynthesisResult:
    """Feasibility of the robust dissipativity LMI for a fixed supply.

    Raises :class:`InfeasibleError` when no controller is certified.
    """
    if supply.m_w != data.m_w or supply.p_z != data.perf.p_z:
        raise DimensionError("supply does not match the performance channel")
    t0 = time.perf_counter()
    Hs, scale = _scaled_H(data)
    prob = lmi.Problem()
    P = prob.symmetric("P_tilde", data.n_tilde)
    K = prob.full("K_tilde", data.m, data.n_tilde)
    a = prob.scalar("alpha", lower=0.0, upper=_alpha_max(options))
    prob.add(robust_performance_lmi(data, supply.Q_t, supply.S_t, supply.R_t, P, K, a, Hs), strict=True)
    prob.add(lmi.assemble([[P]]), strict=True)
    try:
        sol = _solve(prob, options)
    except InfeasibleError as exc:
        raise InfeasibleError("no controller certified for this supply/noise level", exc.diagnostics) from None
    return _finish("dissipative", data, sol, sol.value("P_tilde"), sol.value("K_tilde"), sol.value("alpha"),
                   scale, None, t0)


def _hinf_direct(data: SynthesisData, options) -> SynthesisResult:
    t0 = time.perf_counter()
    Hs, scale = _scaled_H(data)
    m_w, p_z = data.m_w, data.perf.p_z
    prob = lmi.Problem()
    P = prob.symmetric("P_tilde", data.n_tilde)
    K = prob.full("K_tilde", data.m, data.n_tilde)
    a = prob.scalar("alpha", lower=0.0, upper=_alpha_max(options))
    tau = prob.scalar("tau", lower=0.0)
    Q_t = -(tau * np.eye(m_w))
    prob.add(robust_performance_lmi(data, Q_t, np.zeros((m_w, p_z)), np.eye(p_z), P, K, a, Hs), strict=True)
    prob.add(lmi.assemble([[P]]), strict=True)
    try:
        sol = _solve(prob, options, objective=tau, maximize=True)
    except InfeasibleError as exc:
        raise InfeasibleError("no stabilizing certificate exists for any gamma", exc.diagnostics) from None
    t = sol.value("tau")
    if t <= 0:
        raise InfeasibleError("no finite H-infinity level certified", sol.diagnostics)
    return _finish("hinf", data, sol, sol.value("P_tilde"), sol.value("K_tilde"), sol.value("alpha"),
                   scale, float(t ** -0.5), t0, tau=float(t), path="direct")


def _hinf_feasible(data, gamma, options):
    try:
        return synthesize_dissipative(data, SupplyRate.hinf(gamma, data.m_w, data.perf.p_z), options)
    except SDPError:
        return None


def _hinf_bisection(data: SynthesisData, options, rtol: float = 1e-3, gamma_hi: float | None = None,
                    max_iter: int = 200) -> SynthesisResult:
    t0 = time.perf_counter()
    lo = float(np.linalg.norm(data.perf.D_tilde, 2))
    lo = lo if lo > 0 else 1e-6
    hi = gamma_hi if gamma_hi is not None else max(2.0 * lo, 1.0)
    best = _hinf_feasible(data, hi, options)
    grow = 0
    while best is None:
        hi *= 4.0
        grow += 1
        if grow > 20:
            raise InfeasibleError("no H-infinity level certified up to %.3g" % hi)
        best = _hinf_feasible(data, hi, options)
    for _ in range(max_iter):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        res = _hinf_feasible(data, mid, options)
        if res is None:
            lo = mid
        else:
            hi, best = mid, res
    best.kind = "hinf"
    best.bound = hi
    best.tau = hi ** -2
    best.path = "bisection"
    best.timings = {"solve_s": time.perf_counter() - t0}
    best.diagnostics = dict(best.diagnostics, bracket=(lo, hi))
    return best


def synthesize_hinf(data: SynthesisData, gamma: float | None = None, minimize: bool = True,
                    method: str = "direct", options: dict | None = None, rtol: float = 1e-3) -> SynthesisResult:
    """Robust H-infinity synthesis.

    ``minimize`` returns the smallest certifiable gamma; ``method="direct"``
    maximizes tau = gamma^-2 in one SDP, ``"bisection"`` bisects fixed-gamma
    feasibility. With ``minimize=False`` the fixed level ``gamma`` is checked.
    ``result.path`` records which route produced the answer; the direct route
    falls back to bisection if its SDP fails numerically.
    """
    if not minimize:
        if gamma is None:
            raise ValueError("fixed-level synthesis needs gamma")
        res = synthesize_dissipative(data, SupplyRate.hinf(gamma, data.m_w, data.perf.p_z), options)
        res.kind, res.bound, res.tau, res.path = "hinf", float(gamma), gamma ** -2, "fixed"
        return res
    if method == "bisection":
        return _hinf_bisection(data, options, rtol)
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    try:
        return _hinf_direct(data, options)
    except InfeasibleError:
        raise
    except SDPError as exc:
        log.warning("direct tau parametrization failed (%s); falling back to bisection", exc)
        return _hinf_bisection(data, options, rtol)


def synthesize_h2(data: SynthesisData, mu: float | None = None, minimize: bool = True,
                  options: dict | None = None) -> SynthesisResult:
    """Robust H2 synthesis: minimize tr(Z) (bound sqrt(min tr Z)) or check tr(Z) < mu^2."""
    t0 = time.perf_counter()
    Hs, scale = _scaled_H(data)
    p_z = data.perf.p_z
    prob = lmi.Problem()
    P = prob.symmetric("P_tilde", data.n_tilde)
    K = prob.full("K_tilde", data.m, data.n_tilde)
    a = prob.scalar("alpha", lower=0.0, upper=_alpha_max(options))
    Z = prob.symmetric("Z", p_z)
    first, second = h2_lmis(data, P, K, a, Z, Hs)
    prob.add(first, strict=True)
    prob.add(second, strict=True)
    objective = None
    if minimize:
        objective = lmi.trace(Z)
    else:
        if mu is None:
            raise ValueError("fixed-level synthesis needs mu")
        prob.add(lmi.assemble([[mu ** 2 - lmi.trace(Z)]]), strict=True)
    try:
        sol = _solve(prob, options, objective=objective)
    except InfeasibleError as exc:
        raise InfeasibleError("no controller certified for this H2 level/noise level", exc.diagnostics) from None
    Zv = np.atleast_2d(sol.value("Z"))
    bound = float(np.sqrt(max(np.trace(Zv), 0.0))) if minimize else float(mu)
    return _finish("h2", data, sol, sol.value("P_tilde"), sol.value("K_tilde"), sol.value("alpha"),
                   scale, bound, t0, Z=Zv, path="direct" if minimize else "fixed")


# ---------------------------------------------------------------------------
# verification against individual plants


def reduced_closed_loop(data: SynthesisData, AB_s, B_0, K) -> LinearSystem:
    """Reduced closed loop for one plant ((A_s B_s), B_0) of the consistent set.

    Uses X_s' (A_z + B_z K) X_s where only the first p rows of A_z X_s depend on
    the plant, and those equal (A_s B_s).
    """
    Kmat = K.K if isinstance(K, ControllerGain) else np.atleast_2d(K)
    X_s, p = data.X_s, data.p
    X_s1, X_s2 = X_s[:p], X_s[p:]
    KX = Kmat @ X_s
    top = np.atleast_2d(AB_s) + np.atleast_2d(B_0) @ KX
    rest = data.J_Az @ X_s + data.J_Bz @ KX
    A_t = X_s1.T @ top + X_s2.T @ rest
    B_t = X_s1.T @ data.B_w
    C_t = (data.perf.C_z + data.perf.D_z @ Kmat) @ X_s
    return LinearSystem(A_t, B_t, C_t, data.perf.D_tilde)


def dissipativity_margin(sys: LinearSystem, supply: SupplyRate, P) -> float:
    """Smallest eigenvalue of -(dissipation LMI) and of P; positive means strictly dissipative."""
    from .analysis import dissipation_matrix

    lhs = dissipation_matrix(sys, P, supply.Q, supply.S, supply.R)
    return float(min(np.linalg.eigvalsh(-lhs).min(), np.linalg.eigvalsh(P).min()))


def h2_certificate_margin(sys: LinearSystem, P_tilde, Z, mu: float | None = None) -> float:
    """Smallest eigenvalue over the two H2 analysis LMIs (and mu^2 - tr Z when given)."""
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    first = np.block([[P_tilde - A @ P_tilde @ A.T, B], [B.T, np.eye(B.shape[1])]])
    second = np.block([[Z - D @ D.T, C @ P_tilde], [P_tilde @ C.T, P_tilde]])
    vals = [np.linalg.eigvalsh(0.5 * (first + first.T)).min(), np.linalg.eigvalsh(0.5 * (second + second.T)).min()]
    if mu is not None:
        vals.append(mu ** 2 - np.trace(Z))
    return float(min(vals))


def slemma_matrix(data: SynthesisData, Q_t, S_t, R_t, P_tilde, K_tilde):
    """Plant-independent pieces of the robust inequality before the multiplier is introduced.

    Returns ``(M, Theta22)`` such that the performance inequality holds for the
    plant G = (A_s B_s B_0) iff ``(I, G) M (I, G)' > 0`` and ``Theta22 > 0``.
    Built from the congruence-transformed form of the reduced closed loop, not
    from the synthesis blocks, so it can check them independently.
    """
    p, m, n_t = data.p, data.m, data.n_tilde
    L1, L2 = data.maps.L1, data.maps.L2
    F12, F22 = data.maps.F12, data.maps.F22
    B_w, Dt = data.B_w, data.perf.D_tilde
    X_s = data.X_s
    P, Kt = P_tilde, K_tilde
    shift = data.J_Az @ X_s @ P + data.J_Bz @ Kt
    CP = data.perf.C_z @ X_s @ P + data.perf.D_z @ Kt
    p_z = Dt.shape[0]
    DS = Dt @ S_t
    Pi22 = Dt @ Q_t @ Dt.T - (DS + DS.T) + R_t

    Theta11 = L1 @ P @ L1.T + B_w @ Q_t @ B_w.T
    Theta22 = np.block([
        [L2 @ P @ L2.T, np.zeros((n_t - p, p_z)), F22 @ shift],
        [np.zeros((p_z, n_t - p)), Pi22, CP],
        [(F22 @ shift).T, CP.T, P],
    ])
    G1 = np.vstack([
        np.hstack([L1 @ P @ L2.T, B_w @ Q_t @ Dt.T - B_w @ S_t]),
        np.zeros((n_t + m, n_t - p + p_z)),
    ])
    G2 = np.vstack([F12 @ shift, P, Kt])
    Gt = np.hstack([G1, G2])
    k = p + n_t + m
    D11 = np.zeros((k, k))
    D11[:p, :p] = Theta11
    M = D11 - Gt @ np.linalg.solve(Theta22, Gt.T)
    return 0.5 * (M + M.T), 0.5 * (Theta22 + Theta22.T)


# ---------------------------------------------------------------------------
# model-based reference designs (known plant)


def _model_context(real, perf: PerformanceSpec, X_s):
    X_s = np.atleast_2d(X_s)
    B_t = X_s.T @ real.B_hat
    return X_s, B_t


def model_based_hinf(real, perf: PerformanceSpec, X_s, options: dict | None = None, p_max: float = 1e5):
    """Smallest gamma for the known plant restricted to im(X_s).

    Solves the congruence-transformed dissipation inequality directly in
    (P~, K~) with the true (A_z, B_z); returns ``(gamma, gain)``. The infimum
    is typically approached only as P~ grows without bound, so P~ <= p_max I
    keeps the optimum attained.
    """
    X_s, B_t = _model_context(real, perf, X_s)
    n_t = X_s.shape[1]
    m, p_z = real.m, perf.p_z
    prob = lmi.Problem()
    P = prob.symmetric("P_tilde", n_t)
    K = prob.full("K_tilde", m, n_t)
    tau = prob.scalar("tau", lower=0.0)
    AP = X_s.T @ (real.A_z @ X_s @ P + real.B_z @ K)
    CP = perf.C_z @ X_s @ P + perf.D_z @ K
    Dt = perf.D_tilde
    blk = lmi.assemble([
        [P - tau * (B_t @ B_t.T), -(tau * (B_t @ Dt.T)), AP],
        [None, np.eye(p_z) - tau * (Dt @ Dt.T), CP],
        [None, None, P],
    ])
    prob.add(blk, strict=True)
    prob.add(lmi.assemble([[P]]), strict=True)
    prob.add(lmi.assemble([[p_max * np.eye(n_t) - P]]), strict=False)
    sol = _solve(prob, options, objective=tau, maximize=True)
    gain, _ = recover_controller(sol.value("K_tilde"), sol.value("P_tilde"), X_s, real.nx // (real.p + m), real.p, m)
    return float(sol.value("tau") ** -0.5), gain


def model_based_h2(real, perf: PerformanceSpec, X_s, options: dict | None = None):
    """Smallest H2 level for the known plant restricted to im(X_s); returns ``(mu, gain)``."""
    X_s, B_t = _model_context(real, perf, X_s)
    n_t = X_s.shape[1]
    m, p_z = real.m, perf.p_z
    prob = lmi.Problem()
    P = prob.symmetric("P_tilde", n_t)
    K = prob.full("K_tilde", m, n_t)
    Z = prob.symmetric("Z", p_z)
    AP = X_s.T @ (real.A_z @ X_s @ P + real.B_z @ K)
    CP = perf.C_z @ X_s @ P + perf.D_z @ K
    Dt = perf.D_tilde
    prob.add(lmi.assemble([[P - B_t @ B_t.T, AP], [None, P]]), strict=True)
    prob.add(lmi.assemble([[Z - Dt @ Dt.T, CP], [None, P]]), strict=True)
    sol = _solve(prob, options, objective=lmi.trace(Z))
    gain, _ = recover_controller(sol.value("K_tilde"), sol.value("P_tilde"), X_s, real.nx // (real.p + m), real.p, m)
    return float(np.sqrt(sol.objective)), gain
