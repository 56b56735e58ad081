"""Model-based verification: stability, dissipativity certificates, H2 and H-infinity norms.

Everything in here works on an explicit state-space model and serves as the
independent oracle for the data-driven synthesis results.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lmi
from .errors import DimensionError, SDPError, UnstableSystemError

__all__ = [
    "LinearSystem",
    "spectral_radius",
    "discrete_lyapunov",
    "dissipation_matrix",
    "check_dissipativity",
    "DissipativityCheck",
    "h2_norm",
    "h2_norm_lmi",
    "frequency_response",
    "hinf_norm",
    "write_frequency_csv",
]


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Discrete-time system x+ = A x + B w, z = C x + D w."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A, B, C, D = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (self.A, self.B, self.C, self.D))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != n or C.shape[1] != n:
            raise DimensionError("B rows and C columns must match the state dimension")
        if D.shape != (C.shape[0], B.shape[1]):
            raise DimensionError(f"D must be {C.shape[0]}x{B.shape[1]}, got {D.shape}")
        for name, M in zip("ABCD", (A, B, C, D)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        """(outputs, inputs) of the w -> z channel."""
        return self.D.shape


def spectral_radius(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got {A.shape}")
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def discrete_lyapunov(A, Q) -> np.ndarray:
    """Solve A X A^T - X + Q = 0 by a direct solve on the vectorized system."""
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = A.shape[0]
    # vec(A X A^T) = (A kron A) vec(X)
    lhs = np.eye(n * n) - np.kron(A, A)
    X = np.linalg.solve(lhs, Q.reshape(-1)).reshape(n, n)
    return 0.5 * (X + X.T)


def _require_stable(sys: LinearSystem) -> None:
    rho = spectral_radius(sys.A)
    if rho >= 1.0:
        raise UnstableSystemError(f"system is not Schur stable (spectral radius {rho:.6g})")


def dissipation_matrix(sys: LinearSystem, P, Q, S, R) -> np.ndarray:
    """Left-hand side of the quadratic dissipation LMI; negative definite means dissipative.

    Computes ``U^T diag(-P, P, [[Q, S], [S^T, R]]) U`` with
    ``U = [[I, 0], [A, B], [0, I], [C, D]]``.
    """
    n, mw = sys.n, sys.B.shape[1]
    P = np.asarray(P, dtype=float)
    top = np.hstack([np.eye(n), np.zeros((n, mw))])
    nxt = np.hstack([sys.A, sys.B])
    inp = np.hstack([np.zeros((mw, n)), np.eye(mw)])
    out = np.hstack([sys.C, sys.D])
    QSR = np.block([[Q, S], [np.asarray(S).T, R]])
    io = np.vstack([inp, out])
    M = -top.T @ P @ top + nxt.T @ P @ nxt + io.T @ QSR @ io
    return 0.5 * (M + M.T)


@dataclass
class DissipativityCheck:
    feasible: bool
    margin: float
    P: np.ndarray | None = None


def check_dissipativity(sys: LinearSystem, supply, P=None, eps: float = 1e-7, **solver_options) -> DissipativityCheck:
    """Check strict dissipativity of ``sys`` for a quadratic supply.

    With ``P`` given the dissipation LMI and ``P > 0`` are evaluated directly and
    ``margin`` is the smallest eigenvalue of ``-lhs`` and ``P`` combined.
    Without ``P`` a feasibility SDP is solved for a storage matrix.

    ``supply`` is any object with ``Q``, ``S``, ``R`` attributes (see
    :class:`arsynth.synthesis.SupplyRate`).
    """
    Q, S, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (supply.Q, supply.S, supply.R))
    p_z, m_w = sys.shape
    if Q.shape != (m_w, m_w) or S.shape != (m_w, p_z) or R.shape != (p_z, p_z):
        raise DimensionError("supply blocks do not match the system's w -> z channel")

    if P is not None:
        P = np.asarray(P, dtype=float)
        lhs = dissipation_matrix(sys, P, Q, S, R)
        margin = min(np.linalg.eigvalsh(-lhs).min(), np.linalg.eigvalsh(0.5 * (P + P.T)).min())
        return DissipativityCheck(bool(margin > 0), float(margin), P)

    n = sys.n
    prob = lmi.Problem()
    Pv = prob.symmetric("P", n)
    # -lhs = P - A'PA - (io)'QSR(io), affine in P
    top = np.hstack([np.eye(n), np.zeros((n, m_w))])
    nxt = np.hstack([sys.A, sys.B])
    io = np.vstack([np.hstack([np.zeros((m_w, n)), np.eye(m_w)]), np.hstack([sys.C, sys.D])])
    QSR = np.block([[Q, S], [S.T, R]])
    neg = top.T @ Pv @ top - nxt.T @ Pv @ nxt - lmi.const(io.T @ QSR @ io)
    prob.add(lmi.assemble([[neg]]), strict=True)
    prob.add(lmi.assemble([[Pv]]), strict=True)
    try:
        sol = prob.solve(eps=eps, **solver_options)
    except SDPError:
        # infeasible, or no verifiable point found: no certificate either way
        return DissipativityCheck(False, -np.inf, None)
    return DissipativityCheck(True, sol.margin, sol.value("P"))


def h2_norm(sys: LinearSystem) -> float:
    """H2 norm of the w -> z channel from the controllability gramian."""
    _require_stable(sys)
    G = discrete_lyapunov(sys.A, sys.B @ sys.B.T)
    val = np.trace(sys.C @ G @ sys.C.T + sys.D @ sys.D.T)
    return float(np.sqrt(max(val, 0.0)))


def h2_norm_lmi(sys: LinearSystem, eps: float = 0.0, **solver_options) -> float:
    """H2 norm by minimizing tr(Z) subject to the two-block H2 LMIs."""
    n = sys.n
    p_z = sys.C.shape[0]
    prob = lmi.Problem()
    P = prob.symmetric("P", n)
    Z = prob.symmetric("Z", p_z)
    lyap = lmi.assemble([[P - sys.A @ P @ sys.A.T, lmi.const(sys.B)], [None, lmi.const(np.eye(sys.B.shape[1]))]])
    out = lmi.assemble([[Z - lmi.const(sys.D @ sys.D.T), sys.C @ P], [None, P]])
    prob.add(lyap, strict=eps > 0)
    prob.add(out, strict=eps > 0)
    sol = prob.solve(objective=lmi.trace(Z), eps=eps, **solver_options)
    return float(np.sqrt(max(sol.objective, 0.0)))


def frequency_response(sys: LinearSystem, omegas) -> np.ndarray:
    """Largest singular value of T(e^{jw}) = C (e^{jw} I - A)^{-1} B + D at each w."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    n = sys.n
    I = np.eye(n)
    out = np.empty(omegas.shape)
    for k, w in enumerate(omegas):
        if n:
            T = sys.C @ np.linalg.solve(np.exp(1j * w) * I - sys.A, sys.B) + sys.D
        else:
            T = sys.D.astype(complex)
        out[k] = np.linalg.svd(T, compute_uv=False)[0] if T.size else 0.0
    return out


def hinf_norm(sys: LinearSystem, n_grid: int = 2000, rtol: float = 1e-4, max_refine: int = 60,
              return_omega: bool = False):
    """Grid estimate of the H-infinity norm on [0, pi] with local refinement at the peak.

    The grid peak is bracketed by its neighbours and re-gridded until the peak
    value changes by less than ``rtol`` relative.
    """
    _require_stable(sys)
    grid = np.linspace(0.0, np.pi, n_grid)
    resp = frequency_response(sys, grid)
    k = int(np.argmax(resp))
    best, w_best = float(resp[k]), float(grid[k])
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, n_grid - 1)]
    for _ in range(max_refine):
        fine = np.linspace(lo, hi, 41)
        r = frequency_response(sys, fine)
        j = int(np.argmax(r))
        new = float(r[j])
        change = abs(new - best) / max(best, 1e-300)
        if new >= best:
            best, w_best = new, float(fine[j])
        lo = fine[max(j - 1, 0)]
        hi = fine[min(j + 1, len(fine) - 1)]
        if change < rtol or hi - lo < 1e-12:
            break
    if return_omega:
        return best, w_best
    return best


def write_frequency_csv(path, omegas, sigma_max, bound=None) -> Path:
    """Write ``omega,sigma_max[,bound]`` rows for plotting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["omega", "sigma_max"] + (["bound"] if bound is not None else [])
        writer.writerow(header)
        for w, s in zip(omegas, sigma_max):
            row = [repr(float(w)), repr(float(s))]
            if bound is not None:
                row.append(repr(float(bound)))
            writer.writerow(row)
    return path
