"""Data matrices from recorded trajectories, the reduced basis, and data assumption checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .armodel import window_to_chi
from .errors import AssumptionViolation, DegenerateDataError, DimensionError, InsufficientDataError

__all__ = [
    "Trajectory",
    "DataMatrices",
    "ReducedBasis",
    "SubspaceMaps",
    "build_data_matrices",
    "compact_svd",
    "block_hankel",
    "check_persistency",
    "check_assumption1",
    "check_assumption2",
    "check_assumption3",
    "compute_LF",
    "read_trajectory_csv",
    "write_trajectory_csv",
]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded samples, time ordered, starting at sample index ``t0``.

    ``w`` is only ever used by test oracles; synthesis never reads it.
    """

    u: np.ndarray
    y: np.ndarray
    w: np.ndarray | None = None
    t0: int = 0

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if u.shape[1] != y.shape[1]:
            raise DimensionError("u and y must have the same number of samples")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        if self.w is not None:
            w = np.atleast_2d(np.asarray(self.w, dtype=float))
            if w.shape[1] != u.shape[1]:
                raise DimensionError("w must have the same number of samples as u")
            object.__setattr__(self, "w", w)

    @property
    def length(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True, eq=False)
class DataMatrices:
    Y: np.ndarray
    X: np.ndarray
    U: np.ndarray
    W: np.ndarray | None = None  # oracle use only

    @property
    def N(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    """Compact SVD X = X_s X_d with X_s semi-orthogonal."""

    X_s: np.ndarray
    X_d: np.ndarray
    singular_values: np.ndarray

    @property
    def n_tilde(self) -> int:
        return self.X_s.shape[1]


@dataclass(frozen=True, eq=False)
class SubspaceMaps:
    """L (n~ x n~) and F (n~ x ((p+m)l - p)) with L X_s' = (col(I_p, 0)  F)."""

    L: np.ndarray
    F: np.ndarray
    p: int

    @property
    def L1(self) -> np.ndarray:
        return self.L[:self.p]

    @property
    def L2(self) -> np.ndarray:
        return self.L[self.p:]

    @property
    def F12(self) -> np.ndarray:
        return self.F[:self.p]

    @property
    def F22(self) -> np.ndarray:
        return self.F[self.p:]


def build_data_matrices(traj: Trajectory, l: int, N: int | None = None) -> DataMatrices:
    """Stack (Y, X, U) from a trajectory of ``l + N`` samples.

    The first ``l`` samples form the initial window; column t of X is
    chi(t) = col(y(t-1..t-l), u(t-1..t-l)) for t = 0..N-1.
    """
    total = traj.length
    if N is None:
        N = total - l
    if l < 1 or N < 1 or total < l + N:
        raise InsufficientDataError(f"need l + N = {l + N} samples, trajectory has {total}")
    u, y = traj.u, traj.y
    X = np.column_stack([window_to_chi(y[:, t:t + l], u[:, t:t + l]) for t in range(N)])
    Y = y[:, l:l + N].copy()
    U = u[:, l:l + N].copy()
    W = None if traj.w is None else traj.w[:, l:l + N].copy()
    return DataMatrices(Y, X, U, W)


def _threshold(s, shape, rank_tol: float) -> float:
    return rank_tol * s[0] * max(shape)


def compact_svd(X, rank_tol: float = 1e-9) -> ReducedBasis:
    """Compact SVD of X keeping singular values above ``rank_tol * sigma_1 * max(X.shape)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Us, s, Vt = np.linalg.svd(X, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise DegenerateDataError("data matrix X is zero")
    r = int(np.sum(s > _threshold(s, X.shape, rank_tol)))
    X_s = Us[:, :r]
    X_d = s[:r, None] * Vt[:r]
    return ReducedBasis(X_s, X_d, s[:r].copy())


def block_hankel(u, depth: int) -> np.ndarray:
    """Depth-``depth`` block Hankel matrix of a (m x T) sequence."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    m, T = u.shape
    cols = T - depth + 1
    if cols < 1:
        raise InsufficientDataError(f"sequence of length {T} too short for depth {depth}")
    return np.vstack([u[:, i:i + cols] for i in range(depth)])


def _full_row_rank(M, rank_tol: float = 1e-9) -> bool:
    M = np.atleast_2d(M)
    if M.shape[0] == 0:
        return True
    if M.shape[1] < M.shape[0]:
        return False
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return False
    return bool(np.sum(s > _threshold(s, M.shape, rank_tol)) == M.shape[0])


def check_persistency(u, order: int, rank_tol: float = 1e-9) -> bool:
    """True iff the depth-``order`` block Hankel matrix of ``u`` has full row rank m*order."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    m, T = u.shape
    if order < 1:
        raise ValueError("order must be positive")
    if T < (m + 1) * order - 1:
        raise InsufficientDataError(f"persistency of order {order} needs at least {(m + 1) * order - 1} samples")
    return _full_row_rank(block_hankel(u, order), rank_tol)


def image_residual(basis: ReducedBasis, B_hat) -> float:
    """Largest column residual of (I - X_s X_s') B_hat relative to the column norm."""
    B_hat = np.atleast_2d(np.asarray(B_hat, dtype=float))
    R = B_hat - basis.X_s @ (basis.X_s.T @ B_hat)
    norms = np.linalg.norm(B_hat, axis=0)
    res = np.linalg.norm(R, axis=0)
    rel = np.where(norms > 0, res / np.where(norms > 0, norms, 1.0), 0.0)
    return float(rel.max()) if rel.size else 0.0


def check_assumption1(basis: ReducedBasis, B_hat, tol: float = 1e-8) -> bool:
    """im(B_hat) within im(X_s). Persistency of the input must be checked separately."""
    return image_residual(basis, B_hat) <= tol


def check_assumption2(X, p: int, rank_tol: float = 1e-9) -> bool:
    """First ``p`` rows of X linearly independent."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return _full_row_rank(X[:p], rank_tol)


def check_assumption3(X_d, U, rank_tol: float = 1e-9) -> bool:
    """col(X_d, U) has full row rank n~ + m."""
    return _full_row_rank(np.vstack([np.atleast_2d(X_d), np.atleast_2d(U)]), rank_tol)


def compute_LF(basis: ReducedBasis, p: int) -> SubspaceMaps:
    """Solve L X_s' = (col(I_p, 0)  F) with L_1 = (X_s1 X_s1')^{-1} X_s1 and L_2 an orthonormal kernel basis."""
    X_s = basis.X_s
    n_t = X_s.shape[1]
    X_s1, X_s2 = X_s[:p], X_s[p:]
    if n_t < p or not _full_row_rank(X_s1):
        raise AssumptionViolation("the first p rows of X are not linearly independent")
    L1 = np.linalg.solve(X_s1 @ X_s1.T, X_s1)
    L2 = scipy.linalg.null_space(X_s1).T
    if L2.shape[0] != n_t - p:
        raise AssumptionViolation("kernel of X_s1 has unexpected dimension")
    L = np.vstack([L1, L2])
    F = L @ X_s2.T
    return SubspaceMaps(L, F, p)


def read_trajectory_csv(path, m: int, p: int) -> Trajectory:
    """Read ``t,u_1..u_m,y_1..y_p[,w_1..w_mw]`` rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    if len(header) < 1 + m + p:
        raise DimensionError(f"CSV header {header} has fewer than {1 + m + p} columns")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    t = data[:, 0]
    u = data[:, 1:1 + m].T
    y = data[:, 1 + m:1 + m + p].T
    w = data[:, 1 + m + p:].T if len(header) > 1 + m + p else None
    return Trajectory(u, y, w, int(round(t[0])) if len(t) else 0)


def write_trajectory_csv(traj: Trajectory, path, include_w: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m, p = traj.u.shape[0], traj.y.shape[0]
    cols = ["t"] + [f"u_{i + 1}" for i in range(m)] + [f"y_{i + 1}" for i in range(p)]
    use_w = include_w and traj.w is not None
    if use_w:
        cols += [f"w_{i + 1}" for i in range(traj.w.shape[0])]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for k in range(traj.length):
            row = [traj.t0 + k] + [repr(float(v)) for v in traj.u[:, k]] + [repr(float(v)) for v in traj.y[:, k]]
            if use_w:
                row += [repr(float(v)) for v in traj.w[:, k]]
            writer.writerow(row)
    return path
