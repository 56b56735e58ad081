"""Disturbance bound as a quadratic matrix inequality and the set of data-consistent plants.

The noise bound constrains the unknown disturbance record W (m_w x N) by

    (I; W')' Phi (I; W') >= 0,   Phi = [[Phi_11, Phi_12], [Phi_12', Phi_22]],  Phi_22 < 0.

Pushing it through the data equation gives a QMI in G = (A_s B_s B_0),

    (I; G')' H (I; G') >= 0,

which describes every plant able to explain (Y, X_d, U).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, EmptyConsistentSetError, InvalidModelError

__all__ = [
    "NoiseQMI",
    "ConsistencyQMI",
    "norm_bound_phi",
    "check_noise_consistency",
    "noise_qmi_value",
    "build_H",
    "qmi_value",
    "membership_margin",
    "sample_qmi_ellipsoid",
    "sample_consistent_plants",
    "split_plant",
    "load_phi",
    "save_phi",
    "write_H_csv",
]


def _sym(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class NoiseQMI:
    Phi_11: np.ndarray
    Phi_12: np.ndarray
    Phi_22: np.ndarray

    def __post_init__(self):
        P11 = _sym(self.Phi_11)
        P22 = _sym(self.Phi_22)
        P12 = np.atleast_2d(np.asarray(self.Phi_12, dtype=float))
        if P12.shape != (P11.shape[0], P22.shape[0]):
            raise DimensionError(f"Phi_12 must be {P11.shape[0]}x{P22.shape[0]}, got {P12.shape}")
        lam = np.linalg.eigvalsh(P22).max()
        if lam >= -1e-12 * max(1.0, np.abs(P22).max()):
            raise InvalidModelError("Phi_22 must be negative definite")
        object.__setattr__(self, "Phi_11", P11)
        object.__setattr__(self, "Phi_12", P12)
        object.__setattr__(self, "Phi_22", P22)

    @property
    def m_w(self) -> int:
        return self.Phi_11.shape[0]

    @property
    def N(self) -> int:
        return self.Phi_22.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.Phi_11, self.Phi_12], [self.Phi_12.T, self.Phi_22]])


@dataclass(frozen=True, eq=False)
class ConsistencyQMI:
    """H partitioned with H_11 p x p and H_22 (n~+m) x (n~+m)."""

    H: np.ndarray
    p: int

    @property
    def H11(self) -> np.ndarray:
        return self.H[:self.p, :self.p]

    @property
    def H12(self) -> np.ndarray:
        return self.H[:self.p, self.p:]

    @property
    def H22(self) -> np.ndarray:
        return self.H[self.p:, self.p:]

    def center(self) -> np.ndarray:
        """Least-squares plant G_c = -H_12 H_22^{-1}, the centre of the ellipsoid."""
        return -np.linalg.solve(self.H22, self.H12.T).T

    def radius_matrix(self) -> np.ndarray:
        """H_11 - H_12 H_22^{-1} H_12' (psd iff the set is nonempty)."""
        return _sym(self.H11 - self.H12 @ np.linalg.solve(self.H22, self.H12.T))


def norm_bound_phi(sigma: float, N: int, factor: float = 1.35, m_w: int = 1) -> NoiseQMI:
    """Phi encoding W W' <= factor * N * sigma^2 * I."""
    if sigma < 0 or N < 1 or factor <= 0:
        raise ValueError("need sigma >= 0, N >= 1 and factor > 0")
    return NoiseQMI(factor * N * sigma ** 2 * np.eye(m_w), np.zeros((m_w, N)), -np.eye(N))


def noise_qmi_value(W, qmi: NoiseQMI) -> np.ndarray:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape != (qmi.m_w, qmi.N):
        raise DimensionError(f"W must be {qmi.m_w}x{qmi.N}, got {W.shape}")
    V = np.vstack([np.eye(qmi.m_w), W.T])
    return _sym(V.T @ qmi.matrix @ V)


def check_noise_consistency(W, qmi: NoiseQMI, tol: float | None = None) -> bool:
    val = noise_qmi_value(W, qmi)
    if tol is None:
        tol = 1e-8 * (1.0 + np.abs(val).max())
    return bool(np.linalg.eigvalsh(val).min() >= -tol)


def build_H(qmi: NoiseQMI, B_w, Y, X_d, U) -> ConsistencyQMI:
    """H = R Phi R' with R = [[B_w, Y], [0, -X_d], [0, -U]]."""
    B_w = np.atleast_2d(np.asarray(B_w, dtype=float))
    Y, X_d, U = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (Y, X_d, U))
    p, m_w = B_w.shape
    if np.linalg.matrix_rank(B_w) != m_w:
        raise InvalidModelError("B_w must have full column rank")
    N = Y.shape[1]
    if qmi.m_w != m_w or qmi.N != N or X_d.shape[1] != N or U.shape[1] != N or Y.shape[0] != p:
        raise DimensionError("Phi, B_w and data matrices are not compatible")
    R = np.block([
        [B_w, Y],
        [np.zeros((X_d.shape[0], m_w)), -X_d],
        [np.zeros((U.shape[0], m_w)), -U],
    ])
    return ConsistencyQMI(_sym(R @ qmi.matrix @ R.T), p)


def qmi_value(H: ConsistencyQMI, G) -> np.ndarray:
    """(I, G) H (I, G)' for a stacked plant G = (A_s B_s B_0) of shape p x (n~+m)."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape != (H.p, H.H.shape[0] - H.p):
        raise DimensionError(f"G must be {H.p}x{H.H.shape[0] - H.p}, got {G.shape}")
    V = np.hstack([np.eye(H.p), G])
    return _sym(V @ H.H @ V.T)


def membership_margin(H: ConsistencyQMI, G) -> float:
    """Smallest eigenvalue of the consistency QMI; nonnegative means G is in the set."""
    return float(np.linalg.eigvalsh(qmi_value(H, G)).min())


def membership_tol(H: ConsistencyQMI) -> float:
    return 1e-8 * (1.0 + np.linalg.norm(H.H, 2))


def sample_qmi_ellipsoid(H: ConsistencyQMI, count: int, rng: np.random.Generator,
                         boundary_fraction: float = 0.0) -> list[np.ndarray]:
    """Draw points G of {G : (I, G) H (I, G)' >= 0}.

    The set is ``{G_c + S^{1/2} V Lc^{-1} : ||V||_2 <= 1}`` with ``-H_22 = Lc Lc'``
    and ``S`` the radius matrix. V is a Gaussian direction normalised to unit
    spectral norm and scaled by a uniform radius; ``boundary_fraction`` of the
    draws are put on the boundary (radius one). This covers the set but is not
    uniform on it.
    """
    S = H.radius_matrix()
    lam, Q = np.linalg.eigh(S)
    if lam.min() < -membership_tol(H):
        raise EmptyConsistentSetError("no plant is consistent with the data and noise bound")
    # eigenvalues at roundoff level carry no spread; dropping them keeps a
    # point-like set (zero noise bound) a point
    lam = np.where(lam > 1e-12 * (1.0 + np.linalg.norm(H.H, 2)), lam, 0.0)
    S_half = Q @ np.diag(np.sqrt(lam)) @ Q.T
    Lc = np.linalg.cholesky(-H.H22)
    Gc = H.center()
    p, k = Gc.shape
    out = []
    n_boundary = int(round(boundary_fraction * count))
    for i in range(count):
        V = rng.standard_normal((p, k))
        nrm = np.linalg.norm(V, 2)
        r = 1.0 if i < n_boundary else rng.uniform()
        V = V * (r / nrm) if nrm > 0 else V
        # (G - Gc) Lc = S^{1/2} V
        out.append(Gc + np.linalg.solve(Lc.T, (S_half @ V).T).T)
    return out


def split_plant(G, n_tilde: int, p: int, m: int):
    """Split G = (A_s B_s  B_0) into ((A_s B_s), B_0)."""
    G = np.atleast_2d(G)
    return G[:, :n_tilde], G[:, n_tilde:n_tilde + m]


def sample_consistent_plants(H: ConsistencyQMI, n_tilde: int, m: int, count: int, seed=None,
                             boundary_fraction: float = 0.25) -> list[tuple[np.ndarray, np.ndarray]]:
    """Sample ``count`` members ((A_s B_s), B_0) of the data-consistent set.

    With a zero noise bound the set is a single point and every sample equals it.
    """
    if count == 0:
        return []
    rng = np.random.default_rng(seed)
    Gs = sample_qmi_ellipsoid(H, count, rng, boundary_fraction)
    return [split_plant(G, n_tilde, H.p, m) for G in Gs]


def load_phi(path) -> NoiseQMI:
    with open(path) as fh:
        d = json.load(fh)
    return NoiseQMI(d["Phi_11"], d["Phi_12"], d["Phi_22"])


def save_phi(qmi: NoiseQMI, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps({
        "Phi_11": qmi.Phi_11.tolist(),
        "Phi_12": qmi.Phi_12.tolist(),
        "Phi_22": qmi.Phi_22.tolist(),
    }))
    return path


def write_H_csv(H: ConsistencyQMI, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        csv.writer(fh).writerows([[repr(float(v)) for v in row] for row in H.H])
    return path
