"""Autoregressive plants and controllers, and their structured state-space form.

The lifted state used throughout is

    chi(t) = col(y(t-1), ..., y(t-l), u(t-1), ..., u(t-l)),

of dimension (p + m) * l. Time-ordered windows (oldest sample first) are used
for initial conditions and trajectories; :func:`window_to_chi` converts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import LinearSystem
from .errors import DimensionError, InvalidControllerError, InvalidModelError

__all__ = [
    "ARModel",
    "ARController",
    "StructuredRealization",
    "ControllerGain",
    "PerformanceSpec",
    "ClosedLoop",
    "shift_structure",
    "ar_to_state_space",
    "simulate",
    "simulate_state_space",
    "window_to_chi",
    "chi_to_window",
    "controller_to_gain",
    "gain_to_controller",
    "close_loop",
    "reduce",
    "load_model",
    "save_model",
    "load_performance",
]


def _frozen(M, shape=None, name="matrix") -> np.ndarray:
    A = np.array(M, dtype=float, ndmin=2)
    if shape is not None and A.shape != shape:
        raise InvalidModelError(f"{name} has shape {A.shape}, expected {shape}")
    A.setflags(write=False)
    return A


@dataclass(frozen=True, eq=False)
class ARModel:
    """A(q^-1) y(t) = B(q^-1) u(t) + B_w w(t) with A(xi) = I + A_1 xi + ... + A_l xi^l.

    ``A_coeffs`` holds A_1..A_l (p x p), ``B_coeffs`` holds B_0..B_l (p x m).
    """

    A_coeffs: tuple
    B_coeffs: tuple
    B_w: np.ndarray

    def __post_init__(self):
        if len(self.A_coeffs) < 1:
            raise InvalidModelError("lag must be at least 1")
        A0 = np.array(self.A_coeffs[0], dtype=float, ndmin=2)
        p = A0.shape[0]
        A = tuple(_frozen(a, (p, p), f"A_{i + 1}") for i, a in enumerate(self.A_coeffs))
        l = len(A)
        if len(self.B_coeffs) != l + 1:
            raise InvalidModelError(f"expected {l + 1} B coefficients (B_0..B_l), got {len(self.B_coeffs)}")
        m = np.array(self.B_coeffs[0], dtype=float, ndmin=2).shape[1]
        B = tuple(_frozen(b, (p, m), f"B_{i}") for i, b in enumerate(self.B_coeffs))
        Bw = np.asarray(self.B_w, dtype=float)
        Bw = _frozen(Bw.reshape(-1, 1) if Bw.ndim == 1 else Bw, None, "B_w")
        if Bw.shape[0] != p:
            raise InvalidModelError(f"B_w must have {p} rows, got {Bw.shape}")
        if np.linalg.matrix_rank(Bw) != Bw.shape[1]:
            raise InvalidModelError("B_w must have full column rank")
        object.__setattr__(self, "A_coeffs", A)
        object.__setattr__(self, "B_coeffs", B)
        object.__setattr__(self, "B_w", Bw)

    @property
    def p(self) -> int:
        return self.B_w.shape[0]

    @property
    def m(self) -> int:
        return self.B_coeffs[0].shape[1]

    @property
    def m_w(self) -> int:
        return self.B_w.shape[1]

    @property
    def l(self) -> int:
        return len(self.A_coeffs)

    @property
    def nx(self) -> int:
        """Dimension of the lifted state."""
        return (self.p + self.m) * self.l

    @property
    def A_bar(self) -> np.ndarray:
        return -np.hstack(self.A_coeffs)

    @property
    def B_bar(self) -> np.ndarray:
        return np.hstack(self.B_coeffs[1:])

    @property
    def B_0(self) -> np.ndarray:
        return self.B_coeffs[0]

    @classmethod
    def from_bar(cls, A_bar, B_bar, B_0, B_w) -> "ARModel":
        """Build from the row (A_bar B_bar) = (-A_1 .. -A_l  B_1 .. B_l)."""
        A_bar = np.atleast_2d(np.asarray(A_bar, dtype=float))
        B_bar = np.atleast_2d(np.asarray(B_bar, dtype=float))
        B_0 = np.atleast_2d(np.asarray(B_0, dtype=float))
        p = A_bar.shape[0]
        if A_bar.shape[1] % p:
            raise InvalidModelError("A_bar width must be a multiple of p")
        l = A_bar.shape[1] // p
        m = B_0.shape[1]
        if B_bar.shape != (p, m * l):
            raise InvalidModelError(f"B_bar must be {p}x{m * l}, got {B_bar.shape}")
        A = [-A_bar[:, i * p:(i + 1) * p] for i in range(l)]
        B = [B_0] + [B_bar[:, i * m:(i + 1) * m] for i in range(l)]
        return cls(tuple(A), tuple(B), B_w)

    def to_dict(self) -> dict:
        return {
            "p": self.p, "m": self.m, "m_w": self.m_w, "l": self.l,
            "A": [a.tolist() for a in self.A_coeffs],
            "B": [b.tolist() for b in self.B_coeffs],
            "B_w": self.B_w.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ARModel":
        try:
            model = cls(tuple(d["A"]), tuple(d["B"]), d["B_w"])
        except KeyError as exc:
            raise InvalidModelError(f"model file is missing field {exc}") from None
        for key in ("p", "m", "m_w", "l"):
            if key in d and int(d[key]) != getattr(model, key):
                raise InvalidModelError(f"declared {key}={d[key]} does not match coefficients ({getattr(model, key)})")
        return model


@dataclass(frozen=True, eq=False)
class ARController:
    """C(q^-1) u(t) = D(q^-1) y(t) with C(xi) = I + C_1 xi + ..., D(xi) = D_1 xi + ...

    ``C_coeffs`` holds C_1..C_l (m x m); ``D_coeffs`` holds D_0..D_l (m x p)
    with D_0 required to be zero.
    """

    C_coeffs: tuple
    D_coeffs: tuple

    def __post_init__(self):
        l = len(self.C_coeffs)
        if l < 1 or len(self.D_coeffs) != l + 1:
            raise InvalidControllerError("need C_1..C_l and D_0..D_l with l >= 1")
        C = tuple(np.array(c, dtype=float, ndmin=2) for c in self.C_coeffs)
        D = tuple(np.array(d, dtype=float, ndmin=2) for d in self.D_coeffs)
        m = C[0].shape[0]
        p = D[0].shape[1]
        if any(c.shape != (m, m) for c in C) or any(d.shape != (m, p) for d in D):
            raise InvalidControllerError("inconsistent controller coefficient shapes")
        if np.any(D[0] != 0):
            raise InvalidControllerError("D(xi) must have zero constant term (strictly proper controller)")
        for M in C + D:
            M.setflags(write=False)
        object.__setattr__(self, "C_coeffs", C)
        object.__setattr__(self, "D_coeffs", D)

    @property
    def l(self) -> int:
        return len(self.C_coeffs)

    @property
    def m(self) -> int:
        return self.C_coeffs[0].shape[0]

    @property
    def p(self) -> int:
        return self.D_coeffs[0].shape[1]


def shift_structure(p: int, m: int, l: int) -> tuple[np.ndarray, np.ndarray]:
    """The fixed rows (J_Az, J_Bz) of the lifted realization below the first p rows."""
    nx = (p + m) * l
    J_Az = np.zeros((nx - p, nx))
    J_Bz = np.zeros((nx - p, m))
    # y(t-1..t-l+1) -> y(t-2..t-l)
    J_Az[0:p * (l - 1), 0:p * (l - 1)] = np.eye(p * (l - 1))
    # new u(t-1) slot is fed by u(t)
    r0 = p * (l - 1)
    J_Bz[r0:r0 + m, :] = np.eye(m)
    # u(t-1..t-l+1) -> u(t-2..t-l)
    J_Az[r0 + m:, p * l:p * l + m * (l - 1)] = np.eye(m * (l - 1))
    return J_Az, J_Bz


@dataclass(frozen=True, eq=False)
class StructuredRealization:
    """chi(t+1) = A_z chi + B_z u + B_hat w,  y = (A_bar B_bar) chi + B_0 u + B_w w."""

    A_z: np.ndarray
    B_z: np.ndarray
    B_hat: np.ndarray
    AB_bar: np.ndarray
    B_0: np.ndarray
    B_w: np.ndarray
    J_Az: np.ndarray
    J_Bz: np.ndarray

    @property
    def nx(self) -> int:
        return self.A_z.shape[0]

    @property
    def p(self) -> int:
        return self.AB_bar.shape[0]

    @property
    def m(self) -> int:
        return self.B_z.shape[1]


def ar_to_state_space(model: ARModel) -> StructuredRealization:
    p, m, l, nx = model.p, model.m, model.l, model.nx
    J_Az, J_Bz = shift_structure(p, m, l)
    AB = np.hstack([model.A_bar, model.B_bar])
    A_z = np.vstack([AB, J_Az])
    B_z = np.vstack([model.B_0, J_Bz])
    B_hat = np.vstack([model.B_w, np.zeros((nx - p, model.m_w))])
    mats = [A_z, B_z, B_hat, AB, np.array(model.B_0), np.array(model.B_w), J_Az, J_Bz]
    for M in mats:
        M.setflags(write=False)
    return StructuredRealization(*mats)


def window_to_chi(y_past, u_past) -> np.ndarray:
    """Lifted state from time-ordered windows y(-l..-1) (p x l) and u(-l..-1) (m x l)."""
    y_past = np.atleast_2d(np.asarray(y_past, dtype=float))
    u_past = np.atleast_2d(np.asarray(u_past, dtype=float))
    if y_past.shape[1] != u_past.shape[1]:
        raise DimensionError("y and u windows must have the same length")
    return np.concatenate([y_past[:, ::-1].T.reshape(-1), u_past[:, ::-1].T.reshape(-1)])


def chi_to_window(chi, p: int, m: int, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`window_to_chi`."""
    chi = np.asarray(chi, dtype=float).reshape(-1)
    if chi.size != (p + m) * l:
        raise DimensionError(f"lifted state must have length {(p + m) * l}, got {chi.size}")
    y = chi[:p * l].reshape(l, p).T[:, ::-1]
    u = chi[p * l:].reshape(l, m).T[:, ::-1]
    return y, u


def _check_signals(model: ARModel, u, w):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[0] != model.m:
        raise DimensionError(f"u must have {model.m} rows, got {u.shape}")
    T = u.shape[1]
    if w is None:
        w = np.zeros((model.m_w, T))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if w.shape != (model.m_w, T):
        raise DimensionError(f"w must be {model.m_w}x{T}, got {w.shape}")
    return u, w, T


def simulate(model: ARModel, u, w=None, chi0=None) -> np.ndarray:
    """Run the AR recursion for t = 0..T-1 and return y (p x T).

    ``chi0`` is the lifted initial state (the window y(-1..-l), u(-1..-l));
    zero when omitted.
    """
    u, w, T = _check_signals(model, u, w)
    p, m, l = model.p, model.m, model.l
    if chi0 is None:
        y_hist, u_hist = np.zeros((p, l)), np.zeros((m, l))
    else:
        y_hist, u_hist = chi_to_window(chi0, p, m, l)
    Y = np.hstack([y_hist, np.zeros((p, T))])
    U = np.hstack([u_hist, u])
    for t in range(T):
        k = t + l
        acc = model.B_coeffs[0] @ U[:, k] + model.B_w @ w[:, t]
        for i in range(1, l + 1):
            acc += model.B_coeffs[i] @ U[:, k - i] - model.A_coeffs[i - 1] @ Y[:, k - i]
        Y[:, k] = acc
    return Y[:, l:]


def simulate_state_space(real: StructuredRealization, u, w=None, chi0=None) -> tuple[np.ndarray, np.ndarray]:
    """Iterate the lifted realization; returns (y, chi) with chi of shape nx x (T+1)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    T = u.shape[1]
    m_w = real.B_hat.shape[1]
    w = np.zeros((m_w, T)) if w is None else np.atleast_2d(np.asarray(w, dtype=float))
    if u.shape[0] != real.m or w.shape != (m_w, T):
        raise DimensionError("signal dimensions do not match the realization")
    chi = np.zeros((real.nx, T + 1))
    if chi0 is not None:
        chi[:, 0] = np.asarray(chi0, dtype=float).reshape(-1)
    y = np.zeros((real.p, T))
    for t in range(T):
        y[:, t] = real.AB_bar @ chi[:, t] + real.B_0 @ u[:, t] + real.B_w @ w[:, t]
        chi[:, t + 1] = real.A_z @ chi[:, t] + real.B_z @ u[:, t] + real.B_hat @ w[:, t]
    return y, chi


@dataclass(frozen=True, eq=False)
class ControllerGain:
    """u(t) = K chi(t) with K = (D_bar C_bar)."""

    K: np.ndarray
    l: int
    p: int
    m: int

    def __post_init__(self):
        K = np.array(self.K, dtype=float, ndmin=2)
        if K.shape != (self.m, (self.p + self.m) * self.l):
            raise DimensionError(f"K must be {self.m}x{(self.p + self.m) * self.l}, got {K.shape}")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

    @property
    def D_bar(self) -> np.ndarray:
        return self.K[:, :self.p * self.l]

    @property
    def C_bar(self) -> np.ndarray:
        return self.K[:, self.p * self.l:]


def controller_to_gain(ctrl: ARController) -> ControllerGain:
    D_bar = np.hstack(ctrl.D_coeffs[1:])
    C_bar = -np.hstack(ctrl.C_coeffs)
    return ControllerGain(np.hstack([D_bar, C_bar]), ctrl.l, ctrl.p, ctrl.m)


def gain_to_controller(gain: ControllerGain) -> ARController:
    p, m, l = gain.p, gain.m, gain.l
    D = [np.zeros((m, p))] + [gain.D_bar[:, i * p:(i + 1) * p] for i in range(l)]
    C = [-gain.C_bar[:, i * m:(i + 1) * m] for i in range(l)]
    return ARController(tuple(C), tuple(D))


@dataclass(frozen=True, eq=False)
class PerformanceSpec:
    """z(t) = C_z chi(t) + D_z u(t) + D_tilde w(t)."""

    C_z: np.ndarray
    D_z: np.ndarray
    D_tilde: np.ndarray

    def __post_init__(self):
        mats = [np.array(M, dtype=float, ndmin=2) for M in (self.C_z, self.D_z, self.D_tilde)]
        if len({M.shape[0] for M in mats}) != 1:
            raise DimensionError("C_z, D_z and D_tilde must have the same number of rows")
        for name, M in zip(("C_z", "D_z", "D_tilde"), mats):
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def p_z(self) -> int:
        return self.C_z.shape[0]

    def to_dict(self) -> dict:
        return {"C_z": self.C_z.tolist(), "D_z": self.D_z.tolist(), "D_tilde": self.D_tilde.tolist()}


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """chi(t+1) = A_hat chi + B_hat w,  z = C_hat chi + D_tilde w."""

    A_hat: np.ndarray
    B_hat: np.ndarray
    C_hat: np.ndarray
    D_tilde: np.ndarray

    def as_system(self) -> LinearSystem:
        return LinearSystem(self.A_hat, self.B_hat, self.C_hat, self.D_tilde)


def close_loop(real: StructuredRealization, K: ControllerGain | np.ndarray, perf: PerformanceSpec) -> ClosedLoop:
    Kmat = K.K if isinstance(K, ControllerGain) else np.atleast_2d(np.asarray(K, dtype=float))
    if Kmat.shape != (real.m, real.nx):
        raise DimensionError(f"K must be {real.m}x{real.nx}, got {Kmat.shape}")
    if perf.C_z.shape[1] != real.nx or perf.D_z.shape[1] != real.m or perf.D_tilde.shape[1] != real.B_hat.shape[1]:
        raise DimensionError("performance spec does not match the realization")
    return ClosedLoop(real.A_z + real.B_z @ Kmat, real.B_hat, perf.C_z + perf.D_z @ Kmat, perf.D_tilde)


def reduce(cl: ClosedLoop, X_s, tol: float = 1e-9) -> LinearSystem:
    """Project the closed loop onto im(X_s): (X_s' A X_s, X_s' B, C X_s, D)."""
    X_s = np.atleast_2d(np.asarray(X_s, dtype=float))
    if X_s.shape[0] != cl.A_hat.shape[0]:
        raise DimensionError(f"X_s must have {cl.A_hat.shape[0]} rows")
    if not np.allclose(X_s.T @ X_s, np.eye(X_s.shape[1]), atol=tol):
        raise DimensionError("X_s must be semi-orthogonal")
    return LinearSystem(X_s.T @ cl.A_hat @ X_s, X_s.T @ cl.B_hat, cl.C_hat @ X_s, cl.D_tilde)


def load_model(path) -> ARModel:
    with open(path) as fh:
        return ARModel.from_dict(json.load(fh))


def save_model(model: ARModel, path, performance: PerformanceSpec | None = None) -> Path:
    d = model.to_dict()
    if performance is not None:
        d["performance"] = performance.to_dict()
    path = Path(path)
    path.write_text(json.dumps(d, indent=2))
    return path


def load_performance(path_or_dict) -> PerformanceSpec:
    d = path_or_dict
    if not isinstance(d, dict):
        with open(d) as fh:
            d = json.load(fh)
    d = d.get("performance", d)
    try:
        return PerformanceSpec(d["C_z"], d["D_z"], d["D_tilde"])
    except KeyError as exc:
        raise InvalidModelError(f"performance spec is missing {exc}") from None
