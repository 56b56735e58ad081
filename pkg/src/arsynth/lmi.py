"""Symmetric block matrices affine in decision variables, and the SDP solve contract.

A :class:`Problem` owns a set of decision variables (symmetric matrices,
rectangular matrices, scalars) packed into one real vector. Symmetric variables
use the scaled ``svec`` packing: diagonal entries enter with weight 1 and each
off-diagonal pair with weight ``1/sqrt(2)``, so the packing is an isometry
between the Frobenius and Euclidean inner products.

Expressions are :class:`Affine` objects: a constant plus a sum of
``L @ V @ R`` (or ``L @ V.T @ R``) terms. An :class:`LMIExpression` is a block
layout of affine blocks that is symmetric by construction. Constraints are
``expr >= eps*I`` (strict) or ``expr >= 0``.

Two backends are available behind :meth:`Problem.solve`: ``"cvxopt"`` (the
default, native LMI form) and ``"cvxpy"`` (any installed conic solver).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, InfeasibleError, NumericalError, SDPError, UnboundedError

__all__ = [
    "DecisionVar",
    "Affine",
    "LMIExpression",
    "Problem",
    "SDPSolution",
    "const",
    "trace",
    "assemble",
    "substitute",
    "svec",
    "smat",
    "InfeasibleError",
    "UnboundedError",
    "NumericalError",
    "SDPError",
]

_SQRT2 = math.sqrt(2.0)


def svec(M) -> np.ndarray:
    """Pack the upper triangle of a symmetric matrix row by row, off-diagonals times sqrt(2)."""
    M = np.asarray(M, dtype=float)
    i, j = np.triu_indices(M.shape[0])
    scale = np.where(i == j, 1.0, _SQRT2)
    return M[i, j] * scale


def smat(v, n: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float)
    i, j = np.triu_indices(n)
    scale = np.where(i == j, 1.0, 1.0 / _SQRT2)
    M = np.zeros((n, n))
    M[i, j] = v * scale
    M[j, i] = v * scale
    return M


@dataclass(frozen=True)
class DecisionVar:
    """A named block of the decision vector."""

    name: str
    kind: str  # "symmetric" | "full" | "scalar"
    shape: tuple[int, int]
    offset: int
    lower: float | None = None
    upper: float | None = None

    @property
    def size(self) -> int:
        if self.kind == "symmetric":
            n = self.shape[0]
            return n * (n + 1) // 2
        return self.shape[0] * self.shape[1]

    def unpack(self, x) -> np.ndarray | float:
        seg = np.asarray(x, dtype=float)[self.offset:self.offset + self.size]
        if self.kind == "symmetric":
            return smat(seg, self.shape[0])
        if self.kind == "scalar":
            return float(seg[0])
        return seg.reshape(self.shape)

    def pack(self, value) -> np.ndarray:
        if self.kind == "symmetric":
            return svec(value)
        return np.asarray(value, dtype=float).reshape(-1)

    def basis(self) -> np.ndarray:
        """Matrices E_k with V = sum_k x_k E_k, shape (size, rows, cols)."""
        r, c = self.shape
        if self.kind == "symmetric":
            n = r
            E = np.zeros((self.size, n, n))
            for k, (i, j) in enumerate(zip(*np.triu_indices(n))):
                if i == j:
                    E[k, i, i] = 1.0
                else:
                    E[k, i, j] = E[k, j, i] = 1.0 / _SQRT2
            return E
        E = np.zeros((self.size, r, c))
        rr, cc = np.unravel_index(np.arange(self.size), (r, c))
        E[np.arange(self.size), rr, cc] = 1.0
        return E


@dataclass(frozen=True)
class _Term:
    left: np.ndarray
    var: DecisionVar
    right: np.ndarray
    transposed: bool = False


def _as2d(M) -> np.ndarray:
    return np.atleast_2d(np.asarray(M, dtype=float))


class Affine:
    """Matrix-valued affine function of the decision variables."""

    __array_ufunc__ = None  # make ndarray @ Affine defer to __rmatmul__

    def __init__(self, constant, terms: Sequence[_Term] = ()):
        self.constant = _as2d(constant)
        self.terms = tuple(terms)
        for t in self.terms:
            inner = self._inner_shape(t)
            if t.left.shape[1] != inner[0] or t.right.shape[0] != inner[1]:
                raise DimensionError(f"term shapes {t.left.shape} {inner} {t.right.shape} do not chain")
            if (t.left.shape[0], t.right.shape[1]) != self.constant.shape:
                raise DimensionError("term shape differs from expression shape")

    @staticmethod
    def _inner_shape(t: _Term) -> tuple[int, int]:
        if t.var.kind == "scalar":
            k = t.left.shape[1]
            return (k, k)
        r, c = t.var.shape
        return (c, r) if t.transposed else (r, c)

    @classmethod
    def of(cls, var: DecisionVar) -> "Affine":
        r, c = var.shape
        return cls(np.zeros((r, c)), [_Term(np.eye(r), var, np.eye(c))])

    @property
    def shape(self) -> tuple[int, int]:
        return self.constant.shape

    @property
    def T(self) -> "Affine":
        terms = []
        for t in self.terms:
            flip = False if t.var.kind in ("symmetric", "scalar") else not t.transposed
            terms.append(_Term(t.right.T, t.var, t.left.T, flip))
        return Affine(self.constant.T, terms)

    def variables(self) -> set[DecisionVar]:
        return {t.var for t in self.terms}

    # arithmetic -------------------------------------------------------
    def _coerce(self, other) -> "Affine":
        if isinstance(other, Affine):
            return other
        other = _as2d(other)
        if other.shape == (1, 1) and self.shape != (1, 1):
            other = other[0, 0] * np.ones(self.shape)
        return Affine(other)

    def __add__(self, other):
        other = self._coerce(other)
        if other.shape != self.shape:
            raise DimensionError(f"cannot add {self.shape} and {other.shape}")
        return Affine(self.constant + other.constant, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.constant, [_Term(-t.left, t.var, t.right, t.transposed) for t in self.terms])

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __matmul__(self, M):
        if isinstance(M, Affine):
            raise TypeError("product of two affine expressions is not affine")
        M = _as2d(M)
        if M.shape[0] != self.shape[1]:
            raise DimensionError(f"cannot multiply {self.shape} by {M.shape}")
        return Affine(self.constant @ M, [_Term(t.left, t.var, t.right @ M, t.transposed) for t in self.terms])

    def __rmatmul__(self, M):
        M = _as2d(M)
        if M.shape[1] != self.shape[0]:
            raise DimensionError(f"cannot multiply {M.shape} by {self.shape}")
        return Affine(M @ self.constant, [_Term(M @ t.left, t.var, t.right, t.transposed) for t in self.terms])

    def __mul__(self, c):
        if isinstance(c, Affine):
            raise TypeError("product of two affine expressions is not affine")
        c = np.asarray(c, dtype=float)
        if c.ndim == 0:
            return Affine(self.constant * float(c),
                          [_Term(t.left * float(c), t.var, t.right, t.transposed) for t in self.terms])
        # scalar-valued expression times a constant matrix
        if self.shape != (1, 1):
            raise DimensionError("only 1x1 expressions can scale a matrix")
        M = _as2d(c)
        terms = []
        for t in self.terms:
            if t.var.kind != "scalar":
                raise TypeError("matrix scaling is only supported for scalar variables")
            coef = float(t.left[0, 0] * t.right[0, 0])
            terms.append(_Term(coef * M, t.var, np.eye(M.shape[1])))
        return Affine(self.constant[0, 0] * M, terms)

    __rmul__ = __mul__

    def value(self, assignment) -> np.ndarray:
        return substitute(self, assignment)

    def __repr__(self):
        names = sorted({t.var.name for t in self.terms})
        return f"Affine(shape={self.shape}, vars={names})"


def const(M) -> Affine:
    return Affine(M)


def trace(X: Affine) -> Affine:
    """Trace of a square affine expression as a 1x1 affine expression."""
    n = X.shape[0]
    if X.shape != (n, n):
        raise DimensionError("trace needs a square expression")
    out = Affine(np.array([[np.trace(X.constant)]]))
    for i in range(n):
        e = np.zeros((1, n))
        e[0, i] = 1.0
        out = out + e @ X @ e.T
    return out


def _term_value(t: _Term, assignment) -> np.ndarray:
    v = assignment[t.var.name]
    if t.var.kind == "scalar":
        return float(np.asarray(v).reshape(-1)[0]) * (t.left @ t.right)
    V = _as2d(v)
    if t.transposed:
        V = V.T
    return t.left @ V @ t.right


def substitute(expr, assignment) -> np.ndarray:
    """Evaluate an :class:`Affine` or :class:`LMIExpression` at ``assignment`` (name -> value)."""
    if isinstance(expr, LMIExpression):
        return expr.evaluate(assignment)
    out = expr.constant.copy()
    for t in expr.terms:
        out = out + _term_value(t, assignment)
    return out


@dataclass
class LMIExpression:
    """Symmetric block matrix of affine blocks.

    ``blocks[i][j]`` for ``j >= i`` holds the stored blocks; the lower triangle
    is the transpose of the upper one.
    """

    row_sizes: tuple[int, ...]
    blocks: dict = field(repr=False)  # (i, j) -> Affine with i <= j

    @property
    def size(self) -> int:
        return int(sum(self.row_sizes))

    def block(self, i: int, j: int) -> Affine | None:
        if i <= j:
            return self.blocks.get((i, j))
        b = self.blocks.get((j, i))
        return None if b is None else b.T

    def variables(self) -> set[DecisionVar]:
        out: set[DecisionVar] = set()
        for b in self.blocks.values():
            out |= b.variables()
        return out

    def evaluate(self, assignment) -> np.ndarray:
        n = len(self.row_sizes)
        rows = []
        for i in range(n):
            row = []
            for j in range(n):
                b = self.block(i, j)
                if b is None:
                    row.append(np.zeros((self.row_sizes[i], self.row_sizes[j])))
                else:
                    row.append(substitute(b, assignment))
            rows.append(row)
        return np.block(rows)

    def lower(self, nvars: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(F0, F)`` with ``expr(x) = F0 + sum_k x_k F[k]``."""
        d = self.size
        off = np.concatenate([[0], np.cumsum(self.row_sizes)]).astype(int)
        F0 = np.zeros((d, d))
        F = np.zeros((nvars, d, d))
        for (i, j), b in self.blocks.items():
            ri, rj = slice(off[i], off[i + 1]), slice(off[j], off[j + 1])
            C = b.constant
            G = np.zeros((nvars,) + b.shape)
            for t in b.terms:
                var = t.var
                sl = slice(var.offset, var.offset + var.size)
                if var.kind == "scalar":
                    G[sl] += (t.left @ t.right)[None]
                    continue
                E = var.basis()
                if t.transposed:
                    E = E.transpose(0, 2, 1)
                G[sl] += np.einsum("ia,kab,bj->kij", t.left, E, t.right)
            F0[ri, rj] += C
            F[:, ri, rj] += G
            if i != j:
                F0[rj, ri] += C.T
                F[:, rj, ri] += G.transpose(0, 2, 1)
        return F0, F


def _random_assignment(variables, rng) -> dict:
    out = {}
    for v in variables:
        if v.kind == "scalar":
            out[v.name] = float(rng.standard_normal())
        elif v.kind == "symmetric":
            A = rng.standard_normal(v.shape)
            out[v.name] = A + A.T
        else:
            out[v.name] = rng.standard_normal(v.shape)
    return out


def assemble(blocks, tol: float = 1e-9) -> LMIExpression:
    """Build a symmetric :class:`LMIExpression` from a square grid of blocks.

    ``blocks`` is a list of rows. Entries may be :class:`Affine`, plain arrays,
    or ``None`` (zero block, or the transpose of its mirror). If both
    ``(i, j)`` and ``(j, i)`` are given they must be transposes of each other,
    and diagonal blocks must be symmetric; both are checked by evaluation at a
    random assignment.
    """
    n = len(blocks)
    if any(len(row) != n for row in blocks):
        raise DimensionError("block layout must be square")
    grid = [[None if b is None else (b if isinstance(b, Affine) else Affine(b)) for b in row] for row in blocks]

    rows = [None] * n
    cols = [None] * n
    for i in range(n):
        for j in range(n):
            b = grid[i][j]
            if b is None:
                continue
            r, c = b.shape
            for store, idx, val in ((rows, i, r), (cols, j, c)):
                if store[idx] is None:
                    store[idx] = val
                elif store[idx] != val:
                    raise DimensionError(f"inconsistent block size at ({i}, {j})")
    sizes = []
    for i in range(n):
        a, b = rows[i], cols[i]
        if a is not None and b is not None and a != b:
            raise DimensionError(f"block row {i} has height {a} but block column {i} has width {b}")
        s = a if a is not None else b
        if s is None:
            raise DimensionError(f"cannot infer size of block {i}")
        sizes.append(s)

    rng = np.random.default_rng(0)
    stored = {}
    for i in range(n):
        for j in range(i, n):
            up, lo = grid[i][j], grid[j][i]
            if up is None and lo is None:
                continue
            if up is None:
                up = lo.T
            elif lo is not None:
                vals = _random_assignment(up.variables() | lo.variables(), rng)
                a, b = substitute(up, vals), substitute(lo, vals)
                if not np.allclose(a, b.T, atol=tol * (1 + np.abs(a).max())):
                    raise DimensionError(f"blocks ({i}, {j}) and ({j}, {i}) are not transposes")
            if i == j:
                vals = _random_assignment(up.variables(), rng)
                a = substitute(up, vals)
                if not np.allclose(a, a.T, atol=tol * (1 + np.abs(a).max())):
                    raise DimensionError(f"diagonal block {i} is not symmetric")
            stored[(i, j)] = up
    return LMIExpression(tuple(sizes), stored)


@dataclass
class SDPSolution:
    """Result of :meth:`Problem.solve`.

    ``margins`` holds, per constraint, ``lambda_min(expr) - required`` where
    ``required`` is ``eps`` for strict constraints and 0 otherwise;
    ``margin`` is the worst of them.
    """

    status: str  # "optimal" | "numerical-trouble"
    x: np.ndarray
    objective: float | None
    margins: list[float]
    min_eigs: list[float]
    variables: dict = field(repr=False)
    backend: str = "cvxopt"
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def margin(self) -> float:
        return min(self.margins) if self.margins else math.inf

    def value(self, name: str):
        return self.variables[name].unpack(self.x)

    def assignment(self) -> dict:
        return {name: v.unpack(self.x) for name, v in self.variables.items()}


class Problem:
    """A semidefinite program assembled from LMI constraints."""

    def __init__(self):
        self.vars: dict[str, DecisionVar] = {}
        self.constraints: list[tuple[LMIExpression, bool]] = []
        self._n = 0

    def _declare(self, name, kind, shape, lower=None, upper=None) -> Affine:
        if name in self.vars:
            raise ValueError(f"variable {name!r} already declared")
        var = DecisionVar(name, kind, shape, self._n, lower, upper)
        self.vars[name] = var
        self._n += var.size
        return Affine.of(var)

    def symmetric(self, name: str, n: int) -> Affine:
        return self._declare(name, "symmetric", (n, n))

    def full(self, name: str, rows: int, cols: int) -> Affine:
        return self._declare(name, "full", (rows, cols))

    def scalar(self, name: str, lower: float | None = None, upper: float | None = None) -> Affine:
        return self._declare(name, "scalar", (1, 1), lower, upper)

    @property
    def nvars(self) -> int:
        return self._n

    def add(self, expr: LMIExpression, strict: bool = True) -> None:
        """Add ``expr >= eps*I`` (strict) or ``expr >= 0``."""
        if not isinstance(expr, LMIExpression):
            expr = assemble([[expr]])
        for v in expr.variables():
            if self.vars.get(v.name) is not v:
                raise ValueError(f"variable {v.name!r} does not belong to this problem")
        self.constraints.append((expr, strict))

    def _objective_vector(self, objective) -> tuple[np.ndarray, float]:
        c = np.zeros(self._n)
        if objective is None:
            return c, 0.0
        if not isinstance(objective, Affine) or objective.shape != (1, 1):
            raise DimensionError("objective must be a 1x1 affine expression")
        F0, F = assemble([[objective]]).lower(self._n)
        return F[:, 0, 0], float(F0[0, 0])

    def _bounds(self):
        rows, rhs = [], []
        for v in self.vars.values():
            if v.kind != "scalar":
                continue
            if v.lower is not None:
                g = np.zeros(self._n)
                g[v.offset] = -1.0
                rows.append(g)
                rhs.append(-v.lower)
            if v.upper is not None:
                g = np.zeros(self._n)
                g[v.offset] = 1.0
                rows.append(g)
                rhs.append(v.upper)
        return rows, rhs

    def lowered(self):
        return [(expr.lower(self._n), strict) for expr, strict in self.constraints]

    def dump_triplets(self, path) -> None:
        """Write the assembled problem as ``block row col variable coefficient`` lines.

        ``variable`` is ``const`` or ``name[k]`` with ``k`` the index in the
        variable's packed vector.
        """
        labels = [None] * self._n
        for v in self.vars.values():
            for k in range(v.size):
                labels[v.offset + k] = f"{v.name}[{k}]"
        with open(path, "w") as fh:
            fh.write("# block row col variable coefficient\n")
            for b, ((F0, F), _) in enumerate(self.lowered()):
                for (i, j) in zip(*np.nonzero(np.triu(F0))):
                    fh.write(f"{b} {i} {j} const {F0[i, j]!r}\n")
                for k in range(self._n):
                    for (i, j) in zip(*np.nonzero(np.triu(F[k]))):
                        fh.write(f"{b} {i} {j} {labels[k]} {F[k, i, j]!r}\n")

    def solve(self, objective: Affine | None = None, maximize: bool = False, eps: float = 1e-7,
              feas_tol: float = 1e-7, backend: str = "cvxopt", solver_tol: float | None = None,
              eps_absolute: bool = False, **backend_options) -> SDPSolution:
        """Solve the SDP and verify the returned point by eigenvalues.

        Strict constraints use ``expr >= eps_j I`` with
        ``eps_j = eps * (1 + max|constant term|)`` unless ``eps_absolute``.

        Raises
        ------
        InfeasibleError, UnboundedError, NumericalError
        """
        if not self.constraints:
            raise ValueError("problem has no constraints")
        lowered = self.lowered()
        levels = []
        for (F0, _), strict in lowered:
            if not strict:
                levels.append(0.0)
            elif eps_absolute:
                levels.append(eps)
            else:
                levels.append(eps * (1.0 + np.abs(F0).max()))
        c, c0 = self._objective_vector(objective)
        sign = -1.0 if maximize else 1.0
        brows, brhs = self._bounds()

        if backend == "cvxopt":
            status, x, diag = _solve_cvxopt(sign * c, lowered, levels, brows, brhs, solver_tol, backend_options)
        elif backend == "cvxpy":
            status, x, diag = _solve_cvxpy(sign * c, lowered, levels, brows, brhs, solver_tol, backend_options)
        else:
            raise ValueError(f"unknown backend {backend!r}")

        if status == "infeasible":
            raise InfeasibleError("SDP is infeasible", diag)
        if status == "unbounded":
            raise UnboundedError("SDP objective is unbounded", diag)
        if x is None or not np.all(np.isfinite(x)):
            raise NumericalError("solver returned no usable point", diag)

        margins, eigs, tols = [], [], []
        for ((F0, F), strict), lev in zip(lowered, levels):
            M = F0 + np.tensordot(x, F, axes=1)
            lam = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
            eigs.append(lam)
            margins.append(lam - lev)
            # relative to the size of the evaluated matrix
            tols.append(feas_tol * (1.0 + (np.abs(M).max() if M.size else 0.0)))
        for g, h in zip(brows, brhs):
            margins.append(float(h - g @ x))
            eigs.append(float(h - g @ x))
        worst = min(margins)
        # whatever the solver claims, the point must verify: strict constraints
        # positive definite, non-strict ones and bounds within feas_tol
        # (a strict constraint with a zero level is effectively non-strict)
        ok = all((lam > 0 if strict and lev > 0 else lam >= -tol)
                 for lam, (_, strict), lev, tol in zip(eigs, lowered, levels, tols))
        ok = ok and all(m >= -feas_tol for m in margins[len(lowered):])
        if not ok:
            raise NumericalError(f"solver status {diag.get('status')!r}, point fails verification "
                                 f"(worst margin {worst:.3g})", diag)
        if status != "optimal" or worst < -10 * feas_tol * (1 + max(abs(l) for l in levels + [1.0])):
            status = "numerical-trouble"
        obj = float(c @ x + c0) if objective is not None else None
        diag["levels"] = levels
        return SDPSolution(status, x, obj, margins, eigs, dict(self.vars), backend, diag)


def _solve_cvxopt(c, lowered, levels, brows, brhs, solver_tol, options):
    from cvxopt import matrix, solvers

    n = len(c)
    Gs, hs = [], []
    for ((F0, F), _), lev in zip(lowered, levels):
        d = F0.shape[0]
        # cvxopt: sum_k x_k G_k + s = h, s psd ; column k is vec(-F_k)
        G = -F.reshape(n, d * d).T
        Gs.append(matrix(np.ascontiguousarray(G)))
        hs.append(matrix(F0 - lev * np.eye(d)))
    kwargs = {}
    if brows:
        kwargs["Gl"] = matrix(np.array(brows))
        kwargs["hl"] = matrix(np.array(brhs, dtype=float))
    opts = {"show_progress": False, "maxiters": 200}
    if solver_tol is not None:
        opts.update(abstol=solver_tol, reltol=solver_tol, feastol=solver_tol)
    opts.update(options)
    try:
        sol = solvers.sdp(matrix(np.asarray(c, dtype=float)), Gs=Gs, hs=hs, options=opts, **kwargs)
    except (ArithmeticError, ValueError) as exc:
        return "error", None, {"status": "exception", "message": str(exc)}
    raw = sol["status"]
    diag = {k: sol.get(k) for k in ("status", "primal objective", "dual objective", "gap",
                                    "relative gap", "primal infeasibility", "dual infeasibility",
                                    "iterations")}
    if raw == "primal infeasible":
        return "infeasible", None, diag
    if raw == "dual infeasible":
        return "unbounded", None, diag
    x = None if sol["x"] is None else np.array(sol["x"]).reshape(-1)
    return ("optimal" if raw == "optimal" else "unknown"), x, diag


def _solve_cvxpy(c, lowered, levels, brows, brhs, solver_tol, options):
    import cvxpy as cp

    n = len(c)
    x = cp.Variable(n)
    cons = []
    for ((F0, F), _), lev in zip(lowered, levels):
        d = F0.shape[0]
        Fm = F.reshape(n, d * d).T
        M = cp.reshape(Fm @ x, (d, d), order="C") + F0
        cons.append(0.5 * (M + M.T) >> lev * np.eye(d))
    for g, h in zip(brows, brhs):
        cons.append(g @ x <= h)
    prob = cp.Problem(cp.Minimize(c @ x), cons)
    opts = dict(options)
    solver = opts.pop("solver", "CLARABEL")
    try:
        prob.solve(solver=solver, **opts)
    except cp.error.SolverError as exc:
        return "error", None, {"status": "exception", "message": str(exc)}
    diag = {"status": prob.status, "solver": solver}
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        return "infeasible", None, diag
    if prob.status in ("unbounded", "unbounded_inaccurate"):
        return "unbounded", None, diag
    val = None if x.value is None else np.asarray(x.value).reshape(-1)
    return ("optimal" if prob.status == "optimal" else "unknown"), val, diag
