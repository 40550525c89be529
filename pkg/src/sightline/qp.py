"""Exact solver for the small strictly convex QPs the controller emits.

    min_z  sum_i q_i z_i^2 + l^T z   s.t.  a_k^T z >= b_k,  lo <= z <= hi

The scale is tiny (3 variables, tens of rows), so the solver certifies the
global optimum by enumerating candidate active sets in deterministic order
(size then lexicographic) and returning the first KKT-certified point. By
Caratheodory, if the problem is feasible some linearly independent active
set of size <= dim satisfies KKT, so exhausting the enumeration proves
infeasibility.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

KKT_TOL = 1e-9
FEAS_TOL = 1e-9


@dataclass
class QpProblem:
    """Diagonal-quadratic QP with >= rows and box bounds.

    quad_diag must be strictly positive (strict convexity); box entries may
    be +/-inf for free variables.
    """

    quad_diag: np.ndarray
    linear: np.ndarray
    rows: list[tuple[np.ndarray, float]] = field(default_factory=list)
    box: np.ndarray = None  # (dim, 2) lo/hi

    def __post_init__(self):
        self.quad_diag = np.asarray(self.quad_diag, dtype=float)
        self.linear = np.asarray(self.linear, dtype=float)
        if np.any(self.quad_diag <= 0):
            raise ValueError("quad_diag must be strictly positive (convexity)")
        if self.linear.shape != self.quad_diag.shape:
            raise ValueError("linear term dimension mismatch")
        d = self.dim
        if self.box is None:
            self.box = np.column_stack([np.full(d, -np.inf), np.full(d, np.inf)])
        self.box = np.asarray(self.box, dtype=float).reshape(d, 2)
        if np.any(self.box[:, 0] > self.box[:, 1]):
            raise ValueError("box lower bound exceeds upper bound")
        self.rows = [(np.asarray(a, dtype=float).reshape(d), float(b)) for a, b in self.rows]
        if len(self.rows) > 64:
            raise ValueError("row count exceeds the supported 64")

    @property
    def dim(self) -> int:
        return len(self.quad_diag)

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(np.dot(self.quad_diag * z, z) + np.dot(self.linear, z))


@dataclass
class QpSolution:
    z: np.ndarray
    active_set: list[int]       # indices of tight user rows
    kkt_residual: float
    status: str                 # "optimal" | "infeasible"

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _all_rows(p: QpProblem):
    """User rows followed by finite box bounds rewritten as a^T z >= b."""
    rows = [(a, b) for a, b in p.rows]
    n_user = len(rows)
    for i in range(p.dim):
        lo, hi = p.box[i]
        if math.isfinite(lo):
            a = np.zeros(p.dim)
            a[i] = 1.0
            rows.append((a, lo))
        if math.isfinite(hi):
            a = np.zeros(p.dim)
            a[i] = -1.0
            rows.append((a, -hi))
    return rows, n_user


def solve(p: QpProblem) -> QpSolution:
    """Certified global optimum, or infeasibility, by active-set enumeration.

    Candidate sets are tried smallest first and lexicographically within a
    size, so ties between optimal active sets resolve to the smallest index
    list and identical inputs give bit-identical outputs.
    """
    rows, n_user = _all_rows(p)
    H = 2.0 * p.quad_diag            # gradient of objective = H*z + linear
    A = np.array([a for a, _ in rows]).reshape(len(rows), p.dim)
    b = np.array([bb for _, bb in rows])
    dim = p.dim
    n = len(rows)

    def certify(z, mu, active_idx):
        # stationarity: H z + l - sum mu_k a_k = 0
        grad = H * z + p.linear
        if len(active_idx):
            grad = grad - A[list(active_idx)].T @ mu
        station = float(np.max(np.abs(grad))) if dim else 0.0
        primal = float(np.max(b - A @ z)) if n else 0.0   # violation when > 0
        dual = float(max(0.0, -(mu.min() if len(mu) else 0.0)))
        comp = 0.0
        if len(active_idx):
            comp = float(np.max(np.abs(mu * (A[list(active_idx)] @ z - b[list(active_idx)]))))
        return max(station, max(primal, 0.0), dual, comp)

    # unconstrained optimum first (the empty active set)
    z = -p.linear / H
    if n == 0 or np.all(A @ z >= b - FEAS_TOL):
        res = certify(z, np.empty(0), ())
        return QpSolution(z, _tight_rows(A, b, z, n_user), res, "optimal")

    for size in range(1, dim + 1):
        for combo in itertools.combinations(range(n), size):
            As = A[list(combo)]
            if np.linalg.matrix_rank(As) < size:
                continue
            kkt = np.zeros((dim + size, dim + size))
            kkt[:dim, :dim] = np.diag(H)
            kkt[:dim, dim:] = -As.T
            kkt[dim:, :dim] = As
            rhs = np.concatenate([-p.linear, b[list(combo)]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z = sol[:dim]
            mu = sol[dim:]
            if np.any(mu < -KKT_TOL):
                continue
            if not np.all(A @ z >= b - FEAS_TOL):
                continue
            res = certify(z, np.maximum(mu, 0.0), combo)
            return QpSolution(z, _tight_rows(A, b, z, n_user), res, "optimal")

    return QpSolution(np.full(dim, np.nan), [], math.inf, "infeasible")


def _tight_rows(A, b, z, n_user, tol=1e-7) -> list[int]:
    if len(b) == 0:
        return []
    slack = A @ z - b
    return [int(i) for i in np.nonzero(slack[:n_user] <= tol)[0]]
