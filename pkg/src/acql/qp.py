"""Small dense convex QP solver with a KKT certificate."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from acql import _kernels

log = logging.getLogger(__name__)


class QpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITER_LIMIT = "IterLimit"


_STATUS = {
    _kernels.STATUS_OPTIMAL: QpStatus.OPTIMAL,
    _kernels.STATUS_INFEASIBLE: QpStatus.INFEASIBLE,
    _kernels.STATUS_ITER_LIMIT: QpStatus.ITER_LIMIT,
}


def _as_matrix(a, cols):
    if a is None:
        return np.zeros((0, cols))
    return np.ascontiguousarray(np.asarray(a, dtype=float).reshape(-1, cols))


def _as_vector(b):
    if b is None:
        return np.zeros(0)
    return np.ascontiguousarray(np.asarray(b, dtype=float).reshape(-1))


@dataclass
class QpProblem:
    """min 1/2 x'Hx + f'x  s.t.  A_in x <= b_in,  A_eq x = b_eq."""

    H: np.ndarray
    f: np.ndarray
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.ascontiguousarray(np.asarray(self.H, dtype=float))
        n = self.H.shape[0]
        self.f = _as_vector(self.f)
        self.A_in = _as_matrix(self.A_in, n)
        self.b_in = _as_vector(self.b_in)
        self.A_eq = _as_matrix(self.A_eq, n)
        self.b_eq = _as_vector(self.b_eq)
        if self.H.shape != (n, n) or self.f.shape != (n,):
            raise ValueError("H must be n x n and f length n")
        if len(self.b_in) != self.A_in.shape[0] or len(self.b_eq) != self.A_eq.shape[0]:
            raise ValueError("constraint row counts do not match right-hand sides")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.A_in.shape[0]

    @property
    def p(self) -> int:
        return self.A_eq.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.f @ x)

    def dump(self) -> str:
        """Plain-text matrix blocks, one ``[name rows x cols]`` header per block."""
        blocks = []
        for name in ("H", "f", "A_in", "b_in", "A_eq", "b_eq"):
            arr = np.atleast_2d(getattr(self, name))
            if name in ("f", "b_in", "b_eq"):
                arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 1)
            rows = [" ".join(f"{v:.17g}" for v in row) for row in arr]
            blocks.append(f"[{name} {arr.shape[0]} x {arr.shape[1]}]\n" + "\n".join(rows))
        return "\n".join(blocks) + "\n"


@dataclass
class QpSolution:
    x: np.ndarray
    active_set: list[int]
    multipliers: np.ndarray
    eq_multipliers: np.ndarray
    kkt_residual: float
    status: QpStatus
    iterations: int = 0
    farkas: np.ndarray | None = None
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))


def kkt_residual(p: QpProblem, s: QpSolution) -> float:
    """Max of stationarity, primal infeasibility, dual infeasibility and complementarity."""
    x = np.asarray(s.x, dtype=float)
    lam = np.asarray(s.multipliers, dtype=float)
    nu = np.asarray(s.eq_multipliers, dtype=float)
    grad = p.H @ x + p.f + p.A_in.T @ lam + p.A_eq.T @ nu
    parts = [np.max(np.abs(grad), initial=0.0)]
    if p.m:
        slack = p.A_in @ x - p.b_in
        parts.append(np.max(np.maximum(slack, 0.0), initial=0.0))
        parts.append(np.max(np.maximum(-lam, 0.0), initial=0.0))
        parts.append(np.max(np.abs(lam * slack), initial=0.0))
    if p.p:
        parts.append(np.max(np.abs(p.A_eq @ x - p.b_eq), initial=0.0))
    return float(max(parts))


class QpSolver:
    """Holds the ridge setting; one instance per thread."""

    def __init__(self, ridge: float = 1e-10):
        self.ridge = ridge

    def solve(self, p: QpProblem) -> QpSolution:
        H = p.H
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            log.warning("QP Hessian is not positive definite; adding %.1e ridge", self.ridge)
            H = H + self.ridge * np.eye(p.n)
        max_iter = 10 * (p.n + p.m) + 1
        x, lam, nu, code, iters, far_in, far_eq, trace, working = _kernels.qp_dual_active_set(
            np.ascontiguousarray(H), p.f, p.A_in, p.b_in, p.A_eq, p.b_eq, max_iter
        )
        status = _STATUS[int(code)]
        active = [int(i) for i in np.flatnonzero(working)]
        sol = QpSolution(
            x=np.asarray(x),
            active_set=active,
            multipliers=np.asarray(lam),
            eq_multipliers=np.asarray(nu),
            kkt_residual=np.inf,
            status=status,
            iterations=int(iters),
            farkas=np.concatenate([far_in, far_eq]) if status is QpStatus.INFEASIBLE else None,
            objective_trace=trace[np.isfinite(trace)],
        )
        sol.kkt_residual = kkt_residual(p, sol)
        return sol


def solve(p: QpProblem) -> QpSolution:
    return QpSolver().solve(p)
