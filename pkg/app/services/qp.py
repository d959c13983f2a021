"""
Dense strictly convex QP:  min 1/2 x^T Q x + c^T x  s.t.  C x <= d.

The active-set solve is delegated to quadprog (Goldfarb-Idnani dual method).
Around it this module adds the pieces the cascade relies on: a positive
definiteness check before solving, a working-set warm start from the
previous control step, a polishing KKT solve on the final working set, and
KKT residuals recomputed from the returned (x, lambda).
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import quadprog
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from app.utils.logger import get_structured_logger

logger = get_structured_logger(__name__)

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 4000
SYMMETRY_TOLERANCE = 1e-10
# slack below which a constraint counts as active at the warm-start point
WARM_ACTIVE_TOLERANCE = 1e-7


class QPError(Exception):
    """Base exception for QP failures"""
    pass


class QPNotConvexError(QPError):
    """Hessian is not symmetric positive definite"""
    pass


class QPInfeasibleError(QPError):
    """No point satisfies the inequality constraints"""
    pass


class QPStatus(str, Enum):
    SOLVED = "solved"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True, eq=False)
class QPProblem:
    """Hessian ``Q`` (n x n), linear term ``c``, inequalities ``C x <= d`` (k rows, k may be 0)"""
    Q: np.ndarray
    c: np.ndarray
    C: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    d: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        q_mat = np.atleast_2d(np.asarray(self.Q, dtype=float))
        c_vec = np.asarray(self.c, dtype=float).reshape(-1)
        n = c_vec.shape[0]
        if q_mat.shape != (n, n):
            raise ValueError(f"Q has shape {q_mat.shape}, expected ({n}, {n})")
        d_vec = np.asarray(self.d, dtype=float).reshape(-1)
        c_mat = np.asarray(self.C, dtype=float).reshape(d_vec.shape[0], n)
        for name, arr in (("Q", q_mat), ("c", c_vec), ("C", c_mat), ("d", d_vec)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(q_mat))) if q_mat.size else 1.0)
        if q_mat.size and float(np.max(np.abs(q_mat - q_mat.T))) > SYMMETRY_TOLERANCE * scale:
            raise QPNotConvexError("Q is not symmetric")
        object.__setattr__(self, "Q", q_mat)
        object.__setattr__(self, "c", c_vec)
        object.__setattr__(self, "C", c_mat)
        object.__setattr__(self, "d", d_vec)

    @property
    def n(self) -> int:
        return int(self.c.shape[0])

    @property
    def k(self) -> int:
        return int(self.d.shape[0])

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x)


@dataclass(frozen=True)
class KKTResiduals:
    stationarity: float
    primal: float
    complementarity: float

    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity)


@dataclass(frozen=True, eq=False)
class QPSolution:
    x: np.ndarray
    multipliers: np.ndarray
    residuals: KKTResiduals
    iterations: int
    status: QPStatus
    active_set: tuple[int, ...]
    objective: float

    @property
    def converged(self) -> bool:
        return self.status == QPStatus.SOLVED


def kkt_residuals(problem: QPProblem, x: np.ndarray, multipliers: np.ndarray) -> KKTResiduals:
    """Residuals of the KKT conditions evaluated at (x, lambda)"""
    grad = problem.Q @ x + problem.c
    if problem.k == 0:
        return KKTResiduals(float(np.max(np.abs(grad), initial=0.0)), 0.0, 0.0)
    slack = problem.C @ x - problem.d
    grad = grad + problem.C.T @ multipliers
    return KKTResiduals(
        stationarity=float(np.max(np.abs(grad), initial=0.0)),
        primal=max(0.0, float(np.max(slack))),
        complementarity=abs(float(multipliers @ slack)),
    )


def _factor(problem: QPProblem) -> tuple[np.ndarray, bool]:
    try:
        return cho_factor(problem.Q, lower=True, check_finite=False)  # type: ignore[no-any-return]
    except LinAlgError as e:
        raise QPNotConvexError(f"Q is not positive definite: {e}") from e


def _solve_working_set(
    problem: QPProblem,
    factor: tuple[np.ndarray, bool],
    working: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Minimizer with the ``working`` rows held as equalities"""
    x_free = -cho_solve(factor, problem.c, check_finite=False)
    lam = np.zeros(problem.k)
    if working.size == 0:
        return x_free, lam
    c_w = problem.C[working]
    qinv_ct = cho_solve(factor, c_w.T, check_finite=False)
    m = c_w @ qinv_ct
    rhs = c_w @ x_free - problem.d[working]
    lam_w = np.linalg.lstsq(m, rhs, rcond=None)[0]
    lam[working] = lam_w
    return x_free - qinv_ct @ lam_w, lam


def _accept(residuals: KKTResiduals, multipliers: np.ndarray, tol: float) -> bool:
    return residuals.worst() <= tol and float(np.min(multipliers, initial=0.0)) >= -tol


def _solution(
    problem: QPProblem,
    x: np.ndarray,
    lam: np.ndarray,
    iterations: int,
    status: QPStatus,
) -> QPSolution:
    lam = np.maximum(lam, 0.0)
    return QPSolution(
        x=x,
        multipliers=lam,
        residuals=kkt_residuals(problem, x, lam),
        iterations=iterations,
        status=status,
        active_set=tuple(int(i) for i in np.flatnonzero(lam > 0.0)),
        objective=problem.objective(x),
    )


def solve_qp(
    problem: QPProblem,
    tol: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITERATIONS,
    warm_start: Optional[np.ndarray] = None,
    warm_primal_tol: Optional[float] = None,
) -> QPSolution:
    """
    Solve a strictly convex QP.

    Args:
        problem: The QP; Q must be symmetric positive definite
        tol: KKT tolerance for stationarity, primal feasibility and complementarity
        max_iter: Active-set iteration cap; exceeding it flags the solution
        warm_start: Previous solution; constraints active there seed the working set
        warm_primal_tol: Largest constraint violation accepted from the warm working
            set (defaults to ``tol``); otherwise the cold solve runs

    Raises:
        QPNotConvexError: Q is not positive definite
        QPInfeasibleError: The inequalities admit no solution
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    factor = _factor(problem)

    if problem.k == 0:
        x, lam = _solve_working_set(problem, factor, np.zeros(0, dtype=int))
        return _solution(problem, x, lam, 0, QPStatus.SOLVED)

    if warm_start is not None:
        x0 = np.asarray(warm_start, dtype=float).reshape(-1)
        if x0.shape[0] == problem.n and np.all(np.isfinite(x0)):
            scale = 1.0 + np.abs(problem.d)
            working = np.flatnonzero(problem.C @ x0 - problem.d >= -WARM_ACTIVE_TOLERANCE * scale)
            x, lam = _solve_working_set(problem, factor, working)
            residuals = kkt_residuals(problem, x, lam)
            primal_tol = tol if warm_primal_tol is None else min(tol, warm_primal_tol)
            if _accept(residuals, lam, tol) and residuals.primal <= primal_tol:
                logger.debug("QP solved from warm working set", extra={
                    "n": problem.n,
                    "k": problem.k,
                    "working_set": int(working.size),
                })
                return _solution(problem, x, lam, 1, QPStatus.SOLVED)

    try:
        x, _, _, iters, lam, iact = quadprog.solve_qp(
            np.array(problem.Q, dtype=float, order="C"),
            np.array(-problem.c, dtype=float),
            np.array(-problem.C.T, dtype=float, order="C"),
            np.array(-problem.d, dtype=float),
            0,
        )
    except ValueError as e:
        message = str(e)
        if "positive definite" in message:
            raise QPNotConvexError(message) from e
        raise QPInfeasibleError(message) from e

    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    iterations = int(iters[0])

    # polish on the final working set
    working = np.asarray([i - 1 for i in iact if i > 0], dtype=int)
    x_pol, lam_pol = _solve_working_set(problem, factor, working)
    raw = kkt_residuals(problem, x, np.maximum(lam, 0.0))
    polished = kkt_residuals(problem, x_pol, np.maximum(lam_pol, 0.0))
    if float(np.min(lam_pol, initial=0.0)) >= -tol and polished.worst() < raw.worst():
        x, lam = x_pol, lam_pol

    status = QPStatus.SOLVED
    if iterations > max_iter:
        status = QPStatus.MAX_ITERATIONS
        logger.warning("QP iteration cap exceeded", extra={
            "iterations": iterations,
            "max_iter": max_iter,
            "n": problem.n,
            "k": problem.k,
        })

    return _solution(problem, x, lam, iterations, status)
