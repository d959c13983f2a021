"""
Hierarchical QP cascade.

Levels are solved in priority order. Level p optimizes x = [qdot_p; w_p]
where the joint velocity actually applied is N_{p-1} qdot_p + qdot*_{p-1},
so nothing a lower level does can disturb the task rows of the levels above.
Each level's inequality slacks w_p are decision variables only at that level
and stay frozen as bounds for every level below it.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from app.models.gains import GainConfig
from app.services.kinematics import DimensionMismatchError
from app.services.qp import (
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
    KKTResiduals,
    QPError,
    QPProblem,
    QPStatus,
    solve_qp,
)
from app.services.tasks import ConstraintSpec, TaskSpec
from app.utils.logger import get_structured_logger

logger = get_structured_logger(__name__)

DEFAULT_NULL_SPACE_TOLERANCE = 1e-8
# absolute singular value floor for the projector
SINGULAR_VALUE_FLOOR = 1e-12


class HQPError(Exception):
    """Base exception for cascade failures"""
    pass


class HQPLevelError(HQPError):
    """A level's QP failed; ``level`` is the priority index"""

    def __init__(self, level: int, message: str):
        super().__init__(f"level {level}: {message}")
        self.level = level


@dataclass
class PriorityLevel:
    """Tasks and inequality blocks sharing one priority"""
    index: int
    tasks: list[TaskSpec] = field(default_factory=list)
    constraints: list[ConstraintSpec] = field(default_factory=list)
    name: str = ""

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"priority index must be >= 1, got {self.index}")
        if not self.tasks and not self.constraints:
            raise ValueError(f"level {self.index} has neither tasks nor constraints")
        if not self.name:
            self.name = f"level{self.index}"

    def columns(self) -> set[int]:
        cols = {t.cols for t in self.tasks}
        cols |= {int(c.matrix.shape[1]) for c in self.constraints}
        return cols

    @property
    def constraint_rows(self) -> int:
        return sum(c.rows for c in self.constraints)


@dataclass
class TaskStack:
    """Ordered levels, index 1 first"""
    levels: list[PriorityLevel]
    n: int

    def __post_init__(self) -> None:
        previous = 0
        for level in self.levels:
            if level.index <= previous:
                raise ValueError(
                    f"level indices must strictly increase, got {level.index} after {previous}"
                )
            previous = level.index
            bad = level.columns() - {self.n}
            if bad:
                raise DimensionMismatchError(
                    f"level {level.index} has {sorted(bad)} columns, stack expects {self.n}"
                )


@dataclass
class FrozenBlock:
    """Inequalities of a processed level and their optimal slack"""
    level: int
    matrix: np.ndarray
    bound: np.ndarray
    slack: np.ndarray


@dataclass
class LevelDiagnostics:
    index: int
    name: str
    objective: float
    task_residual: float
    residuals: KKTResiduals
    iterations: int
    status: QPStatus
    active_constraints: int
    slack_norm: float
    rank: int


@dataclass
class CascadeState:
    """Running projector, accumulated solution and frozen slacks"""
    projector: np.ndarray
    qdot: np.ndarray
    frozen: list[FrozenBlock] = field(default_factory=list)
    diagnostics: list[LevelDiagnostics] = field(default_factory=list)

    @classmethod
    def initial(cls, n: int) -> "CascadeState":
        """N_0 = I and qdot*_0 = 0"""
        return cls(np.eye(n), np.zeros(n))

    @property
    def n(self) -> int:
        return int(self.qdot.shape[0])


@dataclass
class HQPResult:
    qdot: np.ndarray
    levels: list[LevelDiagnostics]
    projector: np.ndarray
    warm_start: dict[int, np.ndarray]

    @property
    def converged(self) -> bool:
        return all(d.status == QPStatus.SOLVED for d in self.levels)


def null_space_projector(
    jacobian: np.ndarray,
    previous: Optional[np.ndarray] = None,
    tol: float = DEFAULT_NULL_SPACE_TOLERANCE,
) -> np.ndarray:
    """
    N_p = N_{p-1} (I - pinv(J_hat) J_hat) with J_hat = J N_{p-1}.

    The pseudo-inverse comes from an SVD; singular values below
    max(tol * sigma_max, 1e-12) count as zero.
    """
    jac = np.atleast_2d(np.asarray(jacobian, dtype=float))
    n = jac.shape[1]
    prev = np.eye(n) if previous is None else np.asarray(previous, dtype=float)
    if prev.shape != (n, n):
        raise DimensionMismatchError(
            f"projector has shape {prev.shape}, Jacobian has {n} columns"
        )
    if jac.shape[0] == 0:
        return prev.copy()

    j_hat = jac @ prev
    _, sigma, vt = np.linalg.svd(j_hat, full_matrices=False)
    if sigma.size == 0:
        return prev.copy()
    cutoff = max(tol * float(sigma[0]), SINGULAR_VALUE_FLOOR)
    rank = int(np.sum(sigma > cutoff))
    if rank == 0:
        return prev.copy()
    basis = vt[:rank]
    proj = prev - (prev @ basis.T) @ basis
    return 0.5 * (proj + proj.T)


def _stack_constraints(constraints: list[ConstraintSpec], n: int) -> tuple[np.ndarray, np.ndarray]:
    if not constraints:
        return np.zeros((0, n)), np.zeros(0)
    return (
        np.vstack([c.matrix for c in constraints]),
        np.concatenate([c.bound for c in constraints]),
    )


def assemble_level(
    level: PriorityLevel,
    state: CascadeState,
    gains: GainConfig,
    relax: float = 0.5 * DEFAULT_TOLERANCE,
) -> QPProblem:
    """
    Build the QP of one level over x = [qdot; w].

    Objective rows (stacked into A_bar, b_bar):
        sqrt(K_t) A_i N        ->  sqrt(K_t) (b_i - A_i qdot*)
        sqrt(K_d) I            ->  0
        sqrt(K_w) I   (on w)   ->  0
    with b_i = K_r r_i (+ feedforward); Q = A_bar^T A_bar, c = -A_bar^T b_bar.

    Inequalities: this level's C (N qdot + qdot*) - d <= w, and every
    processed level's block bounded by its frozen slack (plus ``relax``).
    """
    n = state.n
    bad = level.columns() - {n}
    if bad:
        raise DimensionMismatchError(
            f"level {level.index} has {sorted(bad)} columns, cascade has {n}"
        )
    proj = state.projector
    qdot_prev = state.qdot
    own_c, own_d = _stack_constraints(level.constraints, n)
    k = own_c.shape[0]
    dim = n + k

    hessian = np.zeros((dim, dim))
    linear = np.zeros(dim)
    for task in level.tasks:
        if task.k_t <= 0.0:
            continue
        a_proj = task.jacobian @ proj
        target = task.target() - task.jacobian @ qdot_prev
        hessian[:n, :n] += task.k_t * (a_proj.T @ a_proj)
        linear[:n] -= task.k_t * (a_proj.T @ target)
    hessian[:n, :n] += gains.k_d * np.eye(n)
    if k:
        hessian[n:, n:] = gains.k_w * np.eye(k)
    hessian = 0.5 * (hessian + hessian.T)

    rows: list[np.ndarray] = []
    bounds: list[np.ndarray] = []
    if k:
        rows.append(np.hstack([own_c @ proj, -np.eye(k)]))
        bounds.append(own_d - own_c @ qdot_prev)
    for block in state.frozen:
        rows.append(np.hstack([block.matrix @ proj, np.zeros((block.matrix.shape[0], k))]))
        bounds.append(block.bound + block.slack + relax - block.matrix @ qdot_prev)

    if rows:
        return QPProblem(hessian, linear, np.vstack(rows), np.concatenate(bounds))
    return QPProblem(hessian, linear)


def _warm_vector(previous: Optional[np.ndarray], n: int, dim: int) -> Optional[np.ndarray]:
    if previous is None:
        return None
    if previous.shape[0] == dim:
        return previous
    out = np.zeros(dim)
    out[:n] = previous[:n]
    return out


def _task_residual(tasks: list[TaskSpec], qdot: np.ndarray) -> float:
    total = 0.0
    for task in tasks:
        if task.k_t > 0.0:
            err = task.jacobian @ qdot - task.target()
            total += task.k_t * float(err @ err)
    return total


def solve_hqp(
    stack: TaskStack,
    gains: GainConfig,
    warm_start: Optional[dict[int, np.ndarray]] = None,
    *,
    tol: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITERATIONS,
    null_space_tol: float = DEFAULT_NULL_SPACE_TOLERANCE,
) -> HQPResult:
    """
    Run the cascade and return the recomposed joint velocity.

    After each level: qdot*_p = N_{p-1} x_p + qdot*_{p-1}, its slacks are
    frozen, and N is shrunk by the rows of the level's weighted tasks.
    Inequality rows never consume null space.

    Raises:
        HQPLevelError: a level's QP failed, or hit the iteration cap with KKT
            residuals above ``tol`` (index in ``.level``)
    """
    n = stack.n
    state = CascadeState.initial(n)
    warm = warm_start or {}
    next_warm: dict[int, np.ndarray] = {}

    relax = 0.5 * tol
    for level in stack.levels:
        problem = assemble_level(level, state, gains, relax=relax)
        try:
            solution = solve_qp(
                problem,
                tol=tol,
                max_iter=max_iter,
                warm_start=_warm_vector(warm.get(level.index), n, problem.n),
                warm_primal_tol=relax,
            )
        except QPError as e:
            logger.error("HQP level failed", extra={
                "level": level.index,
                "level_name": level.name,
                "error": str(e),
            })
            raise HQPLevelError(level.index, str(e)) from e

        if solution.status == QPStatus.MAX_ITERATIONS and solution.residuals.worst() > tol:
            message = (
                f"not converged after {solution.iterations} iterations, "
                f"KKT residual {solution.residuals.worst():.3g}"
            )
            logger.error("HQP level failed", extra={
                "level": level.index,
                "level_name": level.name,
                "error": message,
            })
            raise HQPLevelError(level.index, message)

        x_q = solution.x[:n]
        slack = solution.x[n:]
        state.qdot = state.projector @ x_q + state.qdot
        next_warm[level.index] = solution.x

        if level.constraints:
            own_c, own_d = _stack_constraints(level.constraints, n)
            state.frozen.append(FrozenBlock(level.index, own_c, own_d, slack))
        # freeze what was achieved so qdot* stays feasible for every level below
        for block in state.frozen:
            achieved = block.matrix @ state.qdot - block.bound
            block.slack = np.maximum(block.slack, achieved)

        weighted = [t.jacobian for t in level.tasks if t.k_t > 0.0]
        previous_trace = float(np.trace(state.projector))
        if weighted:
            state.projector = null_space_projector(
                np.vstack(weighted), state.projector, null_space_tol
            )
        rank = int(round(previous_trace - float(np.trace(state.projector))))

        diagnostics = LevelDiagnostics(
            index=level.index,
            name=level.name,
            objective=solution.objective,
            task_residual=_task_residual(level.tasks, state.qdot),
            residuals=solution.residuals,
            iterations=solution.iterations,
            status=solution.status,
            active_constraints=len(solution.active_set),
            slack_norm=float(np.linalg.norm(slack)) if slack.size else 0.0,
            rank=rank,
        )
        state.diagnostics.append(diagnostics)
        logger.debug("HQP level solved", extra={
            "level": level.index,
            "level_name": level.name,
            "iterations": solution.iterations,
            "kkt": solution.residuals.worst(),
            "rank": rank,
        })

    return HQPResult(
        qdot=state.qdot,
        levels=state.diagnostics,
        projector=state.projector,
        warm_start=next_warm,
    )
