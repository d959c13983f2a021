"""
Per-step controller: assemble the priority stack for one chain and solve it.

Default layout, highest priority first:
    1  joint position / velocity limits (inequalities only)
    2  remote center of motion
    3  pose tracking blended with collision repulsion
    4  manipulability
The layout comes from ``StackLayout.order``.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from app.config import settings
from app.models.gains import GainConfig
from app.models.scenario import StackLayout
from app.services.geometry import (
    Segment,
    closest_point_on_segment,
    segment_segment_closest,
)
from app.services.hqp import HQPResult, PriorityLevel, TaskStack, solve_hqp
from app.services.kinematics import ChainState, KinematicChain, Pose
from app.services.qp import QPStatus
from app.services.tasks import (
    TaskSpec,
    UndefinedRepulsionError,
    blend_weights,
    collision_task,
    joint_limit_constraint,
    link_segment,
    manipulability_index,
    manipulability_task,
    rcm_error,
    rcm_task,
    rcm_vector_task,
    tracking_task,
    transition_gain,
)
from app.utils.logger import get_structured_logger

logger = get_structured_logger(__name__)


@dataclass(frozen=True, eq=False)
class WorldObstacle:
    """
    Obstacle resolved in world coordinates at one instant: a sphere
    (``segment`` is None) or one capsule of another tool.
    """
    label: str
    radius: float
    center: Optional[np.ndarray] = None
    segment: Optional[Segment] = None
    owner: Optional[int] = None


@dataclass(frozen=True, eq=False)
class Reference:
    """Desired end-effector pose and its velocity (point velocity, angular velocity)"""
    pose: Pose
    feedforward: np.ndarray = field(default_factory=lambda: np.zeros(6))


@dataclass(frozen=True)
class CollisionPair:
    link: int
    obstacle: str
    clearance: float
    weight: float


@dataclass(eq=False)
class ControllerStep:
    qdot: np.ndarray
    beta_a: float
    min_clearance: float
    ee_error: float
    rcm_error: float
    manipulability: float
    pairs: list[CollisionPair]
    result: HQPResult
    solve_ms: float


def pair_clearance(state: ChainState, link: int, obstacle: WorldObstacle) -> tuple[float, np.ndarray]:
    """Signed clearance between capsule ``link`` and ``obstacle``, and the obstacle-side point"""
    seg = link_segment(state, link)
    radius = state.chain.capsules[link].radius
    if obstacle.segment is None:
        center = np.asarray(obstacle.center, dtype=float)
        foot = closest_point_on_segment(seg, center)
        return foot.distance - radius - obstacle.radius, center
    pair = segment_segment_closest(seg, obstacle.segment)
    return pair.distance - radius - obstacle.radius, pair.point2


def min_clearance(state: ChainState, obstacles: list[WorldObstacle]) -> float:
    """Smallest clearance over all capsules and obstacles, inf when there are none"""
    best = math.inf
    for link in range(len(state.chain.capsules)):
        for obstacle in obstacles:
            best = min(best, pair_clearance(state, link, obstacle)[0])
    return best


class HQPController:
    """
    Stack builder and cascade runner for one chain.

    Keeps each level's solution between calls to warm-start the next step.
    """

    def __init__(
        self,
        chain: KinematicChain,
        gains: GainConfig,
        layout: Optional[StackLayout] = None,
        trocar: Optional[np.ndarray] = None,
        *,
        tol: Optional[float] = None,
        max_iter: Optional[int] = None,
        null_space_tol: Optional[float] = None,
    ):
        self.chain = chain
        self.gains = gains
        self.layout = layout or StackLayout()
        self.trocar = None if trocar is None else np.asarray(trocar, dtype=float).reshape(3)
        self.tol = tol if tol is not None else settings.qp_tolerance
        self.max_iter = max_iter if max_iter is not None else settings.qp_max_iterations
        self.null_space_tol = (
            null_space_tol if null_space_tol is not None else settings.null_space_tolerance
        )
        self.warm_start: dict[int, np.ndarray] = {}
        self.logger = logger.with_context(chain=chain.name)

    @property
    def manipulability_rows(self) -> Optional[list[int]]:
        return self.layout.manipulability_rows

    def collision_tasks(
        self,
        state: ChainState,
        obstacles: list[WorldObstacle],
    ) -> tuple[list[TaskSpec], list[CollisionPair], float]:
        """
        Repulsion tasks for every pair closer than d_eps, each weighted by
        its own transition gain; returns them with the minimum clearance.
        """
        tasks: list[TaskSpec] = []
        pairs: list[CollisionPair] = []
        closest = math.inf
        for link in range(len(self.chain.capsules)):
            for obstacle in obstacles:
                clearance, p_c = pair_clearance(state, link, obstacle)
                closest = min(closest, clearance)
                if clearance >= self.gains.d_epsilon:
                    continue
                weight = transition_gain(clearance, self.gains)
                try:
                    task = collision_task(
                        self.chain,
                        state.q,
                        p_c,
                        link,
                        self.gains,
                        k_t=weight,
                        obstacle_radius=obstacle.radius,
                        state=state,
                    )
                except UndefinedRepulsionError as e:
                    self.logger.warning("Skipped collision pair without repulsion direction", extra={
                        "link": link,
                        "obstacle": obstacle.label,
                        "error": str(e),
                    })
                    continue
                tasks.append(task)
                pairs.append(CollisionPair(link, obstacle.label, clearance, weight))
        return tasks, pairs, closest

    def build_stack(
        self,
        state: ChainState,
        reference: Reference,
        obstacles: list[WorldObstacle],
    ) -> tuple[TaskStack, float, float, list[CollisionPair]]:
        """Return the stack with beta_a, minimum clearance and active pairs"""
        q = state.q
        collisions, pairs, closest = self.collision_tasks(state, obstacles)
        beta_a = transition_gain(closest, self.gains) if math.isfinite(closest) else 0.0
        k_t_ee, _ = blend_weights(beta_a)

        levels: list[PriorityLevel] = []
        for name in self.layout.order:
            index = len(levels) + 1
            if name == "limits":
                levels.append(PriorityLevel(
                    index,
                    constraints=[joint_limit_constraint(self.chain, q, self.gains)],
                    name=name,
                ))
            elif name == "rcm":
                if self.trocar is None:
                    continue
                builder = rcm_vector_task if self.layout.rcm_mode == "vector" else rcm_task
                levels.append(PriorityLevel(
                    index,
                    tasks=[builder(self.chain, q, self.trocar, self.gains, state=state)],
                    name=name,
                ))
            elif name == "tracking":
                track = tracking_task(
                    self.chain,
                    q,
                    reference.pose,
                    self.gains,
                    feedforward=reference.feedforward,
                    k_t=k_t_ee,
                    state=state,
                )
                levels.append(PriorityLevel(index, tasks=[track, *collisions], name=name))
            elif name == "manipulability" and self.layout.enable_manipulability:
                levels.append(PriorityLevel(
                    index,
                    tasks=[manipulability_task(
                        self.chain, q, self.gains, rows=self.manipulability_rows, state=state
                    )],
                    name=name,
                ))
        return TaskStack(levels, self.chain.dof), beta_a, closest, pairs

    def step(
        self,
        state: ChainState,
        reference: Reference,
        obstacles: Optional[list[WorldObstacle]] = None,
    ) -> ControllerStep:
        """
        One control step at ``state``. Metrics describe the state the
        command was computed from.

        Raises:
            JointLimitViolationError: q is outside the limits beyond the band
            HQPLevelError: a level's QP failed
        """
        started = time.perf_counter()
        stack, beta_a, closest, pairs = self.build_stack(state, reference, obstacles or [])
        result = solve_hqp(
            stack,
            self.gains,
            self.warm_start,
            tol=self.tol,
            max_iter=self.max_iter,
            null_space_tol=self.null_space_tol,
        )
        solve_ms = (time.perf_counter() - started) * 1000.0
        self.warm_start = result.warm_start

        ee = state.pose(self.chain.end_effector)
        ee_error = float(np.linalg.norm(reference.pose.translation - ee.translation))
        rcm = 0.0
        if self.trocar is not None:
            rcm = rcm_error(self.chain, state.q, self.trocar, state=state)
        mu = manipulability_index(
            self.chain, state.q, rows=self.manipulability_rows, state=state
        )

        if not result.converged:
            self.logger.warning("Cascade finished with a flagged level", extra={
                "levels": [d.index for d in result.levels if d.status != QPStatus.SOLVED],
            })
        return ControllerStep(
            qdot=result.qdot,
            beta_a=beta_a,
            min_clearance=closest,
            ee_error=ee_error,
            rcm_error=rcm,
            manipulability=mu,
            pairs=pairs,
            result=result,
            solve_ms=solve_ms,
        )

    def reset(self) -> None:
        self.warm_start = {}


def step_controller(
    controller: HQPController,
    q: np.ndarray,
    reference: Reference,
    obstacles: Optional[list[WorldObstacle]] = None,
) -> ControllerStep:
    """Functional entry point around ``HQPController.step``"""
    return controller.step(controller.chain.state(q), reference, obstacles)
