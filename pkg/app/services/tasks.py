"""
Task and constraint builders for the surgical IK stack.

Each builder returns the rows one task contributes to a priority level:
a Jacobian, a residual and its weights (``TaskSpec``), or an inequality
block ``C qdot <= d`` (``ConstraintSpec``). The level then asks for
``J qdot = K_r r + feedforward`` in the least-squares sense.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.models.gains import GainConfig
from app.services.geometry import (
    ClosestPointResult,
    Segment,
    closest_point_jacobian,
    closest_point_on_segment,
)
from app.services.kinematics import (
    ChainState,
    DimensionMismatchError,
    KinematicChain,
    Pose,
    log6,
)
from app.utils.logger import get_structured_logger

logger = get_structured_logger(__name__)

MIN_REPULSION_DISTANCE = 1e-9


class TaskError(Exception):
    """Base exception for task construction failures"""
    pass


class UndefinedRepulsionError(TaskError):
    """Obstacle lies on the link axis, so there is no repulsion direction"""
    pass


class JointLimitViolationError(TaskError):
    """Configuration is outside the joint limits beyond the clamping band"""
    pass


@dataclass(frozen=True, eq=False)
class TaskSpec:
    """Rows ``jacobian @ qdot ~= k_r * residual + feedforward`` weighted by ``k_t``"""
    jacobian: np.ndarray
    residual: np.ndarray
    k_t: float
    k_r: float
    label: str
    feedforward: Optional[np.ndarray] = None
    # signed surface distance, collision tasks only
    clearance: Optional[float] = None

    def __post_init__(self) -> None:
        jac = np.atleast_2d(np.asarray(self.jacobian, dtype=float))
        res = np.atleast_1d(np.asarray(self.residual, dtype=float))
        if jac.shape[0] != res.shape[0]:
            raise DimensionMismatchError(
                f"task '{self.label}': {jac.shape[0]} Jacobian rows vs {res.shape[0]} residual entries"
            )
        if not (np.all(np.isfinite(jac)) and np.all(np.isfinite(res))):
            raise TaskError(f"task '{self.label}' has non-finite entries")
        if self.k_t < 0.0 or not self.k_r > 0.0:
            raise TaskError(f"task '{self.label}': need k_t >= 0 and k_r > 0")
        object.__setattr__(self, "jacobian", jac)
        object.__setattr__(self, "residual", res)
        if self.feedforward is not None:
            ff = np.asarray(self.feedforward, dtype=float).reshape(res.shape)
            object.__setattr__(self, "feedforward", ff)

    @property
    def rows(self) -> int:
        return int(self.jacobian.shape[0])

    @property
    def cols(self) -> int:
        return int(self.jacobian.shape[1])

    def target(self) -> np.ndarray:
        """Desired task-space velocity b = K_r r (+ feedforward)"""
        b = self.k_r * self.residual
        if self.feedforward is not None:
            b = b + self.feedforward
        return b

    def with_weight(self, k_t: float) -> "TaskSpec":
        return TaskSpec(
            self.jacobian, self.residual, k_t, self.k_r, self.label, self.feedforward, self.clearance
        )


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Inequality block ``matrix @ qdot <= bound``"""
    matrix: np.ndarray
    bound: np.ndarray
    label: str

    def __post_init__(self) -> None:
        mat = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        bnd = np.atleast_1d(np.asarray(self.bound, dtype=float))
        if mat.shape[0] != bnd.shape[0]:
            raise DimensionMismatchError(
                f"constraint '{self.label}': {mat.shape[0]} rows vs {bnd.shape[0]} bounds"
            )
        if not (np.all(np.isfinite(mat)) and np.all(np.isfinite(bnd))):
            raise TaskError(f"constraint '{self.label}' has non-finite entries")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "bound", bnd)

    @property
    def rows(self) -> int:
        return int(self.matrix.shape[0])


def _state(chain: KinematicChain, q: Sequence[float], state: Optional[ChainState]) -> ChainState:
    return state if state is not None else chain.state(q)


# ---------------------------------------------------------------------------
# Remote center of motion
# ---------------------------------------------------------------------------

def _rcm_geometry(
    state: ChainState, p_trocar: np.ndarray
) -> tuple[Segment, ClosestPointResult, np.ndarray]:
    a, b = state.tool_segment()
    seg = Segment(a, b)
    foot = closest_point_on_segment(seg, p_trocar)
    return seg, foot, foot.point - p_trocar


def rcm_error(
    chain: KinematicChain,
    q: Sequence[float],
    p_trocar: Sequence[float],
    *,
    state: Optional[ChainState] = None,
) -> float:
    """Distance from the trocar to the nearest tool-axis point"""
    _, _, p_e = _rcm_geometry(_state(chain, q, state), np.asarray(p_trocar, dtype=float))
    return float(np.linalg.norm(p_e))


def rcm_task(
    chain: KinematicChain,
    q: Sequence[float],
    p_trocar: Sequence[float],
    gains: GainConfig,
    *,
    state: Optional[ChainState] = None,
) -> TaskSpec:
    """
    Scalar RCM task: J = -p_e^T dp_rcm/dq / |p_e|, r = -|p_e|.

    Inside the dead zone (|p_e| < rcm_tolerance) the row and residual are
    zero because the direction of p_e is undefined there.
    """
    st = _state(chain, q, state)
    trocar = np.asarray(p_trocar, dtype=float)
    seg, foot, p_e = _rcm_geometry(st, trocar)
    dist = float(np.linalg.norm(p_e))
    n = chain.dof
    if dist < gains.rcm_tolerance:
        return TaskSpec(np.zeros((1, n)), np.zeros(1), gains.k_t_rcm, gains.k_r_rcm, "rcm")

    jac_a, jac_b = st.tool_segment_jacobians()
    jac_p = closest_point_jacobian(seg, foot, jac_a, jac_b, trocar)
    jac = -(p_e / dist) @ jac_p
    return TaskSpec(jac.reshape(1, n), np.array([-dist]), gains.k_t_rcm, gains.k_r_rcm, "rcm")


def rcm_vector_task(
    chain: KinematicChain,
    q: Sequence[float],
    p_trocar: Sequence[float],
    gains: GainConfig,
    *,
    state: Optional[ChainState] = None,
) -> TaskSpec:
    """
    Vector RCM task: J = (I - l l^T) dp_rcm/dq, r = -p_e.

    Controls both lateral deviation directions, and has no singularity at
    zero deviation. The three rows have rank two; the axial direction is
    removed by the projector.
    """
    st = _state(chain, q, state)
    trocar = np.asarray(p_trocar, dtype=float)
    seg, foot, p_e = _rcm_geometry(st, trocar)
    jac_a, jac_b = st.tool_segment_jacobians()
    jac_p = closest_point_jacobian(seg, foot, jac_a, jac_b, trocar)
    l_hat = seg.direction / seg.length
    jac = (np.eye(3) - np.outer(l_hat, l_hat)) @ jac_p
    return TaskSpec(jac, -p_e, gains.k_t_rcm, gains.k_r_rcm, "rcm")


# ---------------------------------------------------------------------------
# Pose tracking
# ---------------------------------------------------------------------------

def tracking_task(
    chain: KinematicChain,
    q: Sequence[float],
    x_des: Pose,
    gains: GainConfig,
    *,
    feedforward: Optional[Sequence[float]] = None,
    k_t: float = 1.0,
    state: Optional[ChainState] = None,
) -> TaskSpec:
    """
    End-effector pose task with left error r = log6(X_des X_act^-1).

    ``feedforward`` is the reference velocity (point velocity, angular
    velocity) in the same convention as the geometric Jacobian.
    """
    st = _state(chain, q, state)
    x_act = st.pose(chain.end_effector)
    residual = log6(x_des @ x_act.inverse()).as_vector()
    ff = None if feedforward is None else np.asarray(feedforward, dtype=float)
    return TaskSpec(
        st.jacobian(chain.end_effector), residual, k_t, gains.k_r_tracking, "tracking", ff
    )


# ---------------------------------------------------------------------------
# Collision avoidance
# ---------------------------------------------------------------------------

def link_segment(state: ChainState, link_index: int) -> Segment:
    """World segment of capsule ``link_index``"""
    capsules = state.chain.capsules
    if not 0 <= link_index < len(capsules):
        raise DimensionMismatchError(
            f"link {link_index} out of range, chain has {len(capsules)} capsules"
        )
    cap = capsules[link_index]
    return Segment(state.positions[cap.frame_a], state.positions[cap.frame_b])


def collision_task(
    chain: KinematicChain,
    q: Sequence[float],
    p_c: Sequence[float],
    link_index: int,
    gains: Optional[GainConfig] = None,
    *,
    k_t: float = 1.0,
    obstacle_radius: float = 0.0,
    state: Optional[ChainState] = None,
) -> TaskSpec:
    """
    Repulsion task between capsule ``link_index`` and a point obstacle.

    r = |d| with d the vector from ``p_c`` to the nearest link point and
    J = d^T dp/dq / |d|, so ``J qdot = K_r r`` moves the link away.
    ``clearance`` on the result is |d| minus the capsule radius and
    ``obstacle_radius``; negative means the surfaces overlap.
    """
    g = gains or GainConfig()
    st = _state(chain, q, state)
    obstacle = np.asarray(p_c, dtype=float)
    seg = link_segment(st, link_index)
    foot = closest_point_on_segment(seg, obstacle)
    d_vec = foot.point - obstacle
    dist = float(np.linalg.norm(d_vec))
    if dist < MIN_REPULSION_DISTANCE:
        raise UndefinedRepulsionError(
            f"obstacle at {obstacle.tolist()} lies on the axis of link {link_index}"
        )

    cap = chain.capsules[link_index]
    jac_a = st.point_jacobian(cap.frame_a, np.zeros(3))
    jac_b = st.point_jacobian(cap.frame_b, np.zeros(3))
    jac_p = closest_point_jacobian(seg, foot, jac_a, jac_b, obstacle)
    jac = (d_vec / dist) @ jac_p
    return TaskSpec(
        jac.reshape(1, chain.dof),
        np.array([dist]),
        k_t,
        g.k_r_collision,
        f"collision[link={link_index}]",
        clearance=dist - cap.radius - obstacle_radius,
    )


# ---------------------------------------------------------------------------
# Manipulability
# ---------------------------------------------------------------------------

def _selected_jacobian(state: ChainState, frame: int, rows: Optional[Sequence[int]]) -> np.ndarray:
    jac = state.jacobian(frame)
    return jac if rows is None else jac[list(rows)]


def _index_and_sensitivity(jac: np.ndarray) -> tuple[float, np.ndarray]:
    """
    mu = product of singular values, and the matrix M with
    d mu = sum(dJ * M), i.e. M = U diag(prod_{l != i} sigma_l) V^T.
    More rows than columns means det(J J^T) = 0 identically.
    """
    m, n = jac.shape
    if m == 0 or m > n:
        return 0.0, np.zeros_like(jac)
    u, sigma, vt = np.linalg.svd(jac, full_matrices=False)
    others = np.array([np.prod(np.delete(sigma, i)) for i in range(m)])
    return float(np.prod(sigma)), (u * others) @ vt


def manipulability_index(
    chain: KinematicChain,
    q: Sequence[float],
    frame: Optional[int] = None,
    rows: Optional[Sequence[int]] = None,
    *,
    state: Optional[ChainState] = None,
) -> float:
    """
    Yoshikawa index sqrt(det(J J^T)) of the geometric Jacobian of ``frame``,
    evaluated as the product of J's singular values; at a singular
    configuration only SVD round-off remains.

    ``rows`` selects a task-relevant subset, e.g. ``(0, 1, 2)`` for the
    translational part.
    """
    f = chain.end_effector if frame is None else frame
    jac = _selected_jacobian(_state(chain, q, state), f, rows)
    return _index_and_sensitivity(jac)[0]


def manipulability_gradient(
    chain: KinematicChain,
    q: Sequence[float],
    frame: Optional[int] = None,
    rows: Optional[Sequence[int]] = None,
    step: Optional[float] = None,
    *,
    state: Optional[ChainState] = None,
) -> np.ndarray:
    """
    Gradient of ``manipulability_index``.

    Analytic by default, from the Jacobian's partial derivatives; with
    ``step`` it is a central difference instead.
    """
    f = chain.end_effector if frame is None else frame
    if step is not None:
        q0 = chain.check_configuration(q)
        grad = np.zeros(chain.dof)
        for j in range(chain.dof):
            dq = np.zeros(chain.dof)
            dq[j] = step
            plus = manipulability_index(chain, q0 + dq, f, rows)
            minus = manipulability_index(chain, q0 - dq, f, rows)
            grad[j] = (plus - minus) / (2.0 * step)
        return grad

    st = _state(chain, q, state)
    _, sensitivity = _index_and_sensitivity(_selected_jacobian(st, f, rows))
    derivatives = st.jacobian_derivatives(f)
    if rows is not None:
        derivatives = derivatives[:, list(rows), :]
    return np.einsum("kij,ij->k", derivatives, sensitivity)


def manipulability_task(
    chain: KinematicChain,
    q: Sequence[float],
    gains: GainConfig,
    *,
    frame: Optional[int] = None,
    rows: Optional[Sequence[int]] = None,
    state: Optional[ChainState] = None,
) -> TaskSpec:
    """J = dt grad(m)^T, r = m with K_r = 1; the residual is used raw"""
    f = chain.end_effector if frame is None else frame
    st = _state(chain, q, state)
    m = manipulability_index(chain, st.q, f, rows, state=st)
    step = gains.fd_step if gains.gradient_method == "central" else None
    grad = manipulability_gradient(chain, st.q, f, rows, step, state=st)
    return TaskSpec(
        (gains.dt * grad).reshape(1, chain.dof),
        np.array([m]),
        gains.k_t_manipulability,
        1.0,
        "manipulability",
    )


# ---------------------------------------------------------------------------
# Joint limits and blending
# ---------------------------------------------------------------------------

def joint_limit_constraint(
    chain: KinematicChain,
    q: Sequence[float],
    gains: GainConfig,
) -> ConstraintSpec:
    """
    Position and velocity limits as C qdot <= d with C = [I; -I].

    Upper bound min((q+ - q)/dt, qdot_max), lower bound
    max((q- - q)/dt, -qdot_max), so q + dt qdot stays inside the limits.
    Configurations within ``limit_tolerance`` outside a limit are clamped
    with a warning; anything further raises.
    """
    vec = chain.check_configuration(q)
    lower, upper = chain.lower, chain.upper
    band = gains.limit_tolerance

    for i in range(chain.dof):
        if vec[i] < lower[i] - band or vec[i] > upper[i] + band:
            name = chain.joints[chain.movable_joints[i]].name
            raise JointLimitViolationError(
                f"joint {i} ({name}) at {vec[i]:.9g} outside [{lower[i]:.9g}, {upper[i]:.9g}]"
            )

    clamped = np.clip(vec, lower, upper)
    if np.any(clamped != vec):
        moved = np.flatnonzero(clamped != vec).tolist()
        logger.warning("Clamped configuration onto joint limits", extra={
            "joints": moved,
            "max_excess": float(np.max(np.abs(clamped - vec))),
        })

    vmax = chain.velocity_limits
    q_bar = np.minimum((upper - clamped) / gains.dt, vmax)
    q_under = np.maximum((lower - clamped) / gains.dt, -vmax)
    n = chain.dof
    return ConstraintSpec(
        np.vstack([np.eye(n), -np.eye(n)]),
        np.concatenate([q_bar, -q_under]),
        "joint_limits",
    )


def transition_gain(d: float, gains: GainConfig) -> float:
    """beta_a = clamp(1 - d/eps_c, 0, 1)"""
    return float(min(max(1.0 - d / gains.epsilon_c, 0.0), 1.0))


def blend_weights(beta_a: float) -> tuple[float, float]:
    """(K_t tracking, K_t collision); the two always sum to one"""
    return 1.0 - beta_a, beta_a
