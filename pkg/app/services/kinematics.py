"""
Serial-chain kinematics.

Chain loading and validation, forward kinematics, world-frame geometric and
point Jacobians, and the SE(3) exponential and logarithm used by the pose
tracking residual.

Frame convention: frame 0 is the chain base placed in the world by
``KinematicChain.base``; frame ``k + 1`` is the frame after joint ``k``.
Jacobian columns follow the movable joints in chain order (fixed joints add a
frame but no column). Twists and Jacobians stack linear rows before angular
rows.
"""

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from pydantic import ValidationError

from app.models.chain import ChainDescription, JointKind, OriginModel
from app.utils.logger import get_structured_logger
from app.utils.validation import format_validation_error

logger = get_structured_logger(__name__)

AXIS_TOLERANCE = 1e-12
SMALL_ANGLE = 1e-6
# below this angle exp6 and log6 use Taylor series coefficients
SERIES_ANGLE = 1e-3
MIN_SEGMENT_LENGTH = 1e-9

BUNDLED_CHAINS_DIR = Path(__file__).resolve().parent.parent / "data" / "chains"


class ChainError(Exception):
    """Base exception for chain description problems"""
    pass


class ChainParseError(ChainError):
    """Chain file is malformed or does not match the schema"""
    pass


class ChainValidationError(ChainError):
    """Chain parses but violates a kinematic invariant"""
    pass


class DimensionMismatchError(ValueError):
    """Vector or index does not fit the chain"""
    pass


# ---------------------------------------------------------------------------
# SO(3) / SE(3) helpers
# ---------------------------------------------------------------------------

def skew(v: Sequence[float]) -> np.ndarray:
    """Cross-product matrix: skew(a) @ b == cross(a, b)"""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation for a unit axis"""
    k = skew(axis)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rotation_from_rpy(rpy: Sequence[float]) -> np.ndarray:
    """Fixed-axis roll, pitch, yaw: R = Rz(yaw) Ry(pitch) Rx(roll)"""
    roll, pitch, yaw = (float(a) for a in rpy)
    rx = rotation_about(np.array([1.0, 0.0, 0.0]), roll)
    ry = rotation_about(np.array([0.0, 1.0, 0.0]), pitch)
    rz = rotation_about(np.array([0.0, 0.0, 1.0]), yaw)
    return rz @ ry @ rx


def _frozen(array: Any, shape: tuple[int, ...]) -> np.ndarray:
    out = np.array(array, dtype=float).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: x_world = rotation @ x_local + translation"""
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        m = np.asarray(matrix, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_xyz_rpy(cls, xyz: Sequence[float], rpy: Sequence[float]) -> "Pose":
        return cls(rotation_from_rpy(rpy), np.asarray(xyz, dtype=float))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def transform_point(self, point: Sequence[float]) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def is_valid(self, tol: float = 1e-9) -> bool:
        """Orthonormal rotation with det +1 within ``tol``"""
        r = self.rotation
        return bool(
            np.all(np.isfinite(r))
            and np.all(np.isfinite(self.translation))
            and np.max(np.abs(r.T @ r - np.eye(3))) <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol
        )


@dataclass(frozen=True, eq=False)
class Twist:
    """Element of se(3): linear part first, angular part second"""
    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "linear", _frozen(self.linear, (3,)))
        object.__setattr__(self, "angular", _frozen(self.angular, (3,)))

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "Twist":
        v = np.asarray(vector, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])

    def __neg__(self) -> "Twist":
        return Twist(-self.linear, -self.angular)


def _so3_log(rotation: np.ndarray) -> tuple[np.ndarray, float]:
    """Rotation vector and angle, with dedicated branches near 0 and pi"""
    cos_t = float(np.clip((np.trace(rotation) - 1.0) * 0.5, -1.0, 1.0))
    w_raw = _vee(rotation - rotation.T)  # 2 sin(theta) * axis
    sin_t = 0.5 * float(np.linalg.norm(w_raw))
    theta = math.atan2(sin_t, cos_t)

    if theta < SMALL_ANGLE:
        return 0.5 * w_raw, theta

    if math.pi - theta < SMALL_ANGLE:
        # (R + R^T)/2 = cos(theta) I + (1 - cos(theta)) a a^T
        sym = 0.5 * (rotation + rotation.T)
        outer = (sym - cos_t * np.eye(3)) / (1.0 - cos_t)
        k = int(np.argmax(np.diag(outer)))
        axis = outer[:, k] / math.sqrt(max(outer[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if float(axis @ w_raw) < 0.0:
            axis = -axis
        return theta * axis, theta

    return (theta / (2.0 * sin_t)) * w_raw, theta


def exp6(twist: Twist) -> Pose:
    """SE(3) exponential with the coupled V-matrix translation"""
    w = twist.angular
    theta = float(np.linalg.norm(w))
    k = skew(w)
    k2 = k @ k
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta**2
        c = (theta - math.sin(theta)) / theta**3
    rotation = np.eye(3) + a * k + b * k2
    v_matrix = np.eye(3) + b * k + c * k2
    return Pose(rotation, v_matrix @ twist.linear)


def log6(pose: Pose) -> Twist:
    """SE(3) logarithm, inverse of ``exp6`` for rotation angles in [0, pi]"""
    omega, theta = _so3_log(pose.rotation)
    k = skew(omega)
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        coef = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        half = 0.5 * theta
        coef = (1.0 - half / math.tan(half)) / theta**2
    v_inv = np.eye(3) - 0.5 * k + coef * (k @ k)
    return Twist(v_inv @ pose.translation, omega)


# ---------------------------------------------------------------------------
# Chain model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Joint:
    kind: JointKind
    axis: np.ndarray
    origin: Pose
    lower: float = -math.inf
    upper: float = math.inf
    velocity: float = math.inf
    name: str = ""

    @property
    def movable(self) -> bool:
        return self.kind != JointKind.FIXED


@dataclass(frozen=True)
class Capsule:
    """Link proxy: segment between the origins of two frames, swollen by radius"""
    frame_a: int
    frame_b: int
    radius: float


@dataclass(frozen=True, eq=False)
class ToolAxis:
    """Shaft line through two points fixed in ``frame``"""
    frame: int
    a: np.ndarray
    b: np.ndarray


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Validated serial chain. Immutable; share freely across threads."""
    joints: tuple[Joint, ...]
    end_effector: int
    tool_axis: Optional[ToolAxis] = None
    capsules: tuple[Capsule, ...] = ()
    base: Pose = field(default_factory=Pose.identity)
    name: str = "chain"

    @cached_property
    def movable_joints(self) -> tuple[int, ...]:
        return tuple(i for i, j in enumerate(self.joints) if j.movable)

    @cached_property
    def lower(self) -> np.ndarray:
        return _frozen([self.joints[i].lower for i in self.movable_joints], (self.dof,))

    @cached_property
    def upper(self) -> np.ndarray:
        return _frozen([self.joints[i].upper for i in self.movable_joints], (self.dof,))

    @cached_property
    def velocity_limits(self) -> np.ndarray:
        return _frozen([self.joints[i].velocity for i in self.movable_joints], (self.dof,))

    @property
    def dof(self) -> int:
        """Number of movable joints (length of q)"""
        return len(self.movable_joints)

    @property
    def n_frames(self) -> int:
        return len(self.joints) + 1

    def with_base(self, base: Pose) -> "KinematicChain":
        return replace(self, base=base)

    def check_configuration(self, q: Sequence[float]) -> np.ndarray:
        """Return q as a float vector or raise on wrong length / non-finite"""
        vec = np.asarray(q, dtype=float).reshape(-1)
        if vec.shape[0] != self.dof:
            raise DimensionMismatchError(
                f"configuration has {vec.shape[0]} entries, chain '{self.name}' "
                f"has {self.dof} movable joints"
            )
        if not np.all(np.isfinite(vec)):
            raise DimensionMismatchError("configuration contains non-finite entries")
        return vec

    def check_frame(self, frame: int) -> int:
        if not 0 <= int(frame) < self.n_frames:
            raise DimensionMismatchError(
                f"frame {frame} out of range [0, {self.n_frames - 1}]"
            )
        return int(frame)

    def state(self, q: Sequence[float]) -> "ChainState":
        return ChainState(self, self.check_configuration(q))


class ChainState:
    """
    One forward-kinematics pass at a fixed configuration.

    Every Jacobian needed at a control step is read from the same pass, so
    controllers build one state per step instead of redoing FK per task.
    """

    def __init__(self, chain: KinematicChain, q: np.ndarray):
        self.chain = chain
        self.q = q
        n_frames = chain.n_frames
        rotations = np.empty((n_frames, 3, 3))
        positions = np.empty((n_frames, 3))
        rotations[0] = chain.base.rotation
        positions[0] = chain.base.translation

        dof = chain.dof
        self.joint_axes = np.zeros((dof, 3))
        self.joint_points = np.zeros((dof, 3))
        self.joint_kinds: list[JointKind] = []
        # frame index right after each movable joint
        self.joint_frames = np.zeros(dof, dtype=int)

        col = 0
        for k, joint in enumerate(chain.joints):
            r_parent = rotations[k]
            p_parent = positions[k]
            r_origin = r_parent @ joint.origin.rotation
            p_origin = r_parent @ joint.origin.translation + p_parent
            if joint.kind == JointKind.REVOLUTE:
                rotations[k + 1] = r_origin @ rotation_about(joint.axis, q[col])
                positions[k + 1] = p_origin
            elif joint.kind == JointKind.PRISMATIC:
                rotations[k + 1] = r_origin
                positions[k + 1] = p_origin + r_origin @ (joint.axis * q[col])
            else:
                rotations[k + 1] = r_origin
                positions[k + 1] = p_origin
                continue
            self.joint_axes[col] = r_origin @ joint.axis
            self.joint_points[col] = p_origin
            self.joint_kinds.append(joint.kind)
            self.joint_frames[col] = k + 1
            col += 1

        self.rotations = rotations
        self.positions = positions

    def pose(self, frame: int) -> Pose:
        f = self.chain.check_frame(frame)
        return Pose(self.rotations[f], self.positions[f])

    def poses(self) -> list[Pose]:
        return [Pose(r, p) for r, p in zip(self.rotations, self.positions)]

    def point(self, frame: int, local: Sequence[float]) -> np.ndarray:
        f = self.chain.check_frame(frame)
        return self.rotations[f] @ np.asarray(local, dtype=float) + self.positions[f]

    def _linear_columns(self, frame: int, target: np.ndarray) -> np.ndarray:
        jac = np.zeros((3, self.chain.dof))
        for col, kind in enumerate(self.joint_kinds):
            if self.joint_frames[col] > frame:
                break
            z = self.joint_axes[col]
            if kind == JointKind.REVOLUTE:
                jac[:, col] = np.cross(z, target - self.joint_points[col])
            else:
                jac[:, col] = z
        return jac

    def jacobian(self, frame: int) -> np.ndarray:
        """6 x n world-frame geometric Jacobian of ``frame``"""
        f = self.chain.check_frame(frame)
        jac = np.zeros((6, self.chain.dof))
        jac[:3] = self._linear_columns(f, self.positions[f])
        for col, kind in enumerate(self.joint_kinds):
            if self.joint_frames[col] > f:
                break
            if kind == JointKind.REVOLUTE:
                jac[3:, col] = self.joint_axes[col]
        return jac

    def jacobian_derivatives(self, frame: int) -> np.ndarray:
        """
        Partial derivatives of ``jacobian(frame)``: an n x 6 x n array whose
        slice ``[k]`` is dJ/dq_k.

        A joint axis z_j turns only with revolute joints k < j (dz_j = z_k x z_j).
        The lever p_f - p_j of a revolute column changes by z_k x (p_f - p_j)
        for revolute k < j and by the frame's own linear column k for k >= j.
        """
        f = self.chain.check_frame(frame)
        jac = self.jacobian(f)
        axes = self.joint_axes
        n = self.chain.dof
        revolute = np.array([kind == JointKind.REVOLUTE for kind in self.joint_kinds], dtype=bool)
        active = self.joint_frames <= f
        before = np.triu(np.ones((n, n), dtype=bool), 1)  # [k, j]: k < j

        z_k = axes[:, None, :]
        z_j = axes[None, :, :]
        lever = (self.positions[f] - self.joint_points)[None, :, :]

        turn = before & revolute[:, None] & active[None, :]
        dz = np.cross(z_k, z_j) * turn[..., None]
        d_lever = np.where(
            before[..., None],
            np.cross(z_k, lever) * revolute[:, None, None],
            np.broadcast_to(jac[:3].T[:, None, :], (n, n, 3)),
        )
        linear = np.where(
            revolute[None, :, None],
            np.cross(dz, lever) + np.cross(z_j, d_lever),
            dz,
        ) * active[None, :, None]
        angular = dz * revolute[None, :, None]

        out = np.empty((n, 6, n))
        out[:, :3, :] = linear.transpose(0, 2, 1)
        out[:, 3:, :] = angular.transpose(0, 2, 1)
        return out

    def point_jacobian(self, frame: int, local: Sequence[float]) -> np.ndarray:
        """3 x n Jacobian of the world position of a point fixed in ``frame``"""
        f = self.chain.check_frame(frame)
        return self._linear_columns(f, self.point(f, local))

    def tool_segment(self) -> tuple[np.ndarray, np.ndarray]:
        """World endpoints of the tool axis"""
        axis = self._require_tool_axis()
        return self.point(axis.frame, axis.a), self.point(axis.frame, axis.b)

    def tool_segment_jacobians(self) -> tuple[np.ndarray, np.ndarray]:
        axis = self._require_tool_axis()
        return (
            self.point_jacobian(axis.frame, axis.a),
            self.point_jacobian(axis.frame, axis.b),
        )

    def _require_tool_axis(self) -> ToolAxis:
        if self.chain.tool_axis is None:
            raise ChainValidationError(f"chain '{self.chain.name}' has no tool axis")
        return self.chain.tool_axis


def forward_kinematics(chain: KinematicChain, q: Sequence[float]) -> list[Pose]:
    """World pose of every frame; the end effector is ``poses[chain.end_effector]``"""
    return chain.state(q).poses()


def geometric_jacobian(chain: KinematicChain, q: Sequence[float], frame: int) -> np.ndarray:
    return chain.state(q).jacobian(frame)


def point_jacobian(
    chain: KinematicChain,
    q: Sequence[float],
    frame: int,
    point: Sequence[float],
) -> np.ndarray:
    return chain.state(q).point_jacobian(frame, point)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _origin_pose(origin: OriginModel) -> Pose:
    return Pose.from_xyz_rpy(origin.xyz, origin.rpy)


def _all_finite(values: Sequence[float]) -> bool:
    return bool(np.all(np.isfinite(np.asarray(values, dtype=float))))


def chain_from_description(description: ChainDescription, name: Optional[str] = None) -> KinematicChain:
    """Check kinematic invariants and build the immutable chain"""
    joints: list[Joint] = []
    for index, jm in enumerate(description.joints):
        numbers = [*jm.axis, *jm.origin.xyz, *jm.origin.rpy]
        if jm.limits is not None:
            numbers += [jm.limits.lower, jm.limits.upper, jm.limits.velocity]
        if not _all_finite(numbers):
            raise ChainValidationError(f"non-finite value, joint {index}")

        axis = np.asarray(jm.axis, dtype=float)
        if jm.kind == JointKind.FIXED:
            joints.append(
                Joint(JointKind.FIXED, axis, _origin_pose(jm.origin), name=jm.name or f"joint{index}")
            )
            continue

        if abs(float(np.linalg.norm(axis)) - 1.0) > AXIS_TOLERANCE:
            raise ChainValidationError(f"non-unit axis, joint {index}")
        if jm.limits is None:
            raise ChainValidationError(f"missing limits, joint {index}")
        if not jm.limits.lower < jm.limits.upper:
            raise ChainValidationError(
                f"inverted limits, joint {index}: lower {jm.limits.lower} >= upper {jm.limits.upper}"
            )
        if not jm.limits.velocity > 0.0:
            raise ChainValidationError(f"non-positive velocity limit, joint {index}")

        joints.append(
            Joint(
                kind=jm.kind,
                axis=axis,
                origin=_origin_pose(jm.origin),
                lower=float(jm.limits.lower),
                upper=float(jm.limits.upper),
                velocity=float(jm.limits.velocity),
                name=jm.name or f"joint{index}",
            )
        )

    n_frames = len(joints) + 1

    if not 0 <= description.end_effector < n_frames:
        raise ChainValidationError(
            f"end_effector frame {description.end_effector} out of range [0, {n_frames - 1}]"
        )

    tool_axis = None
    if description.tool_axis is not None:
        ta = description.tool_axis
        if ta.frame >= n_frames:
            raise ChainValidationError(f"tool_axis frame {ta.frame} out of range")
        a = np.asarray(ta.a, dtype=float)
        b = np.asarray(ta.b, dtype=float)
        if not _all_finite([*ta.a, *ta.b]) or np.linalg.norm(b - a) <= MIN_SEGMENT_LENGTH:
            raise ChainValidationError("degenerate tool_axis segment")
        tool_axis = ToolAxis(ta.frame, _frozen(a, (3,)), _frozen(b, (3,)))

    capsules = []
    for index, cm in enumerate(description.capsules):
        if cm.frame_a >= n_frames or cm.frame_b >= n_frames:
            raise ChainValidationError(f"frame out of range, capsule {index}")
        if not (math.isfinite(cm.radius) and cm.radius >= 0.0):
            raise ChainValidationError(f"negative capsule radius, capsule {index}")
        capsules.append(Capsule(cm.frame_a, cm.frame_b, float(cm.radius)))

    return KinematicChain(
        joints=tuple(joints),
        end_effector=description.end_effector,
        tool_axis=tool_axis,
        capsules=tuple(capsules),
        base=_origin_pose(description.base),
        name=name or description.name or "chain",
    )


ChainSource = Union[str, bytes, Mapping[str, Any], ChainDescription]


def load_chain(description: ChainSource, name: Optional[str] = None) -> KinematicChain:
    """
    Parse and validate a chain description.

    Args:
        description: JSON text, an already-decoded mapping, or a schema instance
        name: Optional display name overriding the file's own

    Raises:
        ChainParseError: Malformed JSON or schema mismatch (field paths in message)
        ChainValidationError: Kinematic invariant violated (joint named in message)
    """
    if isinstance(description, ChainDescription):
        model = description
    else:
        data: Any = description
        if isinstance(description, (str, bytes)):
            try:
                data = json.loads(description)
            except json.JSONDecodeError as e:
                raise ChainParseError(f"malformed chain file: {e}") from e
        try:
            model = ChainDescription.model_validate(data)
        except ValidationError as e:
            raise ChainParseError(
                f"chain schema mismatch: {format_validation_error(e)}"
            ) from e

    chain = chain_from_description(model, name=name)
    logger.debug("Chain loaded", extra={
        "chain": chain.name,
        "dof": chain.dof,
        "frames": chain.n_frames,
        "end_effector": chain.end_effector,
    })
    return chain


def bundled_chain_path(name: str) -> Path:
    """Path of a chain file shipped with the package (``.json`` optional)"""
    filename = name if name.endswith(".json") else f"{name}.json"
    return BUNDLED_CHAINS_DIR / filename


def load_chain_file(path: Union[str, Path]) -> KinematicChain:
    """Load a chain file; bare names fall back to the bundled chains"""
    p = Path(path)
    if not p.exists() and not p.is_absolute():
        bundled = bundled_chain_path(str(path))
        if bundled.exists():
            p = bundled
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ChainParseError(f"cannot read chain file {p}: {e}") from e
    return load_chain(text, name=p.stem)


def compose_chains(first: KinematicChain, second: KinematicChain) -> KinematicChain:
    """
    Mount ``second`` on the end effector of ``first``.

    ``second``'s base becomes a fixed joint after ``first``'s last frame, so
    frame f of ``second`` maps to frame ``len(first.joints) + 1 + f``.
    """
    if first.end_effector != len(first.joints):
        raise ChainValidationError(
            "can only mount on a chain whose end effector is its last frame"
        )
    offset = len(first.joints) + 1
    mount = Joint(JointKind.FIXED, np.array([0.0, 0.0, 1.0]), second.base, name="mount")
    tool_axis = first.tool_axis
    if second.tool_axis is not None:
        tool_axis = ToolAxis(
            second.tool_axis.frame + offset, second.tool_axis.a, second.tool_axis.b
        )
    capsules = first.capsules + tuple(
        Capsule(c.frame_a + offset, c.frame_b + offset, c.radius) for c in second.capsules
    )
    return KinematicChain(
        joints=first.joints + (mount,) + second.joints,
        end_effector=second.end_effector + offset,
        tool_axis=tool_axis,
        capsules=capsules,
        base=first.base,
        name=f"{first.name}+{second.name}",
    )
