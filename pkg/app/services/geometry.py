"""
Closest-point queries on segments and their configuration derivatives.

Shared by the RCM task (nearest shaft point to the trocar) and the collision
tasks (nearest link point to an obstacle). All functions are pure.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

MIN_SEGMENT_LENGTH = 1e-9
# relative threshold on |d1 x d2|^2 / (|d1|^2 |d2|^2) below which segments are parallel
PARALLEL_TOLERANCE = 1e-12


class DegenerateSegmentError(ValueError):
    """Segment shorter than MIN_SEGMENT_LENGTH"""
    pass


@dataclass(frozen=True, eq=False)
class Segment:
    """World-frame segment from ``a`` to ``b``"""
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float).reshape(3)
        b = np.asarray(self.b, dtype=float).reshape(3)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise DegenerateSegmentError("segment endpoints must be finite")
        if float(np.linalg.norm(b - a)) <= MIN_SEGMENT_LENGTH:
            raise DegenerateSegmentError(
                f"segment length below {MIN_SEGMENT_LENGTH} m: a={a.tolist()}, b={b.tolist()}"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def direction(self) -> np.ndarray:
        return self.b - self.a

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    def at(self, t: float) -> np.ndarray:
        return self.a + t * (self.b - self.a)


class ClosestPointResult(NamedTuple):
    """Nearest point on a segment; ``interior`` is False when t was clamped"""
    point: np.ndarray
    t: float
    interior: bool
    distance: float


class SegmentPairResult(NamedTuple):
    point1: np.ndarray
    point2: np.ndarray
    distance: float
    t1: float
    t2: float


def closest_point_on_segment(seg: Segment, p_c: Sequence[float]) -> ClosestPointResult:
    """Project ``p_c`` on the segment line and clamp the parameter to [0, 1]"""
    p = np.asarray(p_c, dtype=float)
    d = seg.direction
    t_raw = float((p - seg.a) @ d) / float(d @ d)
    t = min(max(t_raw, 0.0), 1.0)
    point = seg.a + t * d
    return ClosestPointResult(point, t, 0.0 < t_raw < 1.0, float(np.linalg.norm(point - p)))


def _pair_key(s: Segment) -> tuple[float, ...]:
    return (*s.a.tolist(), *s.b.tolist())


def segment_segment_closest(s1: Segment, s2: Segment) -> SegmentPairResult:
    """
    Closest pair of points between two segments.

    Arguments are put in a canonical order before solving so that swapping
    them returns bit-identical distances. Parallel segments pick the
    midpoint of their overlap.
    """
    if _pair_key(s2) < _pair_key(s1):
        r = _segment_segment(s2, s1)
        return SegmentPairResult(r.point2, r.point1, r.distance, r.t2, r.t1)
    return _segment_segment(s1, s2)


def _segment_segment(s1: Segment, s2: Segment) -> SegmentPairResult:
    d1 = s1.direction
    d2 = s2.direction
    r = s1.a - s2.a
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    b = float(d1 @ d2)
    c = float(d1 @ r)
    f = float(d2 @ r)
    denom = a * e - b * b

    if denom <= PARALLEL_TOLERANCE * a * e:
        return _parallel_pair(s1, s2)

    s = min(max((b * f - c * e) / denom, 0.0), 1.0)
    t = (b * s + f) / e
    if t < 0.0:
        t = 0.0
        s = min(max(-c / a, 0.0), 1.0)
    elif t > 1.0:
        t = 1.0
        s = min(max((b - c) / a, 0.0), 1.0)

    p1 = s1.at(s)
    p2 = s2.at(t)
    return SegmentPairResult(p1, p2, float(np.linalg.norm(p1 - p2)), s, t)


def _parallel_pair(s1: Segment, s2: Segment) -> SegmentPairResult:
    d1 = s1.direction
    a = float(d1 @ d1)
    t0 = float((s2.a - s1.a) @ d1) / a
    t1 = float((s2.b - s1.a) @ d1) / a
    lo = max(0.0, min(t0, t1))
    hi = min(1.0, max(t0, t1))
    if lo <= hi:
        s = 0.5 * (lo + hi)
    else:
        s = 0.0 if max(t0, t1) < 0.0 else 1.0
    p1 = s1.at(s)
    on2 = closest_point_on_segment(s2, p1)
    if lo > hi:
        # disjoint along the line: settle on the facing endpoints
        back = closest_point_on_segment(s1, on2.point)
        p1, s = back.point, back.t
    return SegmentPairResult(
        p1, on2.point, float(np.linalg.norm(p1 - on2.point)), s, on2.t
    )


def capsule_clearance(s1: Segment, r1: float, s2: Segment, r2: float) -> float:
    """Signed surface distance between two capsules; negative means overlap"""
    if r1 < 0.0 or r2 < 0.0:
        raise ValueError(f"capsule radii must be >= 0, got {r1} and {r2}")
    return segment_segment_closest(s1, s2).distance - (r1 + r2)


def point_capsule_clearance(seg: Segment, radius: float, p: Sequence[float], p_radius: float) -> float:
    """Signed distance between a capsule and a sphere"""
    if radius < 0.0 or p_radius < 0.0:
        raise ValueError(f"radii must be >= 0, got {radius} and {p_radius}")
    return closest_point_on_segment(seg, p).distance - (radius + p_radius)


def closest_point_jacobian(
    seg: Segment,
    result: ClosestPointResult,
    jac_a: np.ndarray,
    jac_b: np.ndarray,
    p_c: Sequence[float],
) -> np.ndarray:
    """
    Configuration derivative of the nearest segment point to a fixed point.

    ``jac_a``/``jac_b`` are the 3 x n point Jacobians of the endpoints. For an
    interior foot point p = a + (p_d . l) l with p_d = p_c - a:

        dp/dq = (I - l l^T) J_a + (l p_d^T + (p_d . l) I) dl/dq
        dl/dq = (I - l l^T) (J_b - J_a) / |b - a|

    A clamped foot point rides its endpoint, so the endpoint Jacobian is
    returned instead.
    """
    if not result.interior:
        return np.array(jac_a if result.t <= 0.5 else jac_b, dtype=float)

    direction = seg.direction
    length = float(np.linalg.norm(direction))
    l_hat = direction / length
    p_d = np.asarray(p_c, dtype=float) - seg.a
    proj = np.eye(3) - np.outer(l_hat, l_hat)
    dl_dq = proj @ (jac_b - jac_a) / length
    return proj @ jac_a + (np.outer(l_hat, p_d) + float(p_d @ l_hat) * np.eye(3)) @ dl_dq
