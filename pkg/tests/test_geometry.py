"""
Test suite for closest-point queries and their derivatives.
"""

import numpy as np
import pytest

from app.services.geometry import (
    DegenerateSegmentError,
    Segment,
    capsule_clearance,
    closest_point_jacobian,
    closest_point_on_segment,
    point_capsule_clearance,
    segment_segment_closest,
)
from app.services.kinematics import rotation_from_rpy


def _random_segment(rng: np.random.Generator) -> Segment:
    a = rng.uniform(-1.0, 1.0, 3)
    return Segment(a, a + rng.uniform(-1.0, 1.0, 3) + 0.01)


class TestClosestPointOnSegment:
    """Point to segment"""

    def test_perpendicular_foot(self):
        seg = Segment([0, 0, 0], [0, 0, 1])
        result = closest_point_on_segment(seg, [1, 0, 0.5])
        np.testing.assert_allclose(result.point, [0, 0, 0.5])
        assert result.t == pytest.approx(0.5)
        assert result.interior
        assert result.distance == pytest.approx(1.0)

    def test_clamped_beyond_end(self):
        seg = Segment([0, 0, 0], [0, 0, 1])
        result = closest_point_on_segment(seg, [0, 0, 2])
        np.testing.assert_allclose(result.point, [0, 0, 1])
        assert result.t == 1.0
        assert not result.interior
        assert result.distance == pytest.approx(1.0)

    def test_degenerate_segment(self):
        with pytest.raises(DegenerateSegmentError):
            Segment([0, 0, 0], [0, 0, 1e-12])

    def test_non_finite_segment(self):
        with pytest.raises(DegenerateSegmentError):
            Segment([0, 0, np.inf], [0, 0, 1])

    def test_dense_sampling_oracle(self):
        rng = np.random.default_rng(10)
        ts = np.linspace(0.0, 1.0, 10_000)
        for _ in range(1000):
            seg = _random_segment(rng)
            p = rng.uniform(-2.0, 2.0, 3)
            result = closest_point_on_segment(seg, p)
            samples = seg.a + ts[:, None] * seg.direction
            assert result.distance <= float(np.min(np.linalg.norm(samples - p, axis=1))) + 1e-12
            np.testing.assert_allclose(result.point, seg.at(result.t), atol=1e-12)
            assert 0.0 <= result.t <= 1.0

    def test_rigid_motion_equivariance(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            seg = _random_segment(rng)
            p = rng.uniform(-2.0, 2.0, 3)
            rot = rotation_from_rpy(rng.uniform(-np.pi, np.pi, 3))
            shift = rng.uniform(-1.0, 1.0, 3)
            moved = Segment(rot @ seg.a + shift, rot @ seg.b + shift)
            expected = rot @ closest_point_on_segment(seg, p).point + shift
            actual = closest_point_on_segment(moved, rot @ p + shift).point
            np.testing.assert_allclose(actual, expected, atol=1e-9)

    def test_clamped_not_closer_than_line(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            seg = _random_segment(rng)
            p = rng.uniform(-2.0, 2.0, 3)
            d = seg.direction
            foot = seg.a + float((p - seg.a) @ d) / float(d @ d) * d
            line_distance = float(np.linalg.norm(foot - p))
            assert closest_point_on_segment(seg, p).distance >= line_distance - 1e-12


class TestSegmentSegment:
    """Segment to segment"""

    def test_skew_segments(self):
        s1 = Segment([-1, 0, 0], [1, 0, 0])
        s2 = Segment([0, -1, 1], [0, 1, 1])
        result = segment_segment_closest(s1, s2)
        assert result.distance == pytest.approx(1.0)
        np.testing.assert_allclose(result.point1, [0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(result.point2, [0, 0, 1], atol=1e-12)

    def test_identical_segments(self):
        s = Segment([0, 0, 0], [1, 1, 0])
        assert segment_segment_closest(s, s).distance == pytest.approx(0.0, abs=1e-12)

    def test_parallel_overlap_picks_midpoint(self):
        s1 = Segment([0, 0, 0], [2, 0, 0])
        s2 = Segment([1, 1, 0], [3, 1, 0])
        result = segment_segment_closest(s1, s2)
        assert result.distance == pytest.approx(1.0)
        np.testing.assert_allclose(result.point1, [1.5, 0, 0], atol=1e-12)
        np.testing.assert_allclose(result.point2, [1.5, 1, 0], atol=1e-12)

    def test_parallel_disjoint(self):
        s1 = Segment([0, 0, 0], [1, 0, 0])
        s2 = Segment([2, 1, 0], [3, 1, 0])
        result = segment_segment_closest(s1, s2)
        assert result.distance == pytest.approx(np.sqrt(2.0))
        np.testing.assert_allclose(result.point1, [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(result.point2, [2, 1, 0], atol=1e-12)

    def test_swap_is_exact(self):
        rng = np.random.default_rng(13)
        for _ in range(500):
            s1, s2 = _random_segment(rng), _random_segment(rng)
            forward = segment_segment_closest(s1, s2)
            backward = segment_segment_closest(s2, s1)
            assert forward.distance == backward.distance
            np.testing.assert_array_equal(forward.point1, backward.point2)

    def test_dense_sampling_oracle(self):
        rng = np.random.default_rng(14)
        ts = np.linspace(0.0, 1.0, 100)
        for _ in range(1000):
            s1, s2 = _random_segment(rng), _random_segment(rng)
            p1 = s1.a + ts[:, None] * s1.direction
            p2 = s2.a + ts[:, None] * s2.direction
            sampled = float(np.min(np.linalg.norm(p1[:, None, :] - p2[None, :, :], axis=2)))
            result = segment_segment_closest(s1, s2)
            assert result.distance <= sampled + 1e-6
            assert result.distance == pytest.approx(
                float(np.linalg.norm(result.point1 - result.point2)), abs=1e-12
            )


class TestClearance:
    """Capsule and sphere clearances"""

    def test_skew_capsules(self):
        s1 = Segment([-1, 0, 0], [1, 0, 0])
        s2 = Segment([0, -1, 1], [0, 1, 1])
        assert capsule_clearance(s1, 0.25, s2, 0.25) == pytest.approx(0.5)

    def test_concentric_capsules(self):
        s = Segment([0, 0, 0], [0, 0, 1])
        assert capsule_clearance(s, 0.1, s, 0.2) == pytest.approx(-0.3)

    def test_negative_radius(self):
        s = Segment([0, 0, 0], [0, 0, 1])
        with pytest.raises(ValueError):
            capsule_clearance(s, -0.1, s, 0.1)
        with pytest.raises(ValueError):
            point_capsule_clearance(s, 0.1, [1, 0, 0], -0.1)

    def test_point_capsule(self):
        s = Segment([0, 0, 0], [0, 0, 1])
        assert point_capsule_clearance(s, 0.1, [1, 0, 0.5], 0.2) == pytest.approx(0.7)


class TestClosestPointJacobian:
    """Derivative of the nearest segment point with moving endpoints"""

    @staticmethod
    def _foot(a0, b0, jac_a, jac_b, q, p_c):
        seg = Segment(a0 + jac_a @ q, b0 + jac_b @ q)
        return seg, closest_point_on_segment(seg, p_c)

    def test_interior_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        step = 1e-6
        for _ in range(100):
            n = 5
            a0 = np.zeros(3)
            b0 = np.array([0.0, 0.0, 1.0])
            jac_a = rng.normal(size=(3, n))
            jac_b = rng.normal(size=(3, n))
            p_c = np.array([rng.uniform(0.2, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(0.3, 0.7)])
            q = np.zeros(n)
            seg, foot = self._foot(a0, b0, jac_a, jac_b, q, p_c)
            assert foot.interior
            analytic = closest_point_jacobian(seg, foot, jac_a, jac_b, p_c)
            numeric = np.zeros((3, n))
            for j in range(n):
                dq = np.zeros(n)
                dq[j] = step
                plus = self._foot(a0, b0, jac_a, jac_b, q + dq, p_c)[1].point
                minus = self._foot(a0, b0, jac_a, jac_b, q - dq, p_c)[1].point
                numeric[:, j] = (plus - minus) / (2.0 * step)
            np.testing.assert_allclose(analytic, numeric, atol=1e-6)

    def test_clamped_rides_endpoint(self):
        seg = Segment([0, 0, 0], [0, 0, 1])
        foot = closest_point_on_segment(seg, [0, 0, 3])
        jac_a = np.ones((3, 2))
        jac_b = 2.0 * np.ones((3, 2))
        np.testing.assert_array_equal(closest_point_jacobian(seg, foot, jac_a, jac_b, [0, 0, 3]), jac_b)
        foot = closest_point_on_segment(seg, [0, 0, -3])
        np.testing.assert_array_equal(closest_point_jacobian(seg, foot, jac_a, jac_b, [0, 0, -3]), jac_a)
