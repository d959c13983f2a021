"""
Test suite for the dense convex QP solver.
"""

import numpy as np
import pytest
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import nnls

from app.services.qp import (
    QPInfeasibleError,
    QPNotConvexError,
    QPProblem,
    QPStatus,
    kkt_residuals,
    solve_qp,
)


def _random_problem(rng: np.random.Generator) -> QPProblem:
    """PD Hessian, feasible constraints (x = 0 strictly interior)"""
    n = int(rng.integers(1, 9))
    k = int(rng.integers(0, 13))
    m = rng.normal(size=(n, n))
    q_mat = m @ m.T + 0.1 * np.eye(n)
    return QPProblem(
        q_mat,
        rng.normal(size=n) * 3.0,
        rng.normal(size=(k, n)),
        rng.uniform(0.1, 1.0, k),
    )


def _projected_gradient_box(q_mat, c, lower, upper, iterations=200_000):
    """Reference solver for box constraints: projected gradient with step 1/L"""
    step = 1.0 / float(np.max(np.linalg.eigvalsh(q_mat)))
    x = np.clip(np.zeros(len(c)), lower, upper)
    for _ in range(iterations):
        x_new = np.clip(x - step * (q_mat @ x + c), lower, upper)
        if np.max(np.abs(x_new - x)) < 1e-14:
            break
        x = x_new
    return x


def _least_distance_oracle(problem: QPProblem) -> np.ndarray:
    """
    Reference solution through a least-distance problem solved by NNLS.

    With Q = L L^T and z = L^T x + L^-1 c the QP becomes min |z| s.t.
    G z >= h, G = -C L^-T, h = -(d + C Q^-1 c). Its dual is the NNLS
    min |E u - f|, E = [G^T; h^T], f = e_{n+1}, and z = -r[:n] / r[n]
    with r = E u - f.
    """
    lower = cholesky(problem.Q, lower=True)
    shifted_c = solve_triangular(lower, problem.c, lower=True)
    if problem.k == 0:
        return -solve_triangular(lower.T, shifted_c, lower=False)
    g = -solve_triangular(lower, problem.C.T, lower=True).T
    h = -(problem.d + g @ -shifted_c)
    e = np.vstack([g.T, h])
    f = np.zeros(problem.n + 1)
    f[-1] = 1.0
    u, _ = nnls(e, f, maxiter=100 * (problem.n + problem.k))
    r = e @ u - f
    z = -r[:-1] / r[-1]
    return solve_triangular(lower.T, z - shifted_c, lower=False)


class TestQPProblem:
    """Problem validation"""

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            QPProblem(np.eye(3), np.zeros(2))

    def test_non_symmetric(self):
        with pytest.raises(QPNotConvexError):
            QPProblem(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            QPProblem(np.eye(2), np.array([np.nan, 0.0]))

    def test_no_constraints(self):
        problem = QPProblem(np.eye(2), np.zeros(2))
        assert problem.k == 0
        assert problem.C.shape == (0, 2)


class TestSolveQP:
    """Solutions, multipliers and failure modes"""

    def test_unconstrained(self):
        solution = solve_qp(QPProblem(np.eye(2), [-1.0, -2.0]))
        np.testing.assert_allclose(solution.x, [1.0, 2.0])
        assert solution.status == QPStatus.SOLVED
        assert solution.active_set == ()

    def test_single_active_constraint(self):
        solution = solve_qp(QPProblem([[1.0]], [0.0], [[-1.0]], [-1.0]))
        assert solution.x[0] == pytest.approx(1.0)
        assert solution.multipliers[0] == pytest.approx(1.0)
        assert solution.active_set == (0,)

    def test_inactive_constraint(self):
        solution = solve_qp(QPProblem(np.eye(2), [-1.0, -0.2], np.eye(2), [0.5, 0.5]))
        np.testing.assert_allclose(solution.x, [0.5, 0.2], atol=1e-12)
        np.testing.assert_allclose(solution.multipliers, [0.5, 0.0], atol=1e-12)
        assert solution.active_set == (0,)

    def test_not_positive_definite(self):
        with pytest.raises(QPNotConvexError):
            solve_qp(QPProblem(np.diag([1.0, -1.0]), np.zeros(2)))

    def test_singular_hessian(self):
        with pytest.raises(QPNotConvexError):
            solve_qp(QPProblem(np.diag([1.0, 0.0]), np.zeros(2), [[1.0, 0.0]], [1.0]))

    def test_infeasible(self):
        with pytest.raises(QPInfeasibleError):
            solve_qp(QPProblem([[1.0]], [0.0], [[1.0], [-1.0]], [-1.0, -1.0]))

    def test_tolerance_must_be_positive(self):
        with pytest.raises(ValueError):
            solve_qp(QPProblem(np.eye(1), [0.0]), tol=0.0)

    def test_nonnegative_least_squares(self):
        rng = np.random.default_rng(30)
        for _ in range(100):
            a = rng.normal(size=(8, 5))
            b = rng.normal(size=8)
            expected, _ = nnls(a, b)
            problem = QPProblem(a.T @ a, -a.T @ b, -np.eye(5), np.zeros(5))
            solution = solve_qp(problem)
            np.testing.assert_allclose(solution.x, expected, atol=1e-6)

    def test_box_constrained_against_projected_gradient(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            n = int(rng.integers(1, 6))
            m = rng.normal(size=(n, n))
            q_mat = m @ m.T + 0.5 * np.eye(n)
            c = rng.normal(size=n) * 2.0
            lower = -rng.uniform(0.1, 1.0, n)
            upper = rng.uniform(0.1, 1.0, n)
            problem = QPProblem(q_mat, c, np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower]))
            solution = solve_qp(problem)
            expected = _projected_gradient_box(q_mat, c, lower, upper)
            np.testing.assert_allclose(solution.x, expected, atol=1e-6)

    def test_random_problems_kkt(self):
        rng = np.random.default_rng(32)
        for _ in range(500):
            problem = _random_problem(rng)
            solution = solve_qp(problem)
            assert solution.converged
            assert solution.residuals.worst() < 1e-8
            assert np.all(solution.multipliers >= 0.0)
            recomputed = kkt_residuals(problem, solution.x, solution.multipliers)
            assert recomputed.worst() == pytest.approx(solution.residuals.worst())

    def test_general_constraints_against_least_distance_oracle(self):
        rng = np.random.default_rng(34)
        for _ in range(500):
            problem = _random_problem(rng)
            solution = solve_qp(problem)
            assert solution.converged
            assert solution.residuals.worst() < 1e-8
            np.testing.assert_allclose(solution.x, _least_distance_oracle(problem), atol=1e-6)

    def test_least_distance_oracle_matches_box_oracle(self):
        rng = np.random.default_rng(35)
        for _ in range(10):
            n = int(rng.integers(1, 5))
            m = rng.normal(size=(n, n))
            q_mat = m @ m.T + 0.5 * np.eye(n)
            c = rng.normal(size=n) * 2.0
            bound = rng.uniform(0.1, 1.0, n)
            problem = QPProblem(q_mat, c, np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([bound, bound]))
            np.testing.assert_allclose(
                _least_distance_oracle(problem), _projected_gradient_box(q_mat, c, -bound, bound), atol=1e-6
            )

    def test_objective_below_random_feasible_points(self):
        rng = np.random.default_rng(33)
        for _ in range(20):
            problem = _random_problem(rng)
            solution = solve_qp(problem)
            points = rng.uniform(-2.0, 2.0, size=(10_000, problem.n))
            if problem.k:
                points = points[np.all(points @ problem.C.T <= problem.d, axis=1)]
            values = 0.5 * np.einsum("ij,jk,ik->i", points, problem.Q, points) + points @ problem.c
            if values.size:
                assert solution.objective <= float(np.min(values)) + 1e-9

    def test_warm_start_reuses_working_set(self):
        rng = np.random.default_rng(34)
        for _ in range(50):
            problem = _random_problem(rng)
            cold = solve_qp(problem)
            warm = solve_qp(problem, warm_start=cold.x)
            np.testing.assert_allclose(warm.x, cold.x, atol=1e-7)
            assert warm.residuals.worst() < 1e-8

    def test_wrong_size_warm_start_is_ignored(self):
        problem = QPProblem(np.eye(2), [-1.0, -1.0], [[1.0, 0.0]], [0.5])
        solution = solve_qp(problem, warm_start=np.zeros(5))
        np.testing.assert_allclose(solution.x, [0.5, 1.0], atol=1e-12)

    def test_iteration_cap_flags_solution(self):
        problem = QPProblem(np.eye(2), [-1.0, -1.0], np.eye(2), [0.5, 0.5])
        solution = solve_qp(problem, max_iter=0)
        assert solution.status == QPStatus.MAX_ITERATIONS
        assert not solution.converged
        np.testing.assert_allclose(solution.x, [0.5, 0.5], atol=1e-12)

    def test_scaling_invariance(self):
        rng = np.random.default_rng(35)
        for _ in range(50):
            problem = _random_problem(rng)
            alpha = float(rng.uniform(0.1, 10.0))
            scaled = QPProblem(alpha * problem.Q, alpha * problem.c, problem.C, problem.d)
            np.testing.assert_allclose(solve_qp(scaled).x, solve_qp(problem).x, atol=1e-8)
