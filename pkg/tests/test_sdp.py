"""Tests for the interior-point SDP solver."""

import itertools
import unittest

import numpy as np
from numpy.testing import assert_allclose

from convex_observers.sdp import (
    SdpError,
    SdpProblem,
    SdpStatus,
    SolverOptions,
    _inverse,
    _nt_scaling,
    _root,
    project_psd,
    solve,
)


class SolveTests(unittest.TestCase):
    """Small problems with known answers."""

    def test_minimize_trace_with_unit_corner(self):
        """min trace(X) s.t. X11 = 1 gives diag(1, 0) and objective 1."""
        p = SdpProblem()
        b = p.add_block(2)
        p.add_constraint({b: np.array([[1.0, 0.0], [0.0, 0.0]])}, 1.0)
        p.objective = {b: np.eye(2)}
        sol = solve(p)
        self.assertEqual(sol.status, SdpStatus.FEASIBLE)
        self.assertAlmostEqual(sol.objective, 1.0, places=6)
        assert_allclose(sol.blocks[0], np.diag([1.0, 0.0]), atol=1e-5)

    def test_negative_trace_is_infeasible(self):
        """A PSD matrix cannot have trace -1; the dual ray certifies it."""
        p = SdpProblem()
        b = p.add_block(2)
        p.add_constraint({b: np.eye(2)}, -1.0)
        sol = solve(p)
        self.assertEqual(sol.status, SdpStatus.INFEASIBLE)
        self.assertIsNotNone(sol.certificate)
        self.assertGreater(sol.certificate.violation, 0.0)

    def test_feasibility_reports_positive_slack(self):
        p = SdpProblem()
        b = p.add_block(2)
        p.add_constraint({b: np.eye(2)}, 2.0)
        sol = solve(p)
        self.assertTrue(sol.feasible)
        self.assertGreater(sol.slack, 0.0)
        self.assertGreaterEqual(min(sol.min_eigenvalues()), -1e-8)

    def test_free_variables(self):
        """X11 + y = 3 and X11 - y = 1 force X11 = 2, y = 1."""
        p = SdpProblem()
        b = p.add_block(1)
        k = p.add_free(1)
        p.add_constraint({b: np.array([[1.0]])}, 3.0, free={k: 1.0})
        p.add_constraint({b: np.array([[1.0]])}, 1.0, free={k: -1.0})
        sol = solve(p)
        self.assertTrue(sol.feasible)
        self.assertAlmostEqual(sol.blocks[0][0, 0], 2.0, places=5)
        self.assertAlmostEqual(sol.free[0], 1.0, places=5)

    def test_iteration_cap_reports_max_iter(self):
        p = SdpProblem()
        b = p.add_block(3)
        p.add_constraint({b: np.eye(3)}, 1.0)
        p.objective = {b: np.diag([1.0, 2.0, 3.0])}
        sol = solve(p, SolverOptions(max_iter=1))
        self.assertEqual(sol.status, SdpStatus.MAX_ITER)
        self.assertIn("status MaxIter", sol.dump())

    def test_boundary_only_feasible_set(self):
        """X11 = 0 on a 1x1 block leaves only X = 0; the result is projected PSD."""
        p = SdpProblem()
        b = p.add_block(1)
        p.add_constraint({b: np.array([[1.0]])}, 0.0)
        sol = solve(p)
        self.assertEqual(sol.status, SdpStatus.FEASIBLE)
        self.assertGreaterEqual(min(sol.min_eigenvalues()), 0.0)
        self.assertLessEqual(sol.primal_residual, 1e-6)

    def test_rank_deficient_trace_constraint(self):
        """trace(X) = 0 on a 3x3 block pins X to zero without a LinAlgError."""
        p = SdpProblem()
        b = p.add_block(3)
        p.add_constraint({b: np.eye(3)}, 0.0)
        p.add_constraint({b: np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])}, 0.0)
        sol = solve(p)
        self.assertNotEqual(sol.status, SdpStatus.INFEASIBLE)
        self.assertTrue(np.all(np.isfinite(sol.blocks[0])))


def _sym(rng: np.random.Generator, n: int) -> np.ndarray:
    A = rng.normal(size=(n, n))
    return (A + A.T) / 2.0


def _lp_vertices(A: np.ndarray, b: np.ndarray):
    """Basic solutions of ``A x = b, x >= 0`` by enumerating column subsets."""
    m, n = A.shape
    for cols in itertools.combinations(range(n), m):
        sub = A[:, cols]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        xs = np.linalg.solve(sub, b)
        if np.all(xs >= -1e-12):
            x = np.zeros(n)
            x[list(cols)] = xs
            yield x


class RandomInstanceTests(unittest.TestCase):
    """Generated instances with a strictly feasible primal and dual."""

    def test_kkt_residuals(self):
        for seed in range(50):
            with self.subTest(seed=seed):
                rng = np.random.default_rng(seed)
                dims = [int(d) for d in rng.integers(1, 4, size=int(rng.integers(1, 4)))]
                n_rows = int(rng.integers(1, 5))
                p = SdpProblem()
                blocks = [p.add_block(d) for d in dims]
                X0 = []
                for d in dims:
                    G = rng.normal(size=(d, d))
                    X0.append(G @ G.T + np.eye(d))
                y0 = rng.normal(size=n_rows)
                C = []
                for d in dims:
                    H = rng.normal(size=(d, d))
                    C.append(H @ H.T + np.eye(d))
                for i in range(n_rows):
                    coeffs = {b: _sym(rng, d) for b, d in zip(blocks, dims)}
                    rhs = sum(float(np.sum(coeffs[b] * X0[b])) for b in blocks)
                    p.add_constraint(coeffs, rhs)
                    for b in blocks:
                        C[b] = C[b] + y0[i] * coeffs[b]
                p.objective = {b: C[b] for b in blocks}
                sol = solve(p)
                self.assertEqual(sol.status, SdpStatus.FEASIBLE)
                scale = 1.0 + max(abs(c.rhs) for c in p.constraints)
                self.assertLessEqual(sol.primal_residual, 1e-7 * scale)
                self.assertLessEqual(sol.dual_residual, 1e-7)
                self.assertLessEqual(sol.gap, 1e-7)
                self.assertGreaterEqual(min(sol.min_eigenvalues()), -1e-7)
                upper = sum(float(np.sum(C[b] * X0[b])) for b in blocks)
                lower = sum(y0[i] * p.constraints[i].rhs for i in range(n_rows))
                self.assertLessEqual(sol.objective, upper + 1e-6)
                self.assertGreaterEqual(sol.objective, lower - 1e-6)

    def test_diagonal_case_matches_lp_vertices(self):
        """Three 1x1 blocks make the SDP a linear program; the best vertex is the optimum."""
        for seed in range(20):
            with self.subTest(seed=seed):
                rng = np.random.default_rng(100 + seed)
                A = rng.normal(size=(2, 3))
                x0 = rng.uniform(0.5, 2.0, size=3)
                rhs = A @ x0
                c = rng.uniform(0.5, 2.0, size=3)
                p = SdpProblem()
                blocks = [p.add_block(1) for _ in range(3)]
                for i in range(2):
                    p.add_constraint({b: np.array([[A[i, b]]]) for b in blocks}, float(rhs[i]))
                p.objective = {b: np.array([[c[b]]]) for b in blocks}
                best = min(_lp_vertices(A, rhs), key=lambda x: float(c @ x))
                sol = solve(p)
                self.assertEqual(sol.status, SdpStatus.FEASIBLE)
                self.assertAlmostEqual(sol.objective, float(c @ best), delta=1e-6 * (1.0 + abs(float(c @ best))))
                assert_allclose([X[0, 0] for X in sol.blocks], best, atol=1e-5)


class FactorFallbackTests(unittest.TestCase):
    """Scaling helpers survive iterates that lost definiteness."""

    def test_root_of_singular_matrix(self):
        X = np.array([[1.0, 1.0], [1.0, 1.0]])
        L = _root(X)
        assert_allclose(L @ L.T, X, atol=1e-8)

    def test_root_of_slightly_indefinite_matrix(self):
        X = np.diag([2.0, -1e-13])
        L = _root(X)
        self.assertTrue(np.all(np.isfinite(L)))
        assert_allclose(L @ L.T, np.diag([2.0, 0.0]), atol=1e-8)

    def test_nt_scaling_with_singular_primal(self):
        X = np.diag([1.0, 0.0])
        Z = np.array([[2.0, 0.5], [0.5, 1.0]])
        W = _nt_scaling(X, Z)
        self.assertTrue(np.all(np.isfinite(W)))
        assert_allclose(W, W.T, atol=1e-12)
        assert_allclose(W @ Z @ W, X, atol=1e-8)

    def test_nt_scaling_matches_definite_case(self):
        X = np.array([[2.0, 0.3], [0.3, 1.0]])
        Z = np.array([[1.0, -0.2], [-0.2, 3.0]])
        assert_allclose(_nt_scaling(X, Z) @ Z @ _nt_scaling(X, Z), X, atol=1e-10)

    def test_inverse_of_singular_matrix_is_finite(self):
        Zinv = _inverse(np.diag([4.0, 0.0]))
        self.assertTrue(np.all(np.isfinite(Zinv)))
        self.assertAlmostEqual(Zinv[0, 0], 0.25)

    def test_project_psd_clips_negative_part(self):
        P = project_psd(np.diag([1.0, -0.5]))
        assert_allclose(P, np.diag([1.0, 0.0]), atol=1e-14)


class ValidationTests(unittest.TestCase):
    """Malformed problems raise SdpError."""

    def test_non_symmetric_coefficient(self):
        p = SdpProblem()
        b = p.add_block(2)
        p.add_constraint({b: np.array([[1.0, 1.0], [0.0, 1.0]])}, 1.0)
        with self.assertRaises(SdpError):
            solve(p)

    def test_wrong_shape(self):
        p = SdpProblem()
        b = p.add_block(2)
        p.add_constraint({b: np.eye(3)}, 1.0)
        with self.assertRaises(SdpError):
            p.validate()

    def test_zero_dimension_block(self):
        with self.assertRaises(SdpError):
            SdpProblem().add_block(0)

    def test_dump_lists_rows(self):
        p = SdpProblem()
        b = p.add_block(1)
        p.add_constraint({b: np.array([[1.0]])}, 1.0, label="unit")
        text = p.dump()
        self.assertIn("blocks 1", text)
        self.assertIn("unit", text)


if __name__ == "__main__":
    unittest.main()
