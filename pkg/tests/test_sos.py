"""Tests for the SOS compiler."""

import unittest

import numpy as np
from numpy.testing import assert_allclose

from convex_observers.poly import PolyMatrix, Polynomial
from convex_observers.sdp import SdpStatus
from convex_observers.sos import (
    BilinearError,
    MonomialBasis,
    SosCompileError,
    SosProgram,
    check_sos,
    compile_matrix,
    compile_scalar,
    gram_polynomial,
)


class ScalarTests(unittest.TestCase):
    """Fixed polynomials."""

    def test_perfect_square(self):
        """(x + y)^2 has Gram [[1, 1], [1, 1]] on {x, y}."""
        res = check_sos(Polynomial.parse("x^2 + 2*x*y + y^2"))
        self.assertEqual(res.status, SdpStatus.FEASIBLE)
        G = res.grams["subject"]
        basis = res.bases["subject"]
        self.assertTrue(gram_polynomial(basis, G).allclose(Polynomial.parse("x^2 + 2*x*y + y^2"), tol=1e-6))
        assert_allclose(G, np.ones((2, 2)), atol=1e-5)

    def test_motzkin_is_not_sos(self):
        res = check_sos(Polynomial.parse("x^4*y^2 + x^2*y^4 - 3*x^2*y^2 + 1"))
        self.assertEqual(res.status, SdpStatus.INFEASIBLE)
        self.assertTrue(res.certificate is not None or res.reason)

    def test_random_gram_forms_are_sos(self):
        """v^T G v with G positive definite on v = (1, x, y, x^2, xy, y^2)."""
        x, y = Polynomial.variable("x"), Polynomial.variable("y")
        v = [Polynomial.constant(1.0), x, y, x * x, x * y, y * y]
        for seed in range(20):
            with self.subTest(seed=seed):
                rng = np.random.default_rng(seed)
                L = rng.normal(size=(6, 6))
                G = L @ L.T + 0.1 * np.eye(6)
                p = Polynomial.zero()
                for i in range(6):
                    for j in range(6):
                        p = p + (v[i] * v[j]).scale(float(G[i, j]))
                res = check_sos(p)
                self.assertEqual(res.status, SdpStatus.FEASIBLE)
                found = gram_polynomial(res.bases["subject"], res.grams["subject"])
                self.assertTrue(found.allclose(p, tol=1e-5 * (1.0 + p.max_abs_coefficient())))

    def test_odd_degree_rejected(self):
        with self.assertRaises(SosCompileError):
            compile_scalar(Polynomial.parse("x^3 + 1"))

    def test_degree_overflow_names_monomial(self):
        with self.assertRaises(SosCompileError) as ctx:
            compile_scalar(Polynomial.parse("x^4 + 1"), degree=1)
        self.assertIn("x^4", str(ctx.exception))

    def test_bilinear_rejected(self):
        with self.assertRaises(BilinearError):
            compile_scalar(Polynomial.parse("a*b*x^2 + 1"), decision_vars=("a", "b"))


class MatrixTests(unittest.TestCase):
    """Matrix inequalities."""

    def test_negative_identity_is_nsd(self):
        prog = SosProgram()
        prog.add_matrix_sos(PolyMatrix.constant(-np.eye(2)), sense="nsd", label="S")
        self.assertTrue(prog.solve().feasible)

    def test_indefinite_diagonal_fails(self):
        """diag(x^2, -1) is not negative semidefinite."""
        x = Polynomial.variable("x")
        prog = SosProgram()
        prog.add_matrix_sos(PolyMatrix([[x ** 2, 0.0], [0.0, -1.0]]), sense="nsd", label="S")
        self.assertEqual(prog.solve().status, SdpStatus.INFEASIBLE)

    def test_asymmetric_matrix_rejected(self):
        with self.assertRaises(SosCompileError):
            compile_matrix(PolyMatrix([[1.0, 2.0], [0.0, 1.0]]))

    def test_monotone_block_from_constant_metric(self):
        """2P - kI with P = diag(0.6370, 0.6369), k = 0.1 is positive definite."""
        P = np.diag([0.6370, 0.6369])
        prog = SosProgram()
        prog.add_matrix_sos(PolyMatrix.constant(2 * P - 0.1 * np.eye(2)), sense="psd", label="H1")
        self.assertTrue(prog.solve().feasible)


class ProgramTests(unittest.TestCase):
    """Decision variables shared across constraints."""

    def test_linear_equality_fixes_coefficient(self):
        """a*x^2 + 1 SOS with a = 2 forced by a linear row."""
        prog = SosProgram(("a",))
        prog.add_sos(Polynomial.parse("a*x^2 + 1"), label="p")
        prog.add_linear({"a": 1.0}, 2.0, label="fix")
        res = prog.solve()
        self.assertTrue(res.feasible)
        self.assertAlmostEqual(res.theta["a"], 2.0, places=6)
        self.assertTrue(res.substitute(Polynomial.parse("a*x")).allclose(Polynomial.parse("2*x"), tol=1e-6))

    def test_negative_coefficient_forced_is_infeasible(self):
        prog = SosProgram(("a",))
        prog.add_sos(Polynomial.parse("a*x^2 + 1"), label="p")
        prog.add_linear({"a": 1.0}, -1.0)
        self.assertEqual(prog.solve().status, SdpStatus.INFEASIBLE)

    def test_unknown_decision_in_linear_row(self):
        prog = SosProgram(("a",))
        with self.assertRaises(SosCompileError):
            prog.add_linear({"b": 1.0}, 0.0)

    def test_basis_sizes(self):
        self.assertEqual(len(MonomialBasis.up_to(["x", "y"], 2).monomials()), 6)


if __name__ == "__main__":
    unittest.main()
