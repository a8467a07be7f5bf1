"""Tests for the left inverse and the observer right-hand side."""

import unittest

import numpy as np
from numpy.testing import assert_allclose

from convex_observers.benchmarks import poly19_model, poly19_spec
from convex_observers.model import PolynomialTransformation, SystemModel
from convex_observers.observer import (
    ContractingObserver,
    LeftInverseError,
    NewtonOptions,
    left_inverse,
    newton_inverse,
    observer_rhs,
)
from convex_observers.synth import InverseStrategy, complete_transformation


def _cubic_spec():
    """phi = x + x^3 + y on x' = -x, y' = x."""
    m = SystemModel.polynomial("cubic", ["x"], ["y"], ["-x"], ["x"])
    t = PolynomialTransformation(["x"], ["y"], ["x + x^3 + y"])
    return complete_transformation(m, t, rate=0.5)


class AffineInverseTests(unittest.TestCase):
    """phi = P x + varphi(y)."""

    def setUp(self):
        self.m = poly19_model()
        self.spec = poly19_spec(self.m, P=(0.637, 0.637), varphi=(-2.1872, -0.637))

    def test_round_trip_at_unit_output(self):
        """xi = P (1, 1) + varphi(1) gives back (1, 1)."""
        y = np.array([1.0])
        xi = 0.637 * np.ones(2) + np.array([-2.1872, -0.637])
        assert_allclose(left_inverse(self.spec, xi, y), [1.0, 1.0], atol=1e-12)

    def test_varphi_alone_maps_to_origin(self):
        y = np.array([-3.0])
        xi = self.spec.transformation.varphi(y)
        assert_allclose(left_inverse(self.spec, xi, y), [0.0, 0.0], atol=1e-12)

    def test_rhs_at_exact_state_follows_the_plant(self):
        """f_z(x, y) equals Phi_x f_x + Phi_y f_y along true trajectories."""
        x, y = np.array([0.4, -1.2]), np.array([0.7])
        xi = self.spec.phi(x, y)
        dx, dy = self.m.field(x, y)
        expected = self.spec.transformation.phi_x(x, y) @ dx + self.spec.transformation.phi_y(x, y) @ dy
        assert_allclose(observer_rhs(self.spec, xi, y), expected, atol=1e-10)


class NewtonInverseTests(unittest.TestCase):
    """Strongly monotone non-affine transformations."""

    def test_strategy_chosen_for_polynomial_phi(self):
        self.assertEqual(_cubic_spec().inverse, InverseStrategy.NEWTON)

    def test_recovers_state(self):
        spec = _cubic_spec()
        y = np.array([0.2])
        xi = spec.phi(np.array([0.7]), y)
        assert_allclose(left_inverse(spec, xi, y), [0.7], atol=1e-8)

    def test_cap_reports_history(self):
        spec = _cubic_spec()
        with self.assertRaises(LeftInverseError) as ctx:
            newton_inverse(spec.transformation, np.array([10.0]), np.array([0.0]), opts=NewtonOptions(max_iter=1))
        self.assertEqual(len(ctx.exception.history), 2)
        self.assertLess(ctx.exception.history[1], ctx.exception.history[0])

    def test_observer_warm_starts(self):
        spec = _cubic_spec()
        obs = ContractingObserver(spec)
        y = np.array([0.0])
        first = obs.estimate(spec.phi(np.array([1.5]), y), y)
        second = obs.estimate(spec.phi(np.array([1.5001]), y), y)
        assert_allclose(first, [1.5], atol=1e-8)
        assert_allclose(second, [1.5001], atol=1e-8)
        self.assertLessEqual(obs.last_iterations, 3)


class ObserverStateTests(unittest.TestCase):
    """ContractingObserver bookkeeping."""

    def test_exact_xi_reproduces_state(self):
        spec = poly19_spec()
        obs = ContractingObserver(spec)
        x, y = np.array([3.0, 5.0]), np.array([-4.0])
        state = obs.state(obs.exact_xi(x, y), y)
        assert_allclose(state.x_hat, x, atol=1e-10)
        self.assertIsNone(state.w_hat)
        self.assertEqual(obs.n_xi, 2)


if __name__ == "__main__":
    unittest.main()
