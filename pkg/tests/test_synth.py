"""Tests for observer synthesis and the closed-form constructions."""

import unittest

import numpy as np
from numpy.testing import assert_allclose

from convex_observers.benchmarks import lti_model, poly19_model
from convex_observers.model import Domain, PolynomialField, SystemModel, augment
from convex_observers.poly import Polynomial, lie_derivative
from convex_observers.sdp import SdpStatus
from convex_observers.sos import BilinearError
from convex_observers.synth import (
    InverseStrategy,
    SynthesisConfig,
    SynthesisError,
    build_correctness,
    complete_affine,
    lti_spec,
    parameterize,
    rate_sweep,
    sdo_transform,
    synthesize,
    synthesize_immersed,
)
from convex_observers.verify import CheckStatus, check_A2, check_H1, check_H2, check_H3


def _stable_scalar() -> SystemModel:
    """x' = -x, y' = x."""
    return SystemModel.polynomial(
        "stable", ["x"], ["y"], ["-x"], ["x"], domain=Domain(box={"x": (-2.0, 2.0), "y": (-2.0, 2.0)})
    )


def _slow_hidden_mode() -> SystemModel:
    """x' = -x never reaches the output, so no observer beats rate 1."""
    return SystemModel.polynomial(
        "hidden", ["x"], ["y"], ["-x"], ["-y"], domain=Domain(box={"x": (-1.0, 1.0), "y": (-1.0, 1.0)})
    )


def _unobservable() -> SystemModel:
    """x' = x with an output that never sees x."""
    return SystemModel.polynomial(
        "toy", ["x"], ["y"], ["x"], ["-y"], domain=Domain(box={"x": (-1.0, 1.0), "y": (-1.0, 1.0)})
    )


def _linear_cfg(**kwargs) -> SynthesisConfig:
    return SynthesisConfig(phi_degree=1, fz_degree=1, **kwargs)


class ConfigTests(unittest.TestCase):
    """SynthesisConfig validation."""

    def test_unknown_mode(self):
        with self.assertRaises(SynthesisError):
            SynthesisConfig(mode="h5").validate()

    def test_negative_rate(self):
        with self.assertRaises(SynthesisError):
            SynthesisConfig(rate=-1.0).validate()

    def test_margin_must_be_positive(self):
        with self.assertRaises(SynthesisError):
            SynthesisConfig(margin=0.0).validate()

    def test_output_metric_needs_h3(self):
        with self.assertRaises(SynthesisError):
            SynthesisConfig(mode="h4", y_dependent_metric=True).validate()


class CorrectnessTests(unittest.TestCase):
    """Coefficient matching between phi and f_z."""

    def test_rows_cover_every_monomial(self):
        m = poly19_model()
        param = parameterize(m, SynthesisConfig())
        system = build_correctness(m, param)
        self.assertGreater(system.rows, 0)
        self.assertEqual(system.A.shape, (system.rows, len(param.theta)))

    def test_small_fz_basis_rejected(self):
        """A linear f_z template cannot hold the cubic terms of poly19."""
        m = poly19_model()
        with self.assertRaises(SynthesisError) as ctx:
            build_correctness(m, parameterize(m, SynthesisConfig(fz_degree=1)))
        self.assertIn("uncovered", str(ctx.exception))

    def test_closed_form_residual_vanishes(self):
        m = poly19_model()
        y = Polynomial.variable("y")
        spec = complete_affine(m, np.diag([0.637, 0.637]), [y * -2.1872, y * -0.637], rate=1.0)
        report = check_H2(spec, m, n_samples=100)
        self.assertTrue(report.passed)
        self.assertEqual(spec.inverse, InverseStrategy.AFFINE)
        assert_allclose(spec.M(np.zeros(2), np.zeros(1)), np.eye(2) / 0.637)


class SynthesizeTests(unittest.TestCase):
    """End-to-end SOS synthesis."""

    def test_poly19_feasible_below_unit_rate(self):
        m = poly19_model()
        result = synthesize(m, SynthesisConfig(phi_degree=2, fz_degree=3, rate=0.5, margin=0.1))
        self.assertEqual(result.status, SdpStatus.FEASIBLE)
        spec = result.spec
        self.assertIsNotNone(spec)
        self.assertGreater(np.linalg.eigvalsh(spec.certificate_P)[0], 0.1 - 1e-6)
        for check in (check_H1, check_H2, check_H3):
            self.assertTrue(check(spec, m, n_samples=200).passed, check.__name__)
        self.assertIn("H3", result.margins)
        self.assertEqual(result.stats["decisions"], len(result.theta_labels))

    def test_unobservable_plant_infeasible(self):
        result = synthesize(_unobservable(), _linear_cfg(rate=0.1, bisect=False))
        self.assertEqual(result.status, SdpStatus.INFEASIBLE)
        self.assertIsNone(result.spec)
        self.assertTrue(result.certificate is not None or result.reason)

    def test_bisection_finds_nothing_for_unobservable_plant(self):
        result = synthesize(_unobservable(), _linear_cfg(rate=1.0, bisect=True, bisect_steps=3))
        self.assertFalse(result.feasible)
        self.assertIsNone(result.largest_feasible_rate)

    def test_infeasible_rate_reports_largest_feasible_by_default(self):
        result = synthesize(_slow_hidden_mode(), _linear_cfg(rate=2.0, bisect_steps=6))
        self.assertFalse(result.feasible)
        self.assertIsNotNone(result.largest_feasible_rate)
        self.assertGreater(result.largest_feasible_rate, 0.5)
        self.assertLessEqual(result.largest_feasible_rate, 1.05)

    def test_no_bisect_leaves_largest_rate_unset(self):
        result = synthesize(_slow_hidden_mode(), _linear_cfg(rate=2.0, bisect=False))
        self.assertFalse(result.feasible)
        self.assertIsNone(result.largest_feasible_rate)

    def test_poly19_feasible_at_unit_rate(self):
        """The shipped benchmark settings: cubic f_z, quadratic phi, rate 1."""
        m = poly19_model()
        result = synthesize(m, SynthesisConfig(phi_degree=2, fz_degree=3, rate=1.0, margin=0.1))
        self.assertEqual(result.status, SdpStatus.FEASIBLE)
        spec = result.spec
        self.assertIsNotNone(spec)
        self.assertTrue(check_H1(spec, m, n_samples=200, margin=0.1).passed)
        self.assertTrue(check_H2(spec, m, n_samples=200).passed)
        a2 = check_A2(spec, m, n_samples=200)
        self.assertNotEqual(a2.status, CheckStatus.FAIL)
        self.assertLessEqual(a2.worst_margin, 1e-6)

    def test_rate_sweep_on_stable_plant(self):
        verdicts = rate_sweep(_stable_scalar(), _linear_cfg(), [0.5, 2.0, 8.0])
        self.assertEqual([status for _, status in verdicts], [SdpStatus.FEASIBLE] * 3)

    def test_feasible_rates_form_an_interval(self):
        """Once a rate is infeasible every larger rate on the grid is too."""
        verdicts = rate_sweep(_slow_hidden_mode(), _linear_cfg(), [0.25, 0.5, 1.0, 1.5, 3.0])
        feasible = [status == SdpStatus.FEASIBLE for _, status in verdicts]
        self.assertTrue(feasible[0])
        self.assertFalse(feasible[-1])
        first_miss = feasible.index(False)
        self.assertFalse(any(feasible[first_miss:]))

    def test_synthesis_is_deterministic(self):
        cfg = _linear_cfg(rate=0.5)
        a = synthesize(_stable_scalar(), cfg)
        b = synthesize(_stable_scalar(), cfg)
        self.assertEqual(a.theta_labels, b.theta_labels)
        assert_allclose(a.spec.certificate_P, b.spec.certificate_P, rtol=0, atol=0)

    def test_schur_mode(self):
        result = synthesize(_stable_scalar(), _linear_cfg(rate=0.5, mode="h4"))
        self.assertTrue(result.feasible)
        self.assertIsNotNone(result.r)
        self.assertEqual(result.spec.mode, "h4")

    def test_non_polynomial_model_rejected(self):
        from convex_observers.benchmarks import cartpend_model

        with self.assertRaises(SynthesisError):
            synthesize(cartpend_model(), SynthesisConfig())


class ImmersionTests(unittest.TestCase):
    """Synthesis over the extended state."""

    def setUp(self):
        m = _stable_scalar()
        f_w = PolynomialField(["-w + y"], ["x", "w"], ["y"])
        self.am = augment(m, f_w, np.eye(1), 1.0, w_box={"w": (-3.0, 3.0)}, n_samples=50)

    def test_extended_synthesis(self):
        result = synthesize_immersed(self.am, _linear_cfg(rate=0.5))
        self.assertTrue(result.feasible)
        self.assertTrue(result.spec.is_augmented)
        self.assertEqual(result.spec.augmentation.w_names, ("w",))
        self.assertEqual(result.spec.dim, 2)

    def test_template_unknowns_are_bilinear(self):
        with self.assertRaises(BilinearError):
            synthesize_immersed(self.am, _linear_cfg(), f_w_template=["c*w + y"], template_params=["c"])


class SdoTests(unittest.TestCase):
    """Coordinates from Lie derivatives of the output."""

    def setUp(self):
        self.m = SystemModel.polynomial("osc", ["x1", "x2"], ["y"], ["x2", "-x1 - y^3"], ["x1"])

    def test_fz_matches_lie_derivative(self):
        sdo = sdo_transform(self.m, gain=2.0, Lambda=[3.0, 2.0])
        fx, fy = self.m.polynomials()
        names = self.m.x_names + self.m.y_names
        for phi_i, fz_i in zip(sdo.transformation.polys, sdo.f_z):
            self.assertTrue(lie_derivative(phi_i, fx + fy, names).allclose(fz_i, tol=1e-9))

    def test_non_hurwitz_rejected(self):
        with self.assertRaises(SynthesisError):
            sdo_transform(self.m, gain=1.0, Lambda=[-1.0, 2.0])

    def test_wrong_length(self):
        with self.assertRaises(SynthesisError):
            sdo_transform(self.m, gain=1.0, Lambda=[1.0])

    def test_gain_must_be_positive(self):
        with self.assertRaises(SynthesisError):
            sdo_transform(self.m, gain=0.0, Lambda=[3.0, 2.0])


class LuenbergerTests(unittest.TestCase):
    """Reduced-order observers for linear plants."""

    def setUp(self):
        # x' = y, y' = -x - y
        self.m = lti_model(np.array([[0.0, 1.0], [-1.0, -1.0]]), n_x=1)

    def test_rate_from_lyapunov_metric(self):
        """A11 + L A21 = -1 gives M = 1/2 and rate 1."""
        spec = lti_spec(self.m, np.array([[1.0]]))
        self.assertAlmostEqual(spec.rate, 1.0, places=8)
        self.assertEqual(spec.metadata["gain"], [[1.0]])

    def test_unstable_gain_rejected(self):
        with self.assertRaises(SynthesisError):
            lti_spec(self.m, np.array([[-1.0]]))


if __name__ == "__main__":
    unittest.main()
