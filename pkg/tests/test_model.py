"""Tests for plant models, domains, inputs and augmentation."""

import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from convex_observers.benchmarks import cartpend_model, poly19_model
from convex_observers.model import (
    AffineTransformation,
    AugmentationError,
    ClosedFormField,
    Domain,
    DomainConstraint,
    DomainError,
    InputSignal,
    ModelError,
    PolynomialField,
    SystemModel,
    augment,
    model_from_dict,
    model_to_dict,
    numeric_jacobian,
)

POLY19 = {
    "name": "poly19",
    "states": ["x1", "x2"],
    "outputs": ["y"],
    "f_x": ["x1 - x1^3/3 - x1*x2^2", "x1 - x2 - x2^3/3 - x2*x1^2"],
    "f_y": ["x1"],
    "domain": {"box": {"x1": [-5, 5], "x2": [-5, 5], "y": [-5, 5]}},
}


def _scalar_plant() -> SystemModel:
    return SystemModel.polynomial(
        "scalar", ["x"], ["y"], ["-x"], ["x"],
        domain=Domain(box={"x": (-2.0, 2.0), "y": (-2.0, 2.0)}),
    )


class InputSignalTests(unittest.TestCase):
    """Signal generators."""

    def test_sinusoid(self):
        u = InputSignal.sinusoid([0.2])
        assert_allclose(u(0.0), [0.2])
        assert_allclose(u(math.pi), [-0.2])

    def test_table_interpolates_and_holds(self):
        u = InputSignal.tabulated([0.0, 1.0], [[0.0], [2.0]])
        assert_allclose(u(0.5), [1.0])
        assert_allclose(u(5.0), [2.0])

    def test_dict_form(self):
        u = InputSignal.from_dict({"kind": "constant", "values": [1.5, -1.0]})
        self.assertEqual(InputSignal.from_dict(u.to_dict()), u)

    def test_unknown_kind(self):
        with self.assertRaises(ModelError):
            InputSignal.from_dict({"kind": "chirp"})

    def test_table_times_must_increase(self):
        with self.assertRaises(ModelError):
            InputSignal.tabulated([1.0, 1.0], [[0.0], [1.0]])


class DomainTests(unittest.TestCase):
    """Boxes, constraints and sampling."""

    def test_parse_constraint(self):
        con = DomainConstraint.parse("0.005 - q > 0")
        self.assertGreater(con.fn({"q": 0.0}), 0.0)
        self.assertLess(con.fn({"q": 0.01}), 0.0)

    def test_non_strict_constraint_reads_as_strict(self):
        con = DomainConstraint.parse("x^2 + y^2 <= 4")
        self.assertGreater(con.fn({"x": 1.0, "y": 1.0}), 0.0)
        self.assertLess(con.fn({"x": 2.0, "y": 1.0}), 0.0)
        self.assertIsNotNone(con.poly)

    def test_constraint_must_be_polynomial(self):
        with self.assertRaises(ModelError):
            DomainConstraint.parse("sin(q) > 0")

    def test_constraint_without_operator(self):
        with self.assertRaises(ModelError):
            DomainConstraint.parse("q + 1")

    def test_samples_respect_constraints(self):
        dom = Domain(box={"q": (-0.1, 0.1)}, constraints=[DomainConstraint.parse("q < 0.005")])
        pts = dom.sample(200, seed=1)
        self.assertEqual(len(pts), 200)
        self.assertTrue(all(p["q"] < 0.005 for p in pts))

    def test_sampling_is_reproducible(self):
        dom = Domain(box={"a": (0.0, 1.0), "b": (-1.0, 1.0)})
        self.assertEqual(dom.sample(20, seed=4), dom.sample(20, seed=4))

    def test_check_names_the_constraint(self):
        dom = Domain(constraints=[DomainConstraint.parse("y > 0")])
        with self.assertRaises(DomainError) as ctx:
            dom.check({"y": -1.0})
        self.assertEqual(ctx.exception.constraint, "y > 0")

    def test_lift_rejects_points(self):
        dom = Domain(box={"a": (-1.0, 1.0)}, lift=lambda p: p if p["a"] > 0 else None)
        self.assertTrue(all(p["a"] > 0 for p in dom.sample(30)))


class SystemModelTests(unittest.TestCase):
    """Polynomial and closed-form plants."""

    def test_jacobian_at_origin(self):
        m = model_from_dict(POLY19)
        jac = m.jacobians([0.0, 0.0], [0.0])
        assert_allclose(jac.fx_x, [[1.0, 0.0], [1.0, -1.0]])
        assert_allclose(jac.fy_x, [[1.0, 0.0]])
        assert_allclose(jac.fy_y, [[0.0]])

    def test_point_outside_domain(self):
        m = SystemModel.polynomial(
            "gap", ["x"], ["q"], ["-x"], ["x"], domain=Domain(constraints=[DomainConstraint.parse("0.005 - q > 0")])
        )
        with self.assertRaises(DomainError):
            m.jacobians([0.0], [0.01])

    def test_unknown_variable_rejected(self):
        with self.assertRaises(ModelError):
            SystemModel.polynomial("bad", ["x"], ["y"], ["z"], ["x"])

    def test_dict_form_keeps_fields(self):
        m = model_from_dict(POLY19)
        again = model_from_dict(model_to_dict(m))
        self.assertEqual(again.x_names, m.x_names)
        fx, _ = again.polynomials()
        self.assertAlmostEqual(fx[1].evaluate({"x1": 1.0, "x2": 1.0}), -4.0 / 3.0)

    def test_missing_key(self):
        with self.assertRaises(ModelError):
            model_from_dict({"states": ["x"], "outputs": ["y"], "f_x": ["x"]})

    def test_closed_form_jacobians_validated(self):
        """A wrong analytic Jacobian is caught against finite differences."""
        fx = ClosedFormField(1, lambda x, y, u: np.sin(x), lambda x, y, u: [[np.cos(x[0])]], lambda x, y, u: [[0.0]], ["x"], ["y"])
        fy = ClosedFormField(1, lambda x, y, u: x, lambda x, y, u: [[1.0]], lambda x, y, u: [[0.0]], ["x"], ["y"])
        dom = Domain(box={"x": (-1.0, 1.0), "y": (-1.0, 1.0)})
        m = SystemModel.closed_form("sine", ["x"], ["y"], fx, fy, domain=dom)
        self.assertEqual(m.n_x, 1)
        bad = ClosedFormField(1, lambda x, y, u: np.sin(x), lambda x, y, u: [[1.0]], lambda x, y, u: [[0.0]], ["x"], ["y"])
        with self.assertRaises(ModelError):
            SystemModel.closed_form("sine", ["x"], ["y"], bad, fy, domain=dom)

    def test_input_width_mismatch_raises(self):
        signal = InputSignal("constant", 1, values=(1.0, 2.0))
        m = SystemModel.polynomial(
            "driven", ["x"], ["y"], ["-x + u"], ["x"], u_names=["u"], input=signal,
            domain=Domain(box={"x": (-2.0, 2.0), "y": (-2.0, 2.0)}),
        )
        with self.assertRaises(ModelError):
            m.u_at(0.0)

    def test_zero_input_fills_every_channel(self):
        m = SystemModel.polynomial(
            "driven", ["x"], ["y"], ["-x + u"], ["x"], u_names=["u"],
            domain=Domain(box={"x": (-2.0, 2.0), "y": (-2.0, 2.0)}),
        )
        assert_allclose(m.u_at(1.0), [0.0])

    def test_benchmark_jacobians_match_finite_differences(self):
        for m in (poly19_model(), cartpend_model()):
            with self.subTest(model=m.name):
                self.assertLessEqual(m.validate_jacobians(n_samples=1000, rel_tol=1e-6), 1e-6)

    def test_numeric_jacobian(self):
        J = numeric_jacobian(lambda v: np.array([v[0] * v[1], v[1] ** 2]), np.array([2.0, 3.0]))
        assert_allclose(J, [[3.0, 2.0], [0.0, 6.0]], atol=1e-6)


class TransformationTests(unittest.TestCase):
    """Affine coordinate changes."""

    def test_affine_phi_and_jacobians(self):
        t = AffineTransformation(["x1", "x2"], ["y"], np.diag([0.637, 0.637]), ["-2.1872*y", "-0.637*y"])
        assert_allclose(t.phi([1.0, 1.0], [1.0]), [0.637 - 2.1872, 0.0])
        assert_allclose(t.phi_x([0.0, 0.0], [0.0]), np.diag([0.637, 0.637]))
        assert_allclose(t.phi_y([0.0, 0.0], [2.0]), [[-2.1872], [-0.637]])

    def test_varphi_may_not_use_states(self):
        with self.assertRaises(ModelError):
            AffineTransformation(["x"], ["y"], np.eye(1), ["x*y"])


class AugmentTests(unittest.TestCase):
    """Auxiliary dynamics with a contraction witness."""

    def test_stable_augmentation_accepted(self):
        m = _scalar_plant()
        f_w = PolynomialField(["-w + y"], ["x", "w"], ["y"])
        am = augment(m, f_w, np.eye(1), 1.0, w_box={"w": (-3.0, 3.0)}, n_samples=50)
        self.assertEqual(am.w_names, ("w",))
        self.assertLessEqual(am.worst_margin, 1e-8)
        ext = am.extended()
        self.assertEqual(ext.x_names, ("x", "w"))
        dx, _ = ext.field(np.array([1.0, 0.5]), np.array([2.0]))
        assert_allclose(dx, [-1.0, 1.5])

    def test_expansive_augmentation_rejected(self):
        m = _scalar_plant()
        f_w = PolynomialField(["w"], ["x", "w"], ["y"])
        with self.assertRaises(AugmentationError) as ctx:
            augment(m, f_w, np.eye(1), 0.5, n_samples=20)
        self.assertGreater(ctx.exception.eigenvalue, 0.0)

    def test_metric_shape_checked(self):
        m = _scalar_plant()
        f_w = PolynomialField(["-w"], ["x", "w"], ["y"])
        with self.assertRaises(ModelError):
            augment(m, f_w, np.eye(2), 1.0)


if __name__ == "__main__":
    unittest.main()
