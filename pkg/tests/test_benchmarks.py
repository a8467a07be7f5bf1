"""Tests for the four reference benchmarks."""

import math
import unittest
from dataclasses import replace

import numpy as np
from numpy.testing import assert_allclose

from convex_observers.benchmarks import (
    BENCHMARKS,
    DEFAULT_PARAMS,
    BenchmarkError,
    HgoParams,
    HighGainReactorObserver,
    UnknownBenchmarkError,
    benchmark,
    hgo_reactor_rhs,
    reactor_identity,
    reactor_model,
    reactor_root,
    run_benchmark_checks,
    simulation_summary,
)
from convex_observers.sim import SimConfig, simulate
from convex_observers.verify import CheckStatus, overall_status


class RegistryTests(unittest.TestCase):
    """Lookup and parameter handling."""

    def test_names(self):
        self.assertEqual(sorted(BENCHMARKS), ["cartpend", "maglev", "poly19", "reactor"])
        self.assertEqual(sorted(DEFAULT_PARAMS), sorted(BENCHMARKS))

    def test_unknown_name(self):
        with self.assertRaises(UnknownBenchmarkError):
            benchmark("pendulum")

    def test_unknown_parameter(self):
        with self.assertRaises(BenchmarkError) as ctx:
            benchmark("maglev", {"mass": 1.0})
        self.assertIn("mass", str(ctx.exception))

    def test_override_is_recorded(self):
        bench = benchmark("cartpend", {"rate": 2.0})
        self.assertEqual(bench.params["rate"], 2.0)
        self.assertEqual(bench.spec.rate, 2.0)
        self.assertEqual(bench.spec.metadata["benchmark"], {"name": "cartpend", "params": bench.params})

    def test_non_positive_rate_rejected(self):
        with self.assertRaises(BenchmarkError):
            benchmark("cartpend", {"rate": 0.0})


class CheckTests(unittest.TestCase):
    """Reference observers against their certificates."""

    def test_poly19_reference_is_boundary(self):
        reports = run_benchmark_checks(benchmark("poly19"), n_samples=200)
        self.assertEqual([r.condition for r in reports], ["reference/H1", "reference/H2", "reference/H3", "reference/A2"])
        self.assertEqual(overall_status(reports), CheckStatus.BOUNDARY)

    def test_maglev_steps(self):
        reports = {r.condition: r for r in run_benchmark_checks(benchmark("maglev"), n_samples=200)}
        for name in ("flux step/H1", "flux step/H2", "flux step/H3", "momentum step/H2", "cascade/H2"):
            self.assertTrue(reports[name].passed, name)
        self.assertEqual(reports["momentum step/H3"].status, CheckStatus.BOUNDARY)

    def test_cartpend_includes_pde(self):
        reports = run_benchmark_checks(benchmark("cartpend"), n_samples=200)
        self.assertEqual(reports[-1].condition, "PDE")
        self.assertEqual(reports[-1].status, CheckStatus.PASS)
        self.assertNotEqual(overall_status(reports), CheckStatus.FAIL)

    def test_reactor_on_manifold(self):
        reports = run_benchmark_checks(benchmark("reactor"), n_samples=200)
        by_name = {r.condition: r for r in reports}
        self.assertTrue(by_name["immersion/H1"].passed)
        self.assertTrue(by_name["immersion/H2"].passed)
        self.assertIn("SDM", by_name)


class ReactorTests(unittest.TestCase):
    """Auxiliary states, the quadratic root and the high-gain baseline."""

    def setUp(self):
        self.bench = benchmark("reactor")

    def test_minus_root_recovers_sum(self):
        x0, y0 = self.bench.sim.x0[0], self.bench.sim.y0[0]
        r, _, _ = reactor_root(np.array(self.bench.exact_w0), y0)
        self.assertAlmostEqual(r, x0 + y0, places=12)
        self.assertAlmostEqual(reactor_identity(x0, y0, self.bench.exact_w0), 0.0, places=12)

    def test_identity_is_invariant(self):
        cfg = replace(self.bench.sim, T=2.0, w0=self.bench.exact_w0, xi0=self.bench.exact_xi0())
        traj = simulate(self.bench.model, self.bench.spec, cfg)
        self.assertFalse(traj.exited)
        self.assertLess(abs(reactor_identity(traj.x[-1, 0], traj.y[-1, 0], traj.w[-1])), 1e-6)
        self.assertLess(float(np.max(traj.err)), 1e-5)

    def test_root_reads_tiny_negative_discriminant_as_zero(self):
        r, grad_w, grad_y = reactor_root(np.array([0.0, 0.0, 1.25e-10]), 1.0)
        self.assertEqual(r, 0.0)
        self.assertTrue(np.all(np.isfinite(grad_w)))
        self.assertTrue(math.isfinite(grad_y))

    def test_root_rejects_negative_discriminant(self):
        """disc = -4 ln 2 signals auxiliary states off the invariant manifold."""
        with self.assertRaises(BenchmarkError) as ctx:
            reactor_root(np.zeros(3), 2.0)
        self.assertIn("discriminant", str(ctx.exception))

    def test_hgo_converges_without_noise(self):
        cfg = SimConfig(h=1e-3, T=20.0, x0=self.bench.sim.x0, y0=self.bench.sim.y0, xi0=self.bench.expected["hgo_xi0"])
        traj = simulate(reactor_model(), HighGainReactorObserver(), cfg)
        self.assertFalse(traj.exited)
        self.assertLess(float(traj.err[-1]), 0.05)
        self.assertLess(traj.rms_error(15.0), 0.05)

    def test_hgo_is_more_noise_sensitive(self):
        noise = 0.005
        contracting = simulate(
            self.bench.model, self.bench.spec, replace(self.bench.sim, w0=self.bench.exact_w0, noise=noise, seed=3)
        )
        cfg = SimConfig(
            h=1e-3, T=20.0, x0=self.bench.sim.x0, y0=self.bench.sim.y0,
            xi0=self.bench.expected["hgo_xi0"], noise=noise, seed=3,
        )
        hgo = simulate(reactor_model(), HighGainReactorObserver(), cfg)
        self.assertFalse(contracting.exited)
        self.assertGreater(hgo.rms_error(10.0), contracting.rms_error(10.0))

    def test_hgo_branches(self):
        prm = HgoParams()
        self.assertEqual(hgo_reactor_rhs([0.0, 0.5, -1.0], 1.0, prm).branch, "clamp")
        self.assertEqual(hgo_reactor_rhs([0.0, 0.15, -1.0], 1.0, prm).branch, "shaped")
        self.assertEqual(hgo_reactor_rhs([0.0, 0.0, 0.0], 1.0, prm).branch, "degenerate")
        step = hgo_reactor_rhs([0.0, 0.5, 0.25], 1.0, prm)
        self.assertEqual(step.branch, "ratio")
        self.assertAlmostEqual(step.x_hat, 0.25)

    def test_hgo_saturates_third_channel(self):
        """With y matching xi1 the output injection vanishes and only the clipped term is left."""
        step = hgo_reactor_rhs([0.0, 2.0, -5.0], 1.0)
        self.assertGreaterEqual(step.dxi[2], HgoParams().sat_low)
        self.assertLessEqual(step.dxi[2], HgoParams().sat_high)

    def test_hgo_counts_branches(self):
        obs = HighGainReactorObserver()
        obs.rhs(np.array([0.0, 0.5, -1.0]), np.array([1.0]), np.zeros(0))
        obs.rhs(np.array([0.0, 0.5, 0.25]), np.array([1.0]), np.zeros(0))
        self.assertEqual(obs.branches, {"clamp": 1, "ratio": 1})
        assert_allclose(obs.estimate(np.array([0.0, 0.5, -1.0]), np.array([1.0])), [1.0])


class SummaryTests(unittest.TestCase):
    """Simulation summaries against expected values."""

    def test_poly19_summary(self):
        bench = benchmark("poly19", {"noise": 0.0})
        traj = simulate(bench.model, bench.spec, replace(bench.sim, T=1.0, h=1e-2))
        summary = simulation_summary(bench, traj)
        self.assertAlmostEqual(summary["final_time"], 1.0)
        self.assertIsNone(summary["exit_reason"])
        for key in ("final_error", "post_transient_rms", "fitted_rate", "final_error_ok", "post_transient_rms_ok"):
            self.assertIn(key, summary)
        self.assertFalse(math.isnan(summary["final_error"]))


if __name__ == "__main__":
    unittest.main()
