"""Tests for the simulator and the decay-rate fit."""

import math
import unittest
from dataclasses import replace

import numpy as np
from numpy.testing import assert_allclose

from convex_observers.benchmarks import poly19_model, poly19_spec
from convex_observers.model import Domain, SystemModel
from convex_observers.sim import (
    FitError,
    SimConfig,
    SimulationError,
    fit_decay,
    fit_rate,
    paired_run,
    simulate,
    simulate_many,
)
from convex_observers.synth import complete_affine


class FitTests(unittest.TestCase):
    """Log-linear decay fits."""

    def test_exponential_rate(self):
        t = np.linspace(0.0, 3.0, 301)
        fit = fit_decay(t, 4.0 * np.exp(-2.0 * t))
        self.assertAlmostEqual(fit.rate, 2.0, places=8)
        self.assertAlmostEqual(fit.intercept, math.log(4.0), places=8)
        self.assertGreater(fit.r_squared, 0.999999)

    def test_window_restricts_points(self):
        t = np.linspace(0.0, 4.0, 401)
        values = np.where(t < 2.0, np.exp(-t), np.exp(-2.0) * np.exp(-3.0 * (t - 2.0)))
        self.assertAlmostEqual(fit_decay(t, values, window=(2.0, 4.0)).rate, 3.0, places=6)

    def test_values_at_floor(self):
        t = np.linspace(0.0, 1.0, 10)
        with self.assertRaises(FitError):
            fit_decay(t, np.zeros_like(t))


class ConfigTests(unittest.TestCase):
    """SimConfig validation."""

    def test_noise_period_shorter_than_step(self):
        with self.assertRaises(SimulationError):
            SimConfig(h=1e-2, noise_period=1e-3).validate()

    def test_non_positive_horizon(self):
        with self.assertRaises(SimulationError):
            SimConfig(T=0.0).validate()

    def test_step_count(self):
        self.assertEqual(SimConfig(h=1e-3, T=2.0).steps, 2000)


class Poly19SimulationTests(unittest.TestCase):
    """Plant and observer on the two-state polynomial example."""

    def setUp(self):
        self.m = poly19_model()
        self.spec = poly19_spec(self.m)
        self.cfg = SimConfig(h=1e-3, T=1.0, x0=(3.0, 5.0), y0=(-4.0,), xi0=(0.0, 0.0))

    def test_exact_start_stays_exact(self):
        xi0 = self.spec.phi(np.array([3.0, 5.0]), np.array([-4.0]))
        traj = simulate(self.m, self.spec, replace(self.cfg, xi0=xi0))
        self.assertFalse(traj.exited)
        self.assertLess(float(np.max(traj.err)), 1e-6)

    def test_error_decays(self):
        traj = simulate(self.m, self.spec, replace(self.cfg, T=5.0, stride=10))
        self.assertEqual(len(traj), 501)
        self.assertLess(traj.err[-1], traj.err[0] * math.exp(-2.0))
        self.assertGreater(fit_rate(traj, (0.0, 3.0)).rate, 0.5)

    def test_noise_is_reproducible(self):
        cfg = replace(self.cfg, T=0.1, noise=0.02, noise_period=1e-3, seed=7)
        a = simulate(self.m, self.spec, cfg)
        b = simulate(self.m, self.spec, cfg)
        c = simulate(self.m, self.spec, replace(cfg, seed=8))
        assert_allclose(a.y_noisy, b.y_noisy)
        self.assertFalse(np.allclose(a.y_noisy, c.y_noisy))
        self.assertLessEqual(float(np.max(np.abs(a.y_noisy - a.y))), 0.02)

    def test_noise_is_held_between_samples(self):
        cfg = replace(self.cfg, T=0.05, noise=0.02, noise_period=1e-2)
        traj = simulate(self.m, self.spec, cfg)
        eta = (traj.y_noisy - traj.y)[:10, 0]
        assert_allclose(eta, np.full(10, eta[0]))

    def test_wrong_initial_size(self):
        with self.assertRaises(SimulationError):
            simulate(self.m, self.spec, replace(self.cfg, x0=(1.0,)))

    def test_initial_point_outside_box(self):
        with self.assertRaises(SimulationError):
            simulate(self.m, self.spec, replace(self.cfg, x0=(6.0, 0.0)))

    def test_paired_copies_contract(self):
        cfg = replace(self.cfg, T=4.0, noise=0.02, noise_period=1e-3)
        run = paired_run(self.m, self.spec, cfg, xi0_other=(2.0, -2.0))
        self.assertLess(run.distance[-1], 0.1 * run.distance[0])

    def test_many_runs(self):
        configs = [replace(self.cfg, T=0.1, noise=0.01, seed=k) for k in range(3)]
        trajs = simulate_many(self.m, [self.spec] * 3, configs, jobs=2)
        self.assertEqual(len(trajs), 3)
        self.assertFalse(np.allclose(trajs[0].y_noisy, trajs[1].y_noisy))

    def test_config_count_must_match(self):
        with self.assertRaises(SimulationError):
            simulate_many(self.m, [self.spec], [self.cfg, self.cfg])


class StepSizeTests(unittest.TestCase):
    """RK4 accuracy on the noise-free polynomial example."""

    def setUp(self):
        self.m = poly19_model()
        self.spec = poly19_spec(self.m)
        xi0 = self.spec.phi(np.array([3.0, 5.0]), np.array([-4.0])) + 0.5
        self.cfg = SimConfig(T=1.0, x0=(3.0, 5.0), y0=(-4.0,), xi0=xi0)

    def _terminal(self, h: float) -> np.ndarray:
        traj = simulate(self.m, self.spec, replace(self.cfg, h=h))
        self.assertAlmostEqual(float(traj.times[-1]), 1.0)
        return np.concatenate([traj.x[-1], traj.y[-1], traj.xi[-1]])

    def test_observed_order(self):
        reference = self._terminal(0.005 / 8)
        coarse = np.linalg.norm(self._terminal(0.005) - reference)
        fine = np.linalg.norm(self._terminal(0.0025) - reference)
        self.assertGreaterEqual(math.log2(coarse / fine), 3.5)

    def test_halving_step_barely_moves_terminal_state(self):
        diff = np.linalg.norm(self._terminal(1e-3) - self._terminal(5e-4))
        self.assertLess(diff, 1e-6)


class DomainExitTests(unittest.TestCase):
    """Leaving the domain truncates the run."""

    def test_growing_plant_exits(self):
        m = SystemModel.polynomial(
            "growth", ["x"], ["y"], ["x"], ["x"], domain=Domain(box={"x": (-1.0, 1.0), "y": (-5.0, 5.0)})
        )
        spec = complete_affine(m, np.eye(1), ["-3*y"])
        traj = simulate(m, spec, SimConfig(h=1e-2, T=5.0, x0=(0.5,), y0=(0.0,)))
        self.assertTrue(traj.exited)
        self.assertTrue(traj.exit_reason.startswith("left domain"))
        self.assertLess(traj.times[-1], 1.0)


if __name__ == "__main__":
    unittest.main()
