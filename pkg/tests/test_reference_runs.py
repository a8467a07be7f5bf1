"""Long simulations of the four benchmarks against their reference behaviour.

These runs integrate for several seconds at the default step, so they are the
slowest tests in the suite.
"""

import math
import unittest
from dataclasses import replace

import numpy as np

from convex_observers.benchmarks import benchmark, reactor_identity
from convex_observers.sim import fit_decay, fit_rate, paired_run, simulate


def _time_to_reach(traj, level: float) -> float:
    below = np.nonzero(traj.err < level)[0]
    if below.size == 0:
        return math.inf
    return float(traj.times[below[0]])


class Poly19RunTests(unittest.TestCase):
    """Two-state polynomial plant with the shipped reference observer."""

    def test_noisy_run_settles(self):
        """Output noise of 0.02 held for 1 ms; the error is dominated by the noise passed through varphi."""
        bench = benchmark("poly19")
        traj = simulate(bench.model, bench.spec, bench.sim)
        self.assertFalse(traj.exited)
        self.assertLess(traj.rms_error(bench.expected["transient"]), bench.expected["post_transient_rms"])
        last_second = traj.err[traj.window(bench.sim.T - 1.0)]
        self.assertLess(float(np.mean(last_second)), bench.expected["final_error"])

    def test_noise_free_run_converges(self):
        bench = benchmark("poly19", {"noise": 0.0})
        traj = simulate(bench.model, bench.spec, bench.sim)
        self.assertLess(float(traj.err[-1]), 1e-2)

    def test_paired_copies_contract_at_rate(self):
        bench = benchmark("poly19", {"noise": 0.0})
        run = paired_run(bench.model, bench.spec, replace(bench.sim, T=5.0), xi0_other=(2.0, -2.0))
        fit = fit_decay(run.times, run.distance, window=(0.0, 5.0))
        self.assertGreaterEqual(fit.rate, 0.9 * bench.spec.rate)


class InvarianceTests(unittest.TestCase):
    """An observer started on the plant's image stays on it."""

    def _exact_run(self, name: str):
        bench = benchmark(name)
        cfg = replace(bench.sim, T=2.0, noise=0.0, xi0=bench.exact_xi0())
        if bench.exact_w0 is not None:
            cfg = replace(cfg, w0=bench.exact_w0)
        return simulate(bench.model, bench.spec, cfg)

    def test_every_benchmark(self):
        for name in ("poly19", "maglev", "cartpend", "reactor"):
            with self.subTest(benchmark=name):
                traj = self._exact_run(name)
                self.assertFalse(traj.exited)
                self.assertLessEqual(float(np.max(traj.err)), 1e-6)


class CartpendRunTests(unittest.TestCase):
    """The cart-pendulum error obeys e' = -rate e exactly."""

    def _run(self, rate: float, T: float = 10.0):
        bench = benchmark("cartpend", {"rate": rate})
        return simulate(bench.model, bench.spec, replace(bench.sim, T=T))

    def test_fitted_rate_matches_design(self):
        for rate in (0.5, 1.0, 2.0):
            with self.subTest(rate=rate):
                traj = self._run(rate, T=6.0)
                self.assertFalse(traj.exited)
                fit = fit_rate(traj, (0.0, 6.0))
                self.assertLess(abs(fit.rate - rate), 0.1 * rate)

    def test_doubling_rate_halves_settling_time(self):
        """varphi grows with the rate, so the ratio is near but not at one half."""
        times = {rate: _time_to_reach(self._run(rate, T=15.0), 1e-3) for rate in (0.5, 1.0, 2.0)}
        for slow, fast in ((0.5, 1.0), (1.0, 2.0)):
            with self.subTest(rate=slow):
                self.assertTrue(math.isfinite(times[slow]))
                ratio = times[fast] / times[slow]
                self.assertGreaterEqual(ratio, 0.5 / 1.2)
                self.assertLessEqual(ratio, 0.5 * 1.2)

    def test_pde_residual_on_grid(self):
        bench = benchmark("cartpend")
        report = bench.extra_checks[0]()
        self.assertEqual(report.condition, "PDE")
        self.assertEqual(report.samples, 200)
        self.assertLess(abs(report.worst_margin), 1e-8)

    def test_paired_copies_contract_at_rate(self):
        bench = benchmark("cartpend")
        run = paired_run(bench.model, bench.spec, replace(bench.sim, T=5.0), xi0_other=(1.0, -1.0))
        fit = fit_decay(run.times, run.distance, window=(0.0, 5.0))
        self.assertGreaterEqual(fit.rate, 0.9 * bench.spec.rate)


class MaglevRunTests(unittest.TestCase):
    """With the flux estimate exact the momentum error decays at gain / m."""

    def test_momentum_log_slope(self):
        for gain in (0.25, 0.5, 1.0):
            with self.subTest(gain=gain):
                bench = benchmark("maglev", {"gain": gain})
                xi0 = bench.exact_xi0() + np.array([0.0, 0.05])
                traj = simulate(bench.model, bench.spec, replace(bench.sim, T=1.5, xi0=xi0))
                self.assertFalse(traj.exited)
                flux_err = np.abs(traj.xhat[:, 0] - traj.x[:, 0])
                self.assertLess(float(np.max(flux_err)), 1e-9)
                momentum_err = np.abs(traj.xhat[:, 1] - traj.x[:, 1])
                fit = fit_decay(traj.times, momentum_err, window=(0.0, 1.5))
                expected = bench.expected["momentum_rate"]
                self.assertAlmostEqual(expected, gain / bench.params["m"])
                self.assertLess(abs(fit.rate - expected), bench.expected["rate_tolerance"] * expected)

    def test_default_run_stays_levitated(self):
        bench = benchmark("maglev")
        traj = simulate(bench.model, bench.spec, bench.sim)
        self.assertFalse(traj.exited)
        self.assertLess(float(np.max(np.abs(traj.y[:, 0]))), 1e-3)
        self.assertLess(float(np.abs(traj.xhat[-1, 0] - traj.x[-1, 0])), float(np.abs(traj.xhat[0, 0] - traj.x[0, 0])))


class ReactorRunTests(unittest.TestCase):
    """Immersion observer on the bioreactor."""

    def setUp(self):
        self.bench = benchmark("reactor")

    def test_default_run_converges(self):
        traj = simulate(self.bench.model, self.bench.spec, self.bench.sim)
        self.assertFalse(traj.exited)
        self.assertLess(float(traj.err[-1]), self.bench.expected["final_error"])

    def test_identity_holds_along_exact_run(self):
        cfg = replace(self.bench.sim, w0=self.bench.exact_w0, xi0=self.bench.exact_xi0(), stride=50)
        traj = simulate(self.bench.model, self.bench.spec, cfg)
        self.assertFalse(traj.exited)
        residuals = [abs(reactor_identity(x[0], y[0], w)) for x, y, w in zip(traj.x, traj.y, traj.w)]
        self.assertLessEqual(max(residuals), self.bench.expected["identity"])
        self.assertLessEqual(float(np.max(traj.err)), 1e-6)


if __name__ == "__main__":
    unittest.main()
