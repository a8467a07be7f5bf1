"""End-to-end tests for the command-line interface."""

import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import yaml
from typer.testing import CliRunner

from convex_observers import __version__
from convex_observers.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, app

runner = CliRunner()


def _write(path: Path, data) -> Path:
    path.write_text(yaml.safe_dump(data))
    return path


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmpdir.name)
        self.env = patch.dict(os.environ, {}, clear=True)
        self.env.start()

    def tearDown(self):
        self.env.stop()
        self.tmpdir.cleanup()

    def invoke(self, *args):
        return runner.invoke(app, [str(a) for a in args])


class VersionTests(CliTestCase):
    def test_version_flag(self):
        result = self.invoke("--version")
        self.assertEqual(result.exit_code, EXIT_OK)
        self.assertIn(__version__, result.output)


class SynthCommandTests(CliTestCase):
    """synth CONFIG."""

    def test_missing_config_is_usage_error(self):
        result = self.invoke("synth", self.dir / "absent.yaml")
        self.assertEqual(result.exit_code, EXIT_USAGE)

    def test_infeasible_plant(self):
        config = _write(self.dir / "toy.yaml", {
            "model": {
                "name": "toy",
                "states": ["x"],
                "outputs": ["y"],
                "f_x": ["x"],
                "f_y": ["-y"],
                "domain": {"box": {"x": [-1, 1], "y": [-1, 1]}},
            },
            "synthesis": {"rate": 0.1, "phi_degree": 1, "fz_degree": 1, "bisect": False},
        })
        out = self.dir / "toy"
        result = self.invoke("synth", config, "--out", out, "--quiet")
        self.assertEqual(result.exit_code, EXIT_FAIL)
        report = json.loads((out / "synthesis.json").read_text())
        self.assertEqual(report["status"], "Infeasible")
        self.assertFalse((out / "spec.json").exists())
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["command"], "synth")
        self.assertEqual(manifest["exit_code"], EXIT_FAIL)

    def test_poly19_synthesis_then_verify(self):
        config = _write(self.dir / "poly19.yaml", {
            "model": {"benchmark": "poly19"},
            "synthesis": {"phi_degree": 2, "fz_degree": 3, "margin": 0.1},
        })
        out = self.dir / "poly19"
        result = self.invoke("synth", config, "--out", out, "--lambda", "0.5", "--no-bisect")
        self.assertEqual(result.exit_code, EXIT_OK, result.output)
        self.assertTrue((out / "spec.json").exists())
        self.assertEqual(json.loads((out / "synthesis.json").read_text())["status"], "Feasible")

        result = self.invoke("verify", out / "spec.json", "--out", out, "--samples", "200", "--markdown")
        self.assertEqual(result.exit_code, EXIT_OK, result.output)
        self.assertIn("| Condition |", result.output)
        checks = json.loads((out / "checks.json").read_text())
        self.assertEqual([c["condition"] for c in checks["checks"]], ["H1", "H2", "H3", "A2"])


class BenchmarkCommandTests(CliTestCase):
    """benchmark NAME, then verify and simulate on its spec."""

    def test_unknown_benchmark(self):
        result = self.invoke("benchmark", "pendulum", "--out", self.dir)
        self.assertEqual(result.exit_code, EXIT_USAGE)

    def test_poly19_pipeline(self):
        out = self.dir / "poly19"
        result = self.invoke("benchmark", "poly19", "--out", out, "--samples", "50", "--quiet")
        self.assertEqual(result.exit_code, EXIT_OK, result.output)
        for name in ("spec.json", "trajectory.csv", "trajectory.json", "benchmark.json", "manifest.json"):
            self.assertTrue((out / name).exists(), name)
        report = json.loads((out / "benchmark.json").read_text())
        self.assertEqual(report["overall"], "Boundary")
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["status"], "Boundary")
        self.assertEqual(manifest["exit_code"], EXIT_OK)

        checked = self.dir / "checked"
        config = _write(self.dir / "verify.yaml", {"verification": {"checks": ["H1", "H2"], "box": {"x1": [-1, 1]}}})
        result = self.invoke("verify", out / "spec.json", "--config", config, "--out", checked)
        self.assertEqual(result.exit_code, EXIT_OK, result.output)
        checks = json.loads((checked / "checks.json").read_text())
        self.assertEqual(checks["overall"], "Pass")
        self.assertEqual(len(checks["checks"]), 2)

        runs = self.dir / "runs"
        config = _write(self.dir / "sim.yaml", {"simulation": {"T": 0.2, "h": 0.01}})
        result = self.invoke("simulate", out / "spec.json", "--config", config, "--out", runs, "--runs", "2")
        self.assertEqual(result.exit_code, EXIT_OK, result.output)
        for seed in (0, 1):
            meta = json.loads((runs / f"trajectory_seed{seed}.json").read_text())
            self.assertEqual(meta["seed"], seed)
            self.assertEqual(meta["samples"], 21)
            self.assertTrue((runs / f"trajectory_seed{seed}.csv").exists())


class VerifyCommandTests(CliTestCase):
    def test_missing_spec(self):
        result = self.invoke("verify", self.dir / "absent.json", "--out", self.dir)
        self.assertEqual(result.exit_code, EXIT_USAGE)

    def test_unknown_check_name(self):
        out = self.dir / "cartpend"
        self.assertEqual(self.invoke("benchmark", "cartpend", "--out", out, "--samples", "20").exit_code, EXIT_OK)
        config = _write(self.dir / "bad.yaml", {"verification": {"checks": ["H9"]}})
        result = self.invoke("verify", out / "spec.json", "--config", config, "--out", out)
        self.assertEqual(result.exit_code, EXIT_USAGE)


if __name__ == "__main__":
    unittest.main()
