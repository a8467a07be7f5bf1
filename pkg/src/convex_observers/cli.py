"""CLI entry point for convex-observers."""

import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
import typer
from rich.console import Console

from . import __version__
from .benchmarks import (
    BENCHMARKS,
    Benchmark,
    BenchmarkError,
    benchmark,
    run_benchmark_checks,
    simulation_summary,
)
from .config import ConfigError, RunConfig, load_config
from .model import AugmentedModel, ModelError, SystemModel, model_from_dict
from .observer import LeftInverseError
from .output import (
    RichOutput,
    format_benchmark_report,
    format_check_reports,
    format_checks_markdown,
    format_manifest,
    format_synthesis_report,
    write_trajectory_csv,
    write_trajectory_metadata,
)
from .sdp import SdpStatus
from .sim import FitError, SimulationError, Trajectory, fit_rate, simulate, simulate_many
from .sos import SosCompileError
from .specfile import SpecFileError, load_spec, spec_digest, write_spec
from .synth import ObserverSpec, SynthesisError, synthesize, synthesize_immersed
from .verify import CheckReport, CheckStatus, VerificationError, overall_status, run_checks

EXIT_OK = 0
EXIT_FAIL = 2
EXIT_USAGE = 3
EXIT_NUMERIC = 4

app = typer.Typer(
    name="convex-observers",
    help="Reduced-order contracting observers: synthesize, verify, simulate",
    add_completion=False,
)

# Progress and errors go to stderr; stdout only carries --json and --markdown results
stderr_console = Console(stderr=True)


@dataclass
class RunManifest:
    """What one command did; written to ``<out>/manifest.json`` however the command ends."""
    command: str
    out: Optional[Path] = None
    config: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    outputs: List[str] = field(default_factory=list)
    status: str = "error"
    exit_code: int = EXIT_OK
    started: float = field(default_factory=time.time)
    elapsed: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": __version__,
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "outputs": list(self.outputs),
            "status": self.status,
            "exit_code": self.exit_code,
            "elapsed": self.elapsed,
        }


@contextmanager
def _manifest(command: str, out: Optional[Path]) -> Iterator[RunManifest]:
    manifest = RunManifest(command=command, out=out)
    try:
        yield manifest
    except typer.Exit as e:
        manifest.exit_code = e.exit_code
        raise
    except Exception:
        manifest.exit_code = 1
        raise
    finally:
        manifest.elapsed = time.time() - manifest.started
        if manifest.out is not None:
            path = Path(manifest.out) / "manifest.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(format_manifest(manifest.to_dict()))


def version_callback(value: bool):
    if value:
        stderr_console.print(f"convex-observers {__version__}")
        raise typer.Exit()


def _fail(message: str, code: int) -> None:
    stderr_console.print(f"[red]Error:[/] {message}")
    raise typer.Exit(code)


def _load(config_path: Optional[Path], manifest: RunManifest, **overrides: Any) -> RunConfig:
    try:
        cfg = load_config(config_path=config_path, **overrides)
    except ConfigError as e:
        stderr_console.print(f"[red]Configuration error:[/] {e}")
        raise typer.Exit(EXIT_USAGE)
    manifest.out = cfg.out
    manifest.seed = cfg.seed
    manifest.config = cfg.to_dict()
    return cfg


def _model_from_config(cfg: RunConfig) -> Tuple[Any, Optional[Benchmark]]:
    try:
        if cfg.model.benchmark:
            bench = benchmark(cfg.model.benchmark, cfg.model.params)
            return bench.model, bench
        return model_from_dict(cfg.model.definition), None
    except (BenchmarkError, ModelError) as e:
        _fail(str(e), EXIT_USAGE)


def _benchmark_of(spec: ObserverSpec, cfg: RunConfig) -> Optional[Benchmark]:
    ref = spec.metadata.get("benchmark")
    try:
        if ref:
            return benchmark(ref["name"], ref.get("params"))
        if cfg.model.benchmark:
            return benchmark(cfg.model.benchmark, cfg.model.params)
    except BenchmarkError as e:
        _fail(str(e), EXIT_USAGE)
    return None


def _load_spec(path: Path):
    try:
        return load_spec(path)
    except SpecFileError as e:
        _fail(str(e), EXIT_USAGE)


def _base(m) -> SystemModel:
    return m.base if isinstance(m, AugmentedModel) else m


def _report_status(status: CheckStatus, output: RichOutput, manifest: RunManifest) -> None:
    manifest.status = status.value
    if status == CheckStatus.FAIL:
        raise typer.Exit(EXIT_FAIL)
    if status == CheckStatus.BOUNDARY:
        output.show_warning("Some conditions hold only up to tolerance (boundary)")


@app.callback()
def main(
    version: bool = typer.Option(
        False,
        "--version",
        "-V",
        callback=version_callback,
        is_eager=True,
        help="Show version and exit",
    ),
):
    """
    Synthesize, verify and simulate reduced-order contracting observers.

    Progress goes to stderr; --json results go to stdout.

    Examples:
        convex-observers synth benchmarks/poly19.yaml --out out/poly19
        convex-observers verify out/poly19/spec.json --markdown
        convex-observers simulate out/poly19/spec.json --config benchmarks/poly19.yaml
        convex-observers benchmark reactor --samples 500
    """


@app.command()
def synth(
    config_path: Path = typer.Argument(..., help="Run config (YAML)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed (overrides config)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory (overrides config)"),
    jobs: Optional[int] = typer.Option(None, "--jobs", "-j", help="Worker cap for r-grid and bisection"),
    rate: Optional[float] = typer.Option(None, "--lambda", help="Contraction rate (overrides config)"),
    mode: Optional[str] = typer.Option(None, "--mode", help="h3, h4, h3p or h4p"),
    bisect: Optional[bool] = typer.Option(None, "--bisect/--no-bisect", help="Search the largest feasible rate when infeasible"),
    json_output: bool = typer.Option(False, "--json", help="Print the synthesis report as JSON on stdout"),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Suppress progress output"),
):
    """Search for an observer and write its spec file."""
    with _manifest("synth", out) as manifest:
        cfg = _load(
            config_path, manifest,
            seed_override=seed, jobs_override=jobs, out_override=out,
            rate_override=rate, mode_override=mode,
        )
        output = RichOutput(stderr_console, quiet=quiet)
        model, _ = _model_from_config(cfg)
        syn = cfg.synthesis.to_config(cfg.jobs)
        if bisect is not None:
            syn = replace(syn, bisect=bisect)
        output.show_progress(f"Synthesizing for {_base(model).name} (mode {syn.mode}, rate {syn.rate})")

        try:
            if isinstance(model, AugmentedModel):
                result = synthesize_immersed(model, syn)
            else:
                result = synthesize(model, syn)
        except (SynthesisError, SosCompileError, ModelError) as e:
            _fail(str(e), EXIT_USAGE)
        except np.linalg.LinAlgError as e:
            _fail(f"Numerical breakdown in the SDP solver: {e}", EXIT_NUMERIC)

        cfg.out.mkdir(parents=True, exist_ok=True)
        report_path = cfg.out / "synthesis.json"
        report = format_synthesis_report(result)
        report_path.write_text(report)
        manifest.outputs.append(str(report_path))
        if result.spec is not None:
            spec_path = cfg.out / "spec.json"
            try:
                write_spec(result.spec, spec_path, model)
            except SpecFileError as e:
                _fail(str(e), EXIT_USAGE)
            manifest.outputs.append(str(spec_path))

        output.show_synthesis(result)
        if json_output:
            print(report)
        manifest.status = result.status.value
        if result.status == SdpStatus.INFEASIBLE:
            raise typer.Exit(EXIT_FAIL)
        if result.status == SdpStatus.MAX_ITER:
            stderr_console.print(f"[red]Error:[/] Solver stopped at the iteration cap: {result.reason}")
            raise typer.Exit(EXIT_NUMERIC)


@app.command("simulate")
def simulate_cmd(
    spec_path: Path = typer.Argument(..., help="Spec file written by synth"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Run config with a simulation section"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Noise seed (overrides config)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory (overrides config)"),
    jobs: Optional[int] = typer.Option(None, "--jobs", "-j", help="Worker cap when --runs > 1"),
    runs: int = typer.Option(1, "--runs", help="Independent runs with seeds seed, seed+1, ..."),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Suppress progress output"),
):
    """Simulate plant and observer; write trajectory CSV with a metadata sidecar."""
    with _manifest("simulate", out) as manifest:
        cfg = _load(
            config_path, manifest,
            seed_override=seed, jobs_override=jobs, out_override=out, model_required=False,
        )
        output = RichOutput(stderr_console, quiet=quiet)
        spec, model = _load_spec(spec_path)
        bench = _benchmark_of(spec, cfg)
        if runs < 1:
            _fail(f"--runs must be at least 1, got {runs}", EXIT_USAGE)

        try:
            sim_cfg = cfg.simulation.to_config(bench.sim if bench else None, cfg.seed, _base(model).n_u)
        except ConfigError as e:
            _fail(str(e), EXIT_USAGE)
        if cfg.simulation.exact_start and bench is not None:
            sim_cfg = replace(sim_cfg, xi0=tuple(bench.exact_xi0()))
        configs = [replace(sim_cfg, seed=sim_cfg.seed + k) for k in range(runs)]
        output.show_progress(f"Simulating {spec.name} on {_base(model).name} ({runs} run(s))")

        try:
            trajectories: List[Trajectory] = simulate_many(model, [spec] * runs, configs, jobs=cfg.jobs)
        except SimulationError as e:
            _fail(str(e), EXIT_USAGE)
        except LeftInverseError as e:
            _fail(f"Left inverse failed: {e}", EXIT_NUMERIC)
        except BenchmarkError as e:
            _fail(str(e), EXIT_NUMERIC)

        digest = spec_digest(spec, model)
        for k, traj in enumerate(trajectories):
            stem = "trajectory" if runs == 1 else f"trajectory_seed{configs[k].seed}"
            csv_path = write_trajectory_csv(traj, cfg.out / f"{stem}.csv")
            meta_path = write_trajectory_metadata(
                traj, cfg.out / f"{stem}.json", config=manifest.config, seed=configs[k].seed, spec_digest=digest
            )
            manifest.outputs.extend([str(csv_path), str(meta_path)])
            try:
                fit = fit_rate(traj, (0.0, float(traj.times[-1]) / 2))
            except FitError:
                fit = None
            output.show_simulation(traj, fit, files=[csv_path, meta_path])

        manifest.status = "completed"
        failed = [t for t in trajectories if t.exit_reason == "non-finite state"]
        if failed:
            manifest.status = "non-finite"
            _fail("Simulation produced a non-finite state", EXIT_NUMERIC)
        for t in trajectories:
            if t.exited:
                output.show_warning(f"Run of {t.observer} stopped at t={t.times[-1]:.4g}: {t.exit_reason}")


@app.command()
def verify(
    spec_path: Path = typer.Argument(..., help="Spec file written by synth"),
    config_path: Optional[Path] = typer.Option(None, "--config", "-c", help="Run config with a verification section"),
    samples: Optional[int] = typer.Option(None, "--samples", "-n", help="Sample count per check"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Sampling seed (overrides config)"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory (overrides config)"),
    jobs: Optional[int] = typer.Option(None, "--jobs", "-j", help="Worker cap for the checks"),
    json_output: bool = typer.Option(False, "--json", help="Print the check reports as JSON on stdout"),
    markdown_output: bool = typer.Option(False, "--markdown", "-m", help="Print the check reports as Markdown on stdout"),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Suppress progress output"),
):
    """Check the observer conditions by sampling; exit 0 on pass, 2 on fail."""
    with _manifest("verify", out) as manifest:
        cfg = _load(
            config_path, manifest,
            seed_override=seed, jobs_override=jobs, out_override=out,
            samples_override=samples, model_required=False,
        )
        output = RichOutput(stderr_console, quiet=quiet)
        spec, model = _load_spec(spec_path)
        n = cfg.verification.samples
        output.show_progress(f"Verifying {spec.name} with {n} samples per check")

        try:
            ref = spec.metadata.get("benchmark")
            if ref and not cfg.verification.checks and not cfg.verification.box:
                bench = _benchmark_of(spec, cfg)
                reports: List[CheckReport] = run_benchmark_checks(bench, n_samples=n, seed=cfg.seed, jobs=cfg.jobs)
            else:
                plant = model.extended() if isinstance(model, AugmentedModel) else model
                region = plant.domain.with_box(cfg.verification.box) if cfg.verification.box else None
                reports = run_checks(
                    spec, model, cfg.verification.checks or None,
                    region=region, n_samples=n, seed=cfg.seed, jobs=cfg.jobs,
                )
        except (KeyError, VerificationError) as e:
            _fail(str(e), EXIT_USAGE)
        except LeftInverseError as e:
            _fail(f"Left inverse failed: {e}", EXIT_NUMERIC)

        cfg.out.mkdir(parents=True, exist_ok=True)
        report = format_check_reports(reports, context={"spec": spec.name, "samples": n, "seed": cfg.seed})
        report_path = cfg.out / "checks.json"
        report_path.write_text(report)
        manifest.outputs.append(str(report_path))

        output.show_checks(reports, title=f"Verification of {spec.name}")
        if json_output:
            print(report)
        elif markdown_output:
            print(format_checks_markdown(reports, title=spec.name))
        _report_status(overall_status(reports), output, manifest)


@app.command("benchmark")
def benchmark_cmd(
    name: str = typer.Argument(..., help=f"One of: {', '.join(sorted(BENCHMARKS))}"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed for sampling and noise"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    jobs: Optional[int] = typer.Option(None, "--jobs", "-j", help="Worker cap"),
    samples: Optional[int] = typer.Option(None, "--samples", "-n", help="Sample count per check"),
    json_output: bool = typer.Option(False, "--json", help="Print the benchmark report as JSON on stdout"),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Suppress progress output"),
):
    """Run a benchmark's reference checks and default simulation."""
    with _manifest("benchmark", out) as manifest:
        cfg = _load(
            None, manifest,
            seed_override=seed, jobs_override=jobs, out_override=out,
            samples_override=samples, model_required=False,
        )
        if out is None and cfg.out == Path("out"):
            cfg.out = manifest.out = Path("out") / name
        output = RichOutput(stderr_console, quiet=quiet)
        try:
            bench = benchmark(name)
        except BenchmarkError as e:
            _fail(str(e), EXIT_USAGE)
        manifest.config = {"benchmark": name, "params": dict(bench.params), "samples": cfg.verification.samples}

        output.show_progress(f"Benchmark {name}: {bench.description}")
        reports = run_benchmark_checks(bench, n_samples=cfg.verification.samples, seed=cfg.seed, jobs=cfg.jobs)
        sim_cfg = replace(bench.sim, seed=cfg.seed)
        try:
            traj = simulate(bench.model, bench.spec, sim_cfg)
        except LeftInverseError as e:
            _fail(f"Left inverse failed: {e}", EXIT_NUMERIC)
        except BenchmarkError as e:
            _fail(str(e), EXIT_NUMERIC)
        summary = simulation_summary(bench, traj)

        cfg.out.mkdir(parents=True, exist_ok=True)
        spec_path = cfg.out / "spec.json"
        write_spec(bench.spec, spec_path, bench.model)
        csv_path = write_trajectory_csv(traj, cfg.out / "trajectory.csv")
        meta_path = write_trajectory_metadata(
            traj, cfg.out / "trajectory.json", config=manifest.config, seed=cfg.seed,
            spec_digest=spec_digest(bench.spec, bench.model),
        )
        report = format_benchmark_report(name, reports, summary, bench.params)
        report_path = cfg.out / "benchmark.json"
        report_path.write_text(report)
        manifest.outputs.extend(str(p) for p in (spec_path, csv_path, meta_path, report_path))

        output.show_benchmark(name, reports, summary)
        if json_output:
            print(report)
        if traj.exit_reason == "non-finite state":
            manifest.status = "non-finite"
            _fail("Simulation produced a non-finite state", EXIT_NUMERIC)
        _report_status(overall_status(reports), output, manifest)


if __name__ == "__main__":
    app()
