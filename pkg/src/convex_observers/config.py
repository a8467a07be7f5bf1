"""Run configuration loading for convex-observers."""

import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml
from dotenv import load_dotenv

from .benchmarks import BENCHMARKS
from .model import InputSignal, ModelError
from .sdp import SolverOptions
from .sim import SimConfig
from .synth import DEFAULT_R_GRID, MODES, SynthesisConfig

FORMAT_VERSION = 1
DEFAULT_OUT = Path("out")
DEFAULT_SAMPLES = 1000


class ConfigError(Exception):
    """Configuration error."""
    pass


@dataclass
class ModelSection:
    """Either a built-in benchmark (with parameter overrides) or an explicit polynomial model."""
    benchmark: Optional[str] = None
    params: Dict[str, float] = field(default_factory=dict)
    definition: Optional[Dict[str, Any]] = None


@dataclass
class SynthesisSection:
    phi_degree: int = 2
    fz_degree: int = 3
    rate: float = 1.0
    margin: float = 0.1
    q_floor: float = 1e-3
    mode: str = "h3"
    r_grid: Tuple[float, ...] = DEFAULT_R_GRID
    y_dependent_metric: bool = False
    metric_degree: int = 2
    gram_degree: Optional[int] = None
    theta_bound: float = 1e3
    bisect: bool = True
    bisect_steps: int = 8
    solver_tol: float = 1e-9
    solver_max_iter: int = 100

    def to_config(self, jobs: int = 1) -> SynthesisConfig:
        return SynthesisConfig(
            phi_degree=self.phi_degree,
            fz_degree=self.fz_degree,
            rate=self.rate,
            margin=self.margin,
            q_floor=self.q_floor,
            mode=self.mode,
            r_grid=tuple(self.r_grid),
            y_dependent_metric=self.y_dependent_metric,
            metric_degree=self.metric_degree,
            gram_degree=self.gram_degree,
            theta_bound=self.theta_bound,
            bisect=self.bisect,
            bisect_steps=self.bisect_steps,
            jobs=jobs,
            solver=SolverOptions(tol=self.solver_tol, max_iter=self.solver_max_iter),
        )


@dataclass
class SimulationSection:
    """Overrides on top of a benchmark's default simulation; unset fields keep the default."""
    h: Optional[float] = None
    T: Optional[float] = None
    x0: Optional[List[float]] = None
    y0: Optional[List[float]] = None
    w0: Optional[List[float]] = None
    xi0: Optional[List[float]] = None
    noise: Optional[float] = None
    noise_period: Optional[float] = None
    stride: Optional[int] = None
    input: Optional[Dict[str, Any]] = None
    exact_start: bool = False

    def to_config(self, base: Optional[SimConfig], seed: int, n_u: int = 0) -> SimConfig:
        """
        Raises:
            ConfigError: If required initial conditions are missing or the input is invalid
        """
        base = base or SimConfig()
        values = {
            "h": self.h if self.h is not None else base.h,
            "T": self.T if self.T is not None else base.T,
            "x0": tuple(self.x0) if self.x0 is not None else tuple(base.x0),
            "y0": tuple(self.y0) if self.y0 is not None else tuple(base.y0),
            "w0": tuple(self.w0) if self.w0 is not None else base.w0,
            "xi0": tuple(self.xi0) if self.xi0 is not None else base.xi0,
            "noise": self.noise if self.noise is not None else base.noise,
            "noise_period": self.noise_period if self.noise_period is not None else base.noise_period,
            "stride": self.stride if self.stride is not None else base.stride,
            "input": base.input,
            "seed": seed,
        }
        # an inherited hold period never drops below an overridden step
        if self.noise_period is None and values["noise_period"] is not None:
            values["noise_period"] = max(values["noise_period"], values["h"])
        if self.input is not None:
            try:
                values["input"] = InputSignal.from_dict(self.input, n_u=n_u)
            except (ModelError, KeyError) as e:
                raise ConfigError(f"Invalid simulation input: {e}") from e
        if not values["x0"] or not values["y0"]:
            raise ConfigError("simulation.x0 and simulation.y0 are required for explicit models")
        return SimConfig(**values)


@dataclass
class VerificationSection:
    samples: int = DEFAULT_SAMPLES
    checks: List[str] = field(default_factory=list)
    box: Dict[str, Tuple[float, float]] = field(default_factory=dict)


@dataclass
class RunConfig:
    """Configuration for one command run."""
    model: ModelSection = field(default_factory=ModelSection)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    verification: VerificationSection = field(default_factory=VerificationSection)
    seed: int = 0
    jobs: int = 1
    out: Path = DEFAULT_OUT
    source: Optional[Path] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "model": {
                "benchmark": self.model.benchmark,
                "params": dict(self.model.params),
                "definition": self.model.definition,
            },
            "synthesis": {f.name: _plain(getattr(self.synthesis, f.name)) for f in fields(self.synthesis)},
            "simulation": {f.name: _plain(getattr(self.simulation, f.name)) for f in fields(self.simulation)},
            "verification": {
                "samples": self.verification.samples,
                "checks": list(self.verification.checks),
                "box": {k: list(v) for k, v in self.verification.box.items()},
            },
            "seed": self.seed,
            "jobs": self.jobs,
            "out": str(self.out),
        }


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return list(value)
    return value


def _section(cls, data: Any, name: str):
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"Section '{name}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in '{name}': {', '.join(unknown)}")
    try:
        return cls(**dict(data))
    except TypeError as e:
        raise ConfigError(f"Invalid section '{name}': {e}") from e


def _model_section(data: Any, required: bool = True) -> ModelSection:
    if data is None and not required:
        return ModelSection()
    if data is None:
        raise ConfigError("Config needs a 'model' section naming a benchmark or defining a polynomial model")
    if not isinstance(data, Mapping):
        raise ConfigError("Section 'model' must be a mapping")
    if "benchmark" in data:
        unknown = sorted(set(data) - {"benchmark", "params"})
        if unknown:
            raise ConfigError(f"Unknown keys in 'model': {', '.join(unknown)}")
        name = str(data["benchmark"])
        if name not in BENCHMARKS:
            raise ConfigError(f"Unknown benchmark '{name}'; available: {', '.join(sorted(BENCHMARKS))}")
        return ModelSection(benchmark=name, params={k: float(v) for k, v in (data.get("params") or {}).items()})
    missing = [k for k in ("states", "outputs", "f_x", "f_y") if k not in data]
    if missing:
        raise ConfigError(f"Model definition is missing {', '.join(missing)}")
    return ModelSection(definition=dict(data))


def _env_int(name: str) -> Optional[int]:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"{name} must be an integer, got '{raw}'") from e


def _validate(cfg: RunConfig) -> None:
    syn = cfg.synthesis
    if syn.mode not in MODES:
        raise ConfigError(f"Unknown mode '{syn.mode}', expected one of {', '.join(MODES)}")
    if syn.rate < 0:
        raise ConfigError(f"Rate must be non-negative, got {syn.rate}")
    if syn.margin <= 0:
        raise ConfigError(f"Monotonicity margin must be positive, got {syn.margin}")
    if not syn.r_grid or any(float(r) <= 0 for r in syn.r_grid):
        raise ConfigError("synthesis.r_grid must hold positive numbers")
    sim = cfg.simulation
    if sim.h is not None and sim.h <= 0:
        raise ConfigError(f"Simulation step must be positive, got {sim.h}")
    if sim.T is not None and sim.T <= 0:
        raise ConfigError(f"Simulation horizon must be positive, got {sim.T}")
    if sim.noise is not None and sim.noise < 0:
        raise ConfigError(f"Noise amplitude must be non-negative, got {sim.noise}")
    if cfg.verification.samples < 1:
        raise ConfigError(f"Sample count must be positive, got {cfg.verification.samples}")
    if cfg.jobs < 1:
        raise ConfigError(f"jobs must be at least 1, got {cfg.jobs}")


def load_config(
    config_path: Optional[Path] = None,
    seed_override: Optional[int] = None,
    jobs_override: Optional[int] = None,
    out_override: Optional[Path] = None,
    rate_override: Optional[float] = None,
    mode_override: Optional[str] = None,
    samples_override: Optional[int] = None,
    model_required: bool = True,
) -> RunConfig:
    """
    Load a run configuration from YAML and environment variables.

    Priority (highest to lowest):
    1. CLI flag overrides
    2. Environment variables (CONVEX_OBSERVERS_SEED, _JOBS, _SAMPLES, _OUT)
    3. Config file
    4. Built-in defaults

    Args:
        config_path: Path to the YAML config file
        seed_override: Seed from CLI
        jobs_override: Worker cap from CLI
        out_override: Output directory from CLI
        rate_override: Contraction rate from CLI
        mode_override: Synthesis mode from CLI
        samples_override: Verification sample count from CLI
        model_required: Whether the config must name a model; commands that read a spec file pass False

    Returns:
        RunConfig instance

    Raises:
        ConfigError: If the file is missing or invalid, or a value is out of range
    """
    load_dotenv()
    print("[config] Loading environment variables via dotenv", file=sys.stderr)

    if config_path is None:
        if model_required:
            raise ConfigError("A config file is required (pass CONFIG or --config)")
        print("[config] No config file given, using defaults", file=sys.stderr)
        data: Mapping[str, Any] = {}
    else:
        config_path = Path(config_path)
        print(f"[config] Using config path: {config_path}", file=sys.stderr)
        if not config_path.exists():
            raise ConfigError(f"Config file not found: {config_path}")
        try:
            with open(config_path) as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {config_path}: {e}")
        if not isinstance(data, Mapping):
            raise ConfigError(f"{config_path} must contain a mapping at the top level")
        print("[config] Loaded configuration file", file=sys.stderr)

    version = data.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"Unsupported format_version {version}; expected {FORMAT_VERSION}")
    known = {"format_version", "model", "synthesis", "simulation", "verification", "seed", "jobs", "out"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown top-level keys: {', '.join(unknown)}")

    cfg = RunConfig(
        model=_model_section(data.get("model"), model_required),
        synthesis=_section(SynthesisSection, data.get("synthesis"), "synthesis"),
        simulation=_section(SimulationSection, data.get("simulation"), "simulation"),
        verification=_section(VerificationSection, data.get("verification"), "verification"),
        source=config_path,
    )
    cfg.synthesis.r_grid = tuple(float(r) for r in cfg.synthesis.r_grid)
    cfg.verification.box = {k: (float(v[0]), float(v[1])) for k, v in cfg.verification.box.items()}
    if "seed" in data:
        cfg.seed = int(data["seed"])
        print(f"[config] Config file sets seed: {cfg.seed}", file=sys.stderr)
    if "jobs" in data:
        cfg.jobs = int(data["jobs"])
        print(f"[config] Config file sets jobs: {cfg.jobs}", file=sys.stderr)
    if "out" in data:
        cfg.out = Path(data["out"])
        print(f"[config] Config file sets output directory: {cfg.out}", file=sys.stderr)
    if cfg.model.definition is None and cfg.model.benchmark is None:
        print("[config] Model: taken from the spec file", file=sys.stderr)
    elif cfg.model.benchmark:
        print(f"[config] Model: benchmark {cfg.model.benchmark} params={cfg.model.params}", file=sys.stderr)
    else:
        print(f"[config] Model: explicit definition '{cfg.model.definition.get('name', 'model')}'", file=sys.stderr)

    # Environment variables override the config file
    env_seed = _env_int("CONVEX_OBSERVERS_SEED")
    if env_seed is not None:
        cfg.seed = env_seed
        print(f"[config] CONVEX_OBSERVERS_SEED found in environment and takes precedence: {cfg.seed}", file=sys.stderr)
    env_jobs = _env_int("CONVEX_OBSERVERS_JOBS")
    if env_jobs is not None:
        cfg.jobs = env_jobs
        print(f"[config] CONVEX_OBSERVERS_JOBS found in environment and takes precedence: {cfg.jobs}", file=sys.stderr)
    env_samples = _env_int("CONVEX_OBSERVERS_SAMPLES")
    if env_samples is not None:
        cfg.verification.samples = env_samples
        print(f"[config] CONVEX_OBSERVERS_SAMPLES found in environment and takes precedence: {env_samples}", file=sys.stderr)
    env_out = os.getenv("CONVEX_OBSERVERS_OUT")
    if env_out:
        cfg.out = Path(env_out)
        print(f"[config] CONVEX_OBSERVERS_OUT found in environment and takes precedence: {cfg.out}", file=sys.stderr)

    # CLI overrides everything
    if seed_override is not None:
        cfg.seed = seed_override
        print(f"[config] CLI override for seed applied: {cfg.seed}", file=sys.stderr)
    if jobs_override is not None:
        cfg.jobs = jobs_override
        print(f"[config] CLI override for jobs applied: {cfg.jobs}", file=sys.stderr)
    if out_override is not None:
        cfg.out = Path(out_override)
        print(f"[config] CLI override for output directory applied: {cfg.out}", file=sys.stderr)
    if rate_override is not None:
        cfg.synthesis.rate = rate_override
        print(f"[config] CLI override for rate applied: {rate_override}", file=sys.stderr)
    if mode_override is not None:
        cfg.synthesis.mode = mode_override
        print(f"[config] CLI override for mode applied: {mode_override}", file=sys.stderr)
    if samples_override is not None:
        cfg.verification.samples = samples_override
        print(f"[config] CLI override for samples applied: {samples_override}", file=sys.stderr)

    _validate(cfg)

    print(
        "[config] Final configuration: "
        f"model={cfg.model.benchmark or 'explicit'}, seed={cfg.seed}, jobs={cfg.jobs}, "
        f"out={cfg.out}, rate={cfg.synthesis.rate}, mode={cfg.synthesis.mode}, "
        f"samples={cfg.verification.samples}",
        file=sys.stderr,
    )
    return cfg
