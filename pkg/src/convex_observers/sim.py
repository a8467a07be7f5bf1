"""Fixed-step co-integration of plant and observer.

Plant and observer advance together with classic RK4. The observer sees the
plant output plus uniform noise that is held for ``noise_period`` seconds.
"""

import math
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .model import AugmentedModel, InputSignal, SystemModel
from .observer import ContractingObserver, LeftInverseError, Observer
from .parallel import run_parallel
from .synth import ObserverSpec


class SimulationError(Exception):
    """Simulation configuration is inconsistent with the model or observer."""
    pass


class FitError(Exception):
    """Nothing to fit: the signal is at the numerical floor on the window."""
    pass


@dataclass
class SimConfig:
    h: float = 1e-3
    T: float = 10.0
    x0: Sequence[float] = ()
    y0: Sequence[float] = ()
    w0: Optional[Sequence[float]] = None
    xi0: Optional[Sequence[float]] = None
    input: Optional[InputSignal] = None
    noise: float = 0.0
    noise_period: Optional[float] = None
    stride: int = 1
    seed: int = 0

    def validate(self) -> None:
        """
        Raises:
            SimulationError: On non-positive step or horizon, noise held shorter than a step, or a bad stride
        """
        if self.h <= 0 or not math.isfinite(self.h):
            raise SimulationError(f"Step h must be positive, got {self.h}")
        if self.T <= 0 or not math.isfinite(self.T):
            raise SimulationError(f"Horizon T must be positive, got {self.T}")
        if self.noise < 0:
            raise SimulationError(f"Noise amplitude must be non-negative, got {self.noise}")
        if self.noise_period is not None and self.noise_period < self.h * (1.0 - 1e-9):
            raise SimulationError(f"Noise sample period {self.noise_period} is shorter than the step {self.h}")
        if self.stride < 1:
            raise SimulationError(f"Record stride must be at least 1, got {self.stride}")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.h))


@dataclass
class Trajectory:
    """Recorded samples; every array has one row per recorded time."""
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    y_noisy: np.ndarray
    u: np.ndarray
    xi: np.ndarray
    xhat: np.ndarray
    w: Optional[np.ndarray] = None
    x_names: Tuple[str, ...] = ()
    y_names: Tuple[str, ...] = ()
    u_names: Tuple[str, ...] = ()
    observer: str = ""
    exit_reason: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def err(self) -> np.ndarray:
        return np.linalg.norm(self.xhat - self.x, axis=1)

    @property
    def exited(self) -> bool:
        return self.exit_reason is not None

    def __len__(self) -> int:
        return len(self.times)

    def window(self, t0: float = 0.0, t1: Optional[float] = None) -> np.ndarray:
        t1 = self.times[-1] if t1 is None else t1
        return (self.times >= t0 - 1e-12) & (self.times <= t1 + 1e-12)

    def rms_error(self, t0: float = 0.0, t1: Optional[float] = None) -> float:
        e = self.err[self.window(t0, t1)]
        return float(np.sqrt(np.mean(e ** 2))) if e.size else float("nan")


def _noise_table(cfg: SimConfig, n_y: int) -> Tuple[np.ndarray, float]:
    period = cfg.noise_period or cfg.h
    count = int(math.ceil(cfg.T / period)) + 2
    if cfg.noise == 0.0:
        return np.zeros((count, n_y)), period
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(-cfg.noise, cfg.noise, size=(count, n_y)), period


def _as_observer(obs: Union[ObserverSpec, Observer]) -> Observer:
    return ContractingObserver(obs) if isinstance(obs, ObserverSpec) else obs


def simulate(
    m: Union[SystemModel, AugmentedModel],
    observer: Union[ObserverSpec, Observer],
    cfg: SimConfig,
) -> Trajectory:
    """
    Integrate plant and observer in lockstep.

    Args:
        m: Plant, optionally with auxiliary dynamics that are integrated too
        observer: An ObserverSpec or any object with ``rhs``/``estimate``
        cfg: Step, horizon, initial conditions, input and noise

    Returns:
        Trajectory; leaving the domain or a non-finite state truncates it and sets ``exit_reason``

    Raises:
        SimulationError: On bad configuration or initial conditions outside the domain
        LeftInverseError: If the observer's inverse fails
    """
    cfg.validate()
    aug = m if isinstance(m, AugmentedModel) else None
    base = aug.base if aug is not None else m
    obs = _as_observer(observer)
    n_x, n_y, n_w = base.n_x, base.n_y, aug.n_w if aug is not None else 0
    x0 = np.asarray(cfg.x0, dtype=float)
    y0 = np.asarray(cfg.y0, dtype=float)
    if x0.size != n_x or y0.size != n_y:
        raise SimulationError(f"{base.name}: initial state needs {n_x} x and {n_y} y entries, got {x0.size} and {y0.size}")
    w0 = np.zeros(n_w) if cfg.w0 is None else np.asarray(cfg.w0, dtype=float)
    if w0.size != n_w:
        raise SimulationError(f"{base.name}: w0 needs {n_w} entries, got {w0.size}")
    xi0 = np.zeros(obs.n_xi) if cfg.xi0 is None else np.asarray(cfg.xi0, dtype=float)
    if xi0.size != obs.n_xi:
        raise SimulationError(f"Observer {obs.name} has {obs.n_xi} states, xi0 has {xi0.size}")
    signal = cfg.input if cfg.input is not None else base.input
    if base.n_u and signal.n_u != base.n_u:
        raise SimulationError(f"{base.name}: input signal has {signal.n_u} channels for {base.n_u} inputs")
    start_point = base.point(x0, y0, _u(signal, base, 0.0))
    reason = base.domain.violated(start_point)
    if reason is not None:
        raise SimulationError(f"{base.name}: initial condition violates '{reason}'")

    noise, period = _noise_table(cfg, n_y)

    def u_at(t: float) -> np.ndarray:
        return _u(signal, base, t)

    def deriv(t: float, s: np.ndarray, eta: np.ndarray) -> np.ndarray:
        x, y, w, xi = s[:n_x], s[n_x:n_x + n_y], s[n_x + n_y:n_x + n_y + n_w], s[n_x + n_y + n_w:]
        u = u_at(t)
        dx, dy = base.field(x, y, u)
        parts = [dx, dy]
        if n_w:
            parts.append(aug.f_w(np.concatenate([x, w]), y, u))
        parts.append(obs.rhs(xi, y + eta, u, t))
        return np.concatenate(parts)

    steps = cfg.steps
    h = cfg.h
    s = np.concatenate([x0, y0, w0, xi0])
    records: List[Tuple[float, np.ndarray, np.ndarray, np.ndarray]] = []

    def record(t: float, s: np.ndarray, eta: np.ndarray) -> None:
        records.append((t, s.copy(), eta.copy(), u_at(t)))

    print(
        f"[sim] Start: model={base.name} observer={obs.name} h={h} T={cfg.T} "
        f"noise={cfg.noise} seed={cfg.seed}",
        file=sys.stderr,
    )
    exit_reason: Optional[str] = None
    record(0.0, s, noise[0])
    for k in range(steps):
        t = k * h
        eta = noise[int(math.floor(t / period + 1e-9))]
        k1 = deriv(t, s, eta)
        k2 = deriv(t + h / 2, s + h / 2 * k1, eta)
        k3 = deriv(t + h / 2, s + h / 2 * k2, eta)
        k4 = deriv(t + h, s + h * k3, eta)
        s = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t_next = (k + 1) * h
        if not np.all(np.isfinite(s)):
            exit_reason = "non-finite state"
            break
        violated = base.domain.violated(base.point(s[:n_x], s[n_x:n_x + n_y], u_at(t_next)))
        if violated is not None:
            exit_reason = f"left domain: {violated}"
            break
        if (k + 1) % cfg.stride == 0 or k + 1 == steps:
            record(t_next, s, noise[int(math.floor(t_next / period + 1e-9))])

    traj = _assemble(records, obs, n_x, n_y, n_w, base, exit_reason)
    if exit_reason is not None:
        print(f"[sim] Truncated at t={traj.times[-1]:.4f}: {exit_reason}", file=sys.stderr)
    print(f"[sim] Complete: samples={len(traj)} final_error={traj.err[-1]:.3e}", file=sys.stderr)
    return traj


def _u(signal: InputSignal, base: SystemModel, t: float) -> np.ndarray:
    if base.n_u == 0:
        return np.zeros(0)
    return np.asarray(signal(t), dtype=float)


def _assemble(records, obs: Observer, n_x: int, n_y: int, n_w: int, base: SystemModel, exit_reason: Optional[str]) -> Trajectory:
    times = np.array([r[0] for r in records])
    S = np.array([r[1] for r in records])
    eta = np.array([r[2] for r in records])
    U = np.array([r[3] for r in records]).reshape(len(records), base.n_u)
    X = S[:, :n_x]
    Y = S[:, n_x:n_x + n_y]
    W = S[:, n_x + n_y:n_x + n_y + n_w] if n_w else None
    XI = S[:, n_x + n_y + n_w:]
    Y_noisy = Y + eta
    XHAT = np.array([obs.estimate(XI[i], Y_noisy[i]) for i in range(len(records))]).reshape(len(records), -1)
    return Trajectory(
        times=times,
        x=X,
        y=Y,
        y_noisy=Y_noisy,
        u=U,
        xi=XI,
        xhat=XHAT,
        w=W,
        x_names=base.x_names,
        y_names=base.y_names,
        u_names=base.u_names,
        observer=obs.name,
        exit_reason=exit_reason,
    )


@dataclass
class RateFit:
    rate: float
    intercept: float
    r_squared: float
    points: int


def fit_decay(times: np.ndarray, values: np.ndarray, window: Optional[Tuple[float, float]] = None, floor: float = 1e-12) -> RateFit:
    """Least-squares slope of ``log(values)``; the rate is minus the slope.

    Points at or below ``floor`` are left out.

    Raises:
        FitError: If fewer than three points on the window are above the floor
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = np.ones(times.size, dtype=bool)
    if window is not None:
        mask &= (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
    mask &= values > floor
    if int(mask.sum()) < 3:
        raise FitError(f"Only {int(mask.sum())} points above {floor:g} on the window; nothing to fit")
    fit = stats.linregress(times[mask], np.log(values[mask]))
    return RateFit(rate=-float(fit.slope), intercept=float(fit.intercept), r_squared=float(fit.rvalue ** 2), points=int(mask.sum()))


def fit_rate(traj: Trajectory, window: Optional[Tuple[float, float]] = None) -> RateFit:
    """Decay rate of the estimation error ``|x_hat - x|``."""
    return fit_decay(traj.times, traj.err, window)


@dataclass
class PairedRun:
    times: np.ndarray
    distance: np.ndarray
    a: Trajectory
    b: Trajectory


def paired_run(
    m: Union[SystemModel, AugmentedModel],
    spec: ObserverSpec,
    cfg: SimConfig,
    xi0_other: Sequence[float],
) -> PairedRun:
    """Two observer copies under identical outputs, inputs and noise; returns ``|xi_a - xi_b|(t)``."""
    from dataclasses import replace

    a = simulate(m, spec, cfg)
    b = simulate(m, spec, replace(cfg, xi0=list(xi0_other)))
    n = min(len(a), len(b))
    return PairedRun(times=a.times[:n], distance=np.linalg.norm(a.xi[:n] - b.xi[:n], axis=1), a=a, b=b)


def simulate_many(
    m: Union[SystemModel, AugmentedModel],
    observers: Sequence[Union[ObserverSpec, Observer]],
    cfg: Union[SimConfig, Sequence[SimConfig]],
    jobs: int = 1,
) -> List[Trajectory]:
    """Independent runs, one per observer (and config when a list is given)."""
    configs = list(cfg) if isinstance(cfg, (list, tuple)) else [cfg] * len(observers)
    if len(configs) != len(observers):
        raise SimulationError(f"{len(observers)} observers but {len(configs)} configs")
    # stateful observers (warm-started Newton) must not be shared between threads
    tasks = [lambda o=o, c=c: simulate(m, o, c) for o, c in zip(observers, configs)]
    return run_parallel(tasks, jobs=jobs, label="simulations")
