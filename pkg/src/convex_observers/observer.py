"""Observer runtime: ``xi' = f_z(x_hat, y, u)`` with ``x_hat = phi^L(xi, y)``."""

from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence

import numpy as np

from .model import AffineTransformation, Transformation
from .synth import InverseStrategy, ObserverSpec


class LeftInverseError(Exception):
    """Newton iteration for ``phi(x, y) = xi`` did not converge."""

    def __init__(self, message: str, history: Optional[List[float]] = None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass
class NewtonOptions:
    max_iter: int = 100
    tol: float = 1e-10
    damping: float = 0.5
    min_step: float = 2.0 ** -20


@dataclass
class ObserverState:
    xi: np.ndarray
    x_hat: np.ndarray
    w_hat: Optional[np.ndarray] = None
    iterations: int = 0


def newton_inverse(
    transformation: Transformation,
    xi: np.ndarray,
    y: np.ndarray,
    x0: Optional[np.ndarray] = None,
    opts: Optional[NewtonOptions] = None,
) -> tuple:
    """
    Damped Newton on ``g(x) = phi(x, y) - xi``.

    Strong monotonicity of ``phi`` in ``x`` makes the root unique and keeps
    ``Phi_x`` invertible along the way.

    Args:
        transformation: The coordinate change
        xi: Observer state
        y: Output
        x0: Starting point, zeros by default
        opts: Iteration cap, tolerance and damping

    Returns:
        Tuple of (x_hat, iterations)

    Raises:
        LeftInverseError: With the residual history when the cap is hit or the step collapses
    """
    opts = opts or NewtonOptions()
    xi = np.asarray(xi, dtype=float)
    y = np.asarray(y, dtype=float)
    x = np.zeros(transformation.dim) if x0 is None else np.array(x0, dtype=float)
    goal = opts.tol * (1.0 + float(np.linalg.norm(xi)))
    g = transformation.phi(x, y) - xi
    res = float(np.linalg.norm(g))
    history = [res]
    for k in range(opts.max_iter):
        if res <= goal:
            return x, k
        try:
            step = np.linalg.solve(transformation.phi_x(x, y), -g)
        except np.linalg.LinAlgError as e:
            raise LeftInverseError(f"Singular Phi_x at x={x.tolist()}", history) from e
        t = 1.0
        while True:
            trial = x + t * step
            g_trial = transformation.phi(trial, y) - xi
            res_trial = float(np.linalg.norm(g_trial))
            if np.isfinite(res_trial) and res_trial < res:
                break
            t *= opts.damping
            if t < opts.min_step:
                raise LeftInverseError(
                    f"Newton step collapsed at residual {res:.3e} after {k} iterations", history
                )
        x, g, res = trial, g_trial, res_trial
        history.append(res)
    if res <= goal:
        return x, opts.max_iter
    raise LeftInverseError(
        f"Newton inverse did not converge in {opts.max_iter} iterations (residual {res:.3e})", history
    )


def left_inverse(
    spec: ObserverSpec,
    xi: np.ndarray,
    y: np.ndarray,
    x0: Optional[np.ndarray] = None,
    opts: Optional[NewtonOptions] = None,
) -> np.ndarray:
    """``x_hat`` with ``phi(x_hat, y) = xi``; closed form when ``phi`` is affine in x."""
    t = spec.transformation
    if spec.inverse == InverseStrategy.AFFINE and isinstance(t, AffineTransformation):
        return np.linalg.solve(t.P(y), np.asarray(xi, dtype=float) - t.varphi(y))
    return newton_inverse(t, xi, y, x0, opts)[0]


class Observer(Protocol):
    """Anything the simulator can run next to a plant."""
    name: str
    n_xi: int

    def rhs(self, xi: np.ndarray, y: np.ndarray, u: np.ndarray, t: float) -> np.ndarray:
        ...

    def estimate(self, xi: np.ndarray, y: np.ndarray) -> np.ndarray:
        ...


class ContractingObserver:
    """Observer built from an ObserverSpec.

    For augmented specs the estimate covers the base states only; ``state``
    also exposes the auxiliary estimate ``w_hat``.
    """

    def __init__(self, spec: ObserverSpec, opts: Optional[NewtonOptions] = None):
        self.spec = spec
        self.name = spec.name
        self.n_xi = spec.dim
        self.opts = opts or NewtonOptions()
        aug = spec.augmentation
        self.n_base = len(aug.base_x_names) if aug is not None else spec.dim
        self._last: Optional[np.ndarray] = None
        self.last_iterations = 0

    def _invert(self, xi: np.ndarray, y: np.ndarray) -> np.ndarray:
        t = self.spec.transformation
        if self.spec.inverse == InverseStrategy.AFFINE and isinstance(t, AffineTransformation):
            self.last_iterations = 0
            return np.linalg.solve(t.P(y), np.asarray(xi, dtype=float) - t.varphi(y))
        x, self.last_iterations = newton_inverse(t, xi, y, self._last, self.opts)
        self._last = x
        return x

    def rhs(self, xi: np.ndarray, y: np.ndarray, u: np.ndarray, t: float = 0.0) -> np.ndarray:
        x_hat = self._invert(xi, y)
        return self.spec.f_z(x_hat, y, u)

    def estimate(self, xi: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._invert(xi, y)[: self.n_base]

    def state(self, xi: np.ndarray, y: np.ndarray) -> ObserverState:
        x_e = self._invert(xi, y)
        w_hat = x_e[self.n_base:] if self.spec.is_augmented else None
        return ObserverState(xi=np.array(xi, dtype=float), x_hat=x_e[: self.n_base], w_hat=w_hat, iterations=self.last_iterations)

    def exact_xi(self, x: np.ndarray, y: np.ndarray, w: Optional[np.ndarray] = None) -> np.ndarray:
        """``phi(x, y)``: the observer state that makes the estimate exact."""
        x = np.asarray(x, dtype=float)
        if self.spec.is_augmented:
            x = np.concatenate([x, np.asarray(w if w is not None else np.zeros(self.n_xi - x.size), dtype=float)])
        return self.spec.phi(x, y)


def observer_rhs(spec: ObserverSpec, xi: np.ndarray, y: np.ndarray, u: Sequence[float] = ()) -> np.ndarray:
    """``f_z(phi^L(xi, y), y, u)``."""
    x_hat = left_inverse(spec, xi, y)
    return spec.f_z(x_hat, y, np.asarray(u, dtype=float))
