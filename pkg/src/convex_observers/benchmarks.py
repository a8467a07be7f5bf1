"""Built-in benchmark systems with reference observers.

* ``poly19``: two-state polynomial plant, observer from convex synthesis.
* ``maglev``: magnetic levitation, observer built in two cascaded steps.
* ``cartpend``: cart-pendulum with an output map solving ``varphi' Psi = -rate I``.
* ``reactor``: bioreactor whose observer needs three auxiliary states.

The MagLev constants (overridable through ``params``) and the high-gain
observer bounds in ``HgoParams`` are repository defaults; tests built on
them compare rates, not absolute values.
"""

import math
import sys
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from .model import (
    AffineTransformation,
    AugmentedModel,
    ClosedFormField,
    Domain,
    DomainConstraint,
    InputSignal,
    ModelError,
    SystemModel,
    augment,
)
from .poly import Polynomial
from .sim import FitError, SimConfig, Trajectory, fit_rate
from .synth import AugmentationRecord, InverseStrategy, ObserverSpec, complete_affine
from .verify import CheckReport, TransverseWitness, check_pde_pendulum, check_semidefinite_metric, run_checks

Model = Union[SystemModel, AugmentedModel]


class BenchmarkError(Exception):
    """Invalid benchmark parameters."""
    pass


class UnknownBenchmarkError(BenchmarkError):
    """No benchmark with that name."""
    pass


@dataclass
class BenchmarkCheck:
    """A set of verification checks for one (spec, model, region) triple."""
    label: str
    spec: ObserverSpec
    model: Model
    checks: Tuple[str, ...]
    region: Optional[Domain] = None


@dataclass
class Benchmark:
    name: str
    model: Model
    spec: ObserverSpec
    sim: SimConfig
    params: Dict[str, float]
    checks: List[BenchmarkCheck] = field(default_factory=list)
    extra_checks: List[Callable[[], CheckReport]] = field(default_factory=list)
    expected: Dict[str, Any] = field(default_factory=dict)
    baseline: Optional[Any] = None
    exact_w0: Optional[Tuple[float, ...]] = None
    description: str = ""

    def exact_xi0(self) -> np.ndarray:
        """Observer state that reproduces the plant state exactly at t = 0."""
        x = np.asarray(self.sim.x0, dtype=float)
        if self.spec.is_augmented:
            w = self.exact_w0 if self.exact_w0 is not None else self.sim.w0
            x = np.concatenate([x, np.asarray(w, dtype=float)])
        return self.spec.phi(x, np.asarray(self.sim.y0, dtype=float))


def _params(defaults: Mapping[str, float], given: Optional[Mapping[str, Any]], name: str) -> Dict[str, float]:
    params = dict(defaults)
    for key, value in (given or {}).items():
        if key not in defaults:
            raise BenchmarkError(f"{name}: unknown parameter '{key}' (known: {', '.join(sorted(defaults))})")
        params[key] = float(value)
    return params


def _tag(spec: ObserverSpec, name: str, params: Mapping[str, float], checks: Sequence[str]) -> ObserverSpec:
    spec.metadata.update({"benchmark": {"name": name, "params": dict(params)}, "checks": list(checks)})
    return spec


# -- linear plants --------------------------------------------------------------


def lti_model(A: np.ndarray, B: Optional[np.ndarray] = None, n_x: int = 1, name: str = "lti", box: float = 5.0) -> SystemModel:
    """Linear plant ``col(x, y)' = A col(x, y) + B u`` with the first ``n_x`` states unmeasured.

    Raises:
        ModelError: If the matrix shapes disagree
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or not 0 < n_x < n:
        raise ModelError(f"A must be square with 0 < n_x < {n}, got shape {A.shape} and n_x={n_x}")
    B = np.zeros((n, 0)) if B is None else np.asarray(B, dtype=float).reshape(n, -1)
    x_names = [f"x{i + 1}" for i in range(n_x)]
    y_names = [f"y{i + 1}" for i in range(n - n_x)]
    u_names = [f"u{i + 1}" for i in range(B.shape[1])]
    vars_ = [Polynomial.variable(v) for v in x_names + y_names]
    inputs = [Polynomial.variable(v) for v in u_names]
    rows = []
    for i in range(n):
        acc = Polynomial.zero()
        for j in range(n):
            if A[i, j] != 0.0:
                acc = acc + vars_[j] * float(A[i, j])
        for k in range(B.shape[1]):
            if B[i, k] != 0.0:
                acc = acc + inputs[k] * float(B[i, k])
        rows.append(acc)
    domain = Domain(box={v: (-box, box) for v in x_names + y_names})
    return SystemModel.polynomial(name, x_names, y_names, rows[:n_x], rows[n_x:], u_names=u_names, domain=domain)


# -- polynomial example -----------------------------------------------------------

POLY19_DEFAULTS = {"rate": 1.0, "margin": 0.1, "noise": 0.02}
POLY19_P = (0.6370, 0.6369)
POLY19_VARPHI = (-2.1872, -0.6368)


def poly19_model(box: float = 5.0, y_range: float = 50.0) -> SystemModel:
    """``y`` integrates ``x1``, which settles near 1.55, so the output drifts; its range is kept wide."""
    x1, x2 = Polynomial.variable("x1"), Polynomial.variable("x2")
    f_x = [
        x1 - x1 ** 3 / 3.0 - x1 * x2 ** 2,
        x1 - x2 - x2 ** 3 / 3.0 - x2 * x1 ** 2,
    ]
    domain = Domain(box={"x1": (-box, box), "x2": (-box, box), "y": (-y_range, y_range)})
    return SystemModel.polynomial("poly19", ["x1", "x2"], ["y"], f_x, [x1], domain=domain)


def poly19_spec(
    m: Optional[SystemModel] = None,
    P: Sequence[float] = POLY19_P,
    varphi: Sequence[float] = POLY19_VARPHI,
    rate: float = 1.0,
    margin: float = 0.1,
) -> ObserverSpec:
    """Observer with ``P = diag(P)`` and ``varphi = varphi * y``, ``f_z`` completed symbolically."""
    m = m or poly19_model()
    y = Polynomial.variable("y")
    return complete_affine(
        m, np.diag(P), [y * float(c) for c in varphi], rate=rate, margin=margin, name="poly19-reference"
    )


def poly19_benchmark(params: Optional[Mapping[str, Any]] = None) -> Benchmark:
    prm = _params(POLY19_DEFAULTS, params, "poly19")
    m = poly19_model()
    checks = ("H1", "H2", "H3", "A2")
    spec = _tag(poly19_spec(m, rate=prm["rate"], margin=prm["margin"]), "poly19", prm, checks)
    sim = SimConfig(h=1e-3, T=10.0, x0=(3.0, 5.0), y0=(-4.0,), xi0=(0.0, 0.0), noise=prm["noise"], noise_period=1e-3)
    return Benchmark(
        name="poly19",
        model=m,
        spec=spec,
        sim=sim,
        params=prm,
        checks=[BenchmarkCheck("reference", spec, m, checks)],
        expected={"final_error": 0.05, "post_transient_rms": 0.1, "transient": 5.0},
        description="Two-state polynomial plant with one measured output",
    )


# -- magnetic levitation -----------------------------------------------------------

MAGLEV_DEFAULTS = {"m": 0.1, "R": 2.5, "k": 0.65, "c": 0.005, "g": 9.81, "gain": 0.5, "q_gap": 0.001, "metric_weight": 1e-3}


def _maglev_box(prm: Mapping[str, float]) -> Dict[str, Tuple[float, float]]:
    return {"lam": (-2.0, 2.0), "p": (-1.0, 1.0), "q": (-0.1, prm["c"] - prm["q_gap"])}


def maglev_model(params: Optional[Mapping[str, Any]] = None) -> SystemModel:
    """States ``(lam, p)`` (flux linkage, momentum), output ``q``, input voltage ``u``."""
    prm = _params(MAGLEV_DEFAULTS, params, "maglev")
    lam, p, q, u = (Polynomial.variable(v) for v in ("lam", "p", "q", "u"))
    f_x = [
        (q - prm["c"]) * lam * (prm["R"] / prm["k"]) + u,
        lam ** 2 / (2.0 * prm["k"]) - prm["m"] * prm["g"],
    ]
    f_y = [p / prm["m"]]
    domain = Domain(box=_maglev_box(prm), constraints=[DomainConstraint.parse(f"{prm['c']} - q > 0")])
    return SystemModel.polynomial(
        "maglev", ["lam", "p"], ["q"], f_x, f_y, u_names=["u"], domain=domain,
        params={k: prm[k] for k in ("m", "R", "k", "c", "g")},
    )


def maglev_flux_model(params: Optional[Mapping[str, Any]] = None) -> SystemModel:
    """First step: flux linkage unknown, momentum treated as an input."""
    prm = _params(MAGLEV_DEFAULTS, params, "maglev")
    lam, p, q, u = (Polynomial.variable(v) for v in ("lam", "p", "q", "u"))
    box = _maglev_box(prm)
    domain = Domain(box={"lam": box["lam"], "q": box["q"]}, constraints=[DomainConstraint.parse(f"{prm['c']} - q > 0")])
    return SystemModel.polynomial(
        "maglev-flux", ["lam"], ["q"], [(q - prm["c"]) * lam * (prm["R"] / prm["k"]) + u], [p / prm["m"]],
        u_names=["u", "p"], domain=domain,
    )


def maglev_momentum_model(params: Optional[Mapping[str, Any]] = None) -> SystemModel:
    """Second step: momentum unknown, flux linkage treated as a known input."""
    prm = _params(MAGLEV_DEFAULTS, params, "maglev")
    lam, p = Polynomial.variable("lam"), Polynomial.variable("p")
    box = _maglev_box(prm)
    domain = Domain(box={"p": box["p"], "q": box["q"]})
    return SystemModel.polynomial(
        "maglev-momentum", ["p"], ["q"], [lam ** 2 / (2.0 * prm["k"]) - prm["m"] * prm["g"]], [p / prm["m"]],
        u_names=["lam"], domain=domain,
    )


def maglev_flux_rate(prm: Mapping[str, float]) -> float:
    """Half the flux decay rate at the largest admissible position."""
    return 0.5 * prm["R"] / prm["k"] * prm["q_gap"]


def maglev_equilibrium(prm: Mapping[str, float], q: float = 0.0) -> Tuple[float, float]:
    """Flux linkage that carries the weight at position ``q`` and the voltage that holds it."""
    lam = math.sqrt(2.0 * prm["k"] * prm["m"] * prm["g"])
    return lam, (prm["c"] - q) * lam * prm["R"] / prm["k"]


def maglev_spec(params: Optional[Mapping[str, Any]] = None, m: Optional[SystemModel] = None) -> ObserverSpec:
    """``xi = col(lam, p - gain q)``; contraction is certified in ``diag(1, metric_weight)``."""
    prm = _params(MAGLEV_DEFAULTS, params, "maglev")
    m = m or maglev_model(prm)
    q = Polynomial.variable("q")
    return complete_affine(
        m,
        np.eye(2),
        [Polynomial.zero(), q * (-prm["gain"])],
        rate=maglev_flux_rate(prm),
        margin=0.1,
        metric=np.diag([1.0, prm["metric_weight"]]),
        name="maglev-reference",
    )


def maglev_benchmark(params: Optional[Mapping[str, Any]] = None) -> Benchmark:
    prm = _params(MAGLEV_DEFAULTS, params, "maglev")
    if prm["gain"] <= 0:
        raise BenchmarkError(f"maglev: gain must be positive, got {prm['gain']}")
    m = maglev_model(prm)
    checks = ("H1", "H2", "A2")
    spec = _tag(maglev_spec(prm, m), "maglev", prm, checks)
    flux = maglev_flux_model(prm)
    step1 = complete_affine(flux, np.eye(1), [Polynomial.zero()], rate=maglev_flux_rate(prm), margin=0.1, name="maglev-flux")
    momentum = maglev_momentum_model(prm)
    q = Polynomial.variable("q")
    step2 = complete_affine(
        momentum, np.eye(1), [q * (-prm["gain"])], rate=prm["gain"] / prm["m"], margin=0.1, name="maglev-momentum"
    )
    lam_eq, u_eq = maglev_equilibrium(prm)
    sim = SimConfig(h=1e-3, T=2.0, x0=(lam_eq, 0.0), y0=(0.0,), xi0=(0.9 * lam_eq, 0.0), input=InputSignal.constant([u_eq]))
    return Benchmark(
        name="maglev",
        model=m,
        spec=spec,
        sim=sim,
        params=prm,
        checks=[
            BenchmarkCheck("flux step", step1, flux, ("H1", "H2", "H3")),
            BenchmarkCheck("momentum step", step2, momentum, ("H1", "H2", "H3")),
            BenchmarkCheck("cascade", spec, m, checks),
        ],
        expected={"momentum_rate": prm["gain"] / prm["m"], "rate_tolerance": 0.05},
        description="Magnetic levitation with position measured",
    )


# -- cart-pendulum -------------------------------------------------------------------

CARTPEND_DEFAULTS = {"m": 1.0, "a": 1.0, "b": 0.1, "rate": 1.0, "margin": 0.1, "input_amplitude": 0.2}


def _psi(q1: float, prm: Mapping[str, float]) -> Tuple[np.ndarray, np.ndarray]:
    """``Psi(q)`` and its derivative in ``q1``."""
    m, b = prm["m"], prm["b"]
    c, s = math.cos(q1), math.sin(q1)
    D = m - b * b * c * c
    dD = 2.0 * b * b * c * s
    rm = math.sqrt(m)
    Psi = np.array([[rm / math.sqrt(D), 0.0], [-b * c / (rm * math.sqrt(D)), 1.0 / rm]])
    dPsi = np.array([
        [-0.5 * rm * D ** -1.5 * dD, 0.0],
        [b / rm * (s / math.sqrt(D) + 0.5 * c * D ** -1.5 * dD), 0.0],
    ])
    return Psi, dPsi


def cartpend_Psi(prm: Mapping[str, float]) -> Callable[[np.ndarray], np.ndarray]:
    return lambda q: _psi(float(q[0]), prm)[0]


def _potential_force(q: np.ndarray, u: np.ndarray, prm: Mapping[str, float]) -> Tuple[np.ndarray, float]:
    """``grad V(q) - G u`` and the derivative of its first entry in ``q1``."""
    uu = float(u[0]) if np.size(u) else 0.0
    return np.array([-prm["a"] * math.sin(q[0]), -uu]), -prm["a"] * math.cos(q[0])


def _momentum_rhs(q, u, prm) -> np.ndarray:
    Psi, _ = _psi(float(q[0]), prm)
    g, _ = _potential_force(q, u, prm)
    return Psi.T @ g


def _momentum_jac_y(q, u, prm) -> np.ndarray:
    Psi, dPsi = _psi(float(q[0]), prm)
    g, dg1 = _potential_force(q, u, prm)
    out = np.zeros((2, 2))
    out[:, 0] = dPsi.T @ g + Psi.T @ np.array([dg1, 0.0])
    return out


def cartpend_model(params: Optional[Mapping[str, Any]] = None) -> SystemModel:
    """``q' = Psi(q) p``, ``p' = Psi(q)^T (grad V(q) - G u)`` with ``y = q``, ``x = p``.

    Raises:
        BenchmarkError: Unless ``b^2 < m``
    """
    prm = _params(CARTPEND_DEFAULTS, params, "cartpend")
    if prm["b"] ** 2 >= prm["m"] or prm["m"] <= 0:
        raise BenchmarkError(f"cartpend: need 0 < b^2 < m, got b={prm['b']} m={prm['m']}")
    x_names, y_names, u_names = ("p1", "p2"), ("q1", "q2"), ("u",)
    f_x = ClosedFormField(
        2,
        lambda x, y, u: _momentum_rhs(y, u, prm),
        lambda x, y, u: np.zeros((2, 2)),
        lambda x, y, u: _momentum_jac_y(y, u, prm),
        x_names, y_names, u_names,
    )

    def q_dot_jac_y(x, y, u):
        _, dPsi = _psi(float(y[0]), prm)
        out = np.zeros((2, 2))
        out[:, 0] = dPsi @ x
        return out

    f_y = ClosedFormField(
        2,
        lambda x, y, u: _psi(float(y[0]), prm)[0] @ x,
        lambda x, y, u: _psi(float(y[0]), prm)[0],
        q_dot_jac_y,
        x_names, y_names, u_names,
    )
    domain = Domain(box={"q1": (-math.pi, math.pi), "q2": (-5.0, 5.0), "p1": (-5.0, 5.0), "p2": (-5.0, 5.0)})
    return SystemModel.closed_form(
        "cartpend", x_names, y_names, f_x, f_y, u_names=u_names, domain=domain,
        input=InputSignal.sinusoid([prm["input_amplitude"]], [1.0]),
        params={k: prm[k] for k in ("m", "a", "b")},
    )


def cartpend_varphi(prm: Mapping[str, float]) -> Callable[[np.ndarray], np.ndarray]:
    """``varphi(y) = -rate col(int_0^y1 sqrt(1 - b^2/m cos^2 s) ds, b/sqrt(m) sin y1 + sqrt(m) y2)``.

    The integral is an incomplete elliptic integral of the second kind,
    shifted by a quarter period so the cosine becomes a sine.
    """
    m, b, lam = prm["m"], prm["b"], prm["rate"]
    kappa = b * b / m
    offset = special.ellipeinc(math.pi / 2.0, kappa)

    def varphi(y: np.ndarray) -> np.ndarray:
        y1, y2 = float(y[0]), float(y[1])
        integral = special.ellipeinc(y1 + math.pi / 2.0, kappa) - offset
        return -lam * np.array([integral, b / math.sqrt(m) * math.sin(y1) + math.sqrt(m) * y2])

    return varphi


def cartpend_varphi_jac(prm: Mapping[str, float]) -> Callable[[np.ndarray], np.ndarray]:
    m, b, lam = prm["m"], prm["b"], prm["rate"]

    def jac(y: np.ndarray) -> np.ndarray:
        c = math.cos(float(y[0]))
        return -lam * np.array([
            [math.sqrt(1.0 - b * b / m * c * c), 0.0],
            [b / math.sqrt(m) * c, math.sqrt(m)],
        ])

    return jac


def cartpend_spec(params: Optional[Mapping[str, Any]] = None, m: Optional[SystemModel] = None) -> ObserverSpec:
    """``xi' = -rate xi + rate varphi(y) + Psi^T(y)(grad V(y) - G u)``, ``x_hat = xi - varphi(y)``."""
    prm = _params(CARTPEND_DEFAULTS, params, "cartpend")
    m = m or cartpend_model(prm)
    lam = prm["rate"]
    t = AffineTransformation(m.x_names, m.y_names, np.eye(2), cartpend_varphi(prm), cartpend_varphi_jac(prm))
    f_z = ClosedFormField(
        2,
        lambda x, y, u: _momentum_rhs(y, u, prm) - lam * x,
        lambda x, y, u: -lam * np.eye(2),
        lambda x, y, u: _momentum_jac_y(y, u, prm),
        m.x_names, m.y_names, m.u_names,
    )
    return ObserverSpec(
        name="cartpend-reference",
        model_name=m.name,
        transformation=t,
        f_z=f_z,
        metric=np.eye(2),
        rate=lam,
        margin=prm["margin"],
        mode="h3",
        inverse=InverseStrategy.AFFINE,
        certificate_P=np.eye(2),
    )


def cartpend_benchmark(params: Optional[Mapping[str, Any]] = None) -> Benchmark:
    prm = _params(CARTPEND_DEFAULTS, params, "cartpend")
    if prm["rate"] <= 0:
        raise BenchmarkError(f"cartpend: rate must be positive, got {prm['rate']}")
    m = cartpend_model(prm)
    checks = ("H1", "H2", "H3", "A2")
    spec = _tag(cartpend_spec(prm, m), "cartpend", prm, checks)
    grid = [(float(y1), 0.0) for y1 in np.linspace(-math.pi, math.pi, 200)]
    sim = SimConfig(
        h=1e-3,
        T=10.0,
        x0=(0.4, 0.3),
        y0=(math.pi / 2.0 - 0.1, -0.1),
        xi0=(0.0, 0.0),
        input=InputSignal.sinusoid([prm["input_amplitude"]], [1.0]),
    )
    return Benchmark(
        name="cartpend",
        model=m,
        spec=spec,
        sim=sim,
        params=prm,
        checks=[BenchmarkCheck("reference", spec, m, checks)],
        extra_checks=[lambda: check_pde_pendulum(cartpend_varphi_jac(prm), cartpend_Psi(prm), prm["rate"], grid)],
        expected={"rate": prm["rate"], "rate_tolerance": 0.1},
        description="Cart-pendulum with positions measured",
    )


# -- bioreactor ------------------------------------------------------------------

REACTOR_DEFAULTS = {"scale": 100.0, "rate": 0.5, "rate_w": 0.5, "root_margin": 0.3, "margin": 1.0, "noise": 0.0}
REACTOR_W = ("w1", "w2", "w3")
SQRT_FLOOR = 1e-6
DISC_TOL = 1e-9


def reactor_model() -> SystemModel:
    """``x' = -mu(x) y``, ``y' = mu(x) y`` with ``mu(x) = x (1 - x)``, all constants one."""
    x, y = Polynomial.variable("x"), Polynomial.variable("y")
    mu_y = (x - x ** 2) * y
    domain = Domain(box={"x": (0.05, 0.95), "y": (0.05, 2.0)}, constraints=[DomainConstraint.parse("y > 0")])
    return SystemModel.polynomial("reactor", ["x"], ["y"], [-mu_y], [mu_y], domain=domain)


def _forcing(y: float) -> np.ndarray:
    return np.array([math.log(y), 2.0 * y + 1.0, y + y * y])


def _forcing_jac(y: float) -> np.ndarray:
    return np.array([1.0 / y, 2.0, 1.0 + 2.0 * y])


def reactor_augmentation(m: Optional[SystemModel] = None, rate_w: float = 0.5, seed: int = 0) -> AugmentedModel:
    """``w' = -w + col(ln y, 2y + 1, y + y^2)``, contracting in the identity metric."""
    m = m or reactor_model()
    names = m.x_names + REACTOR_W

    def fn(xe, y, u):
        return -np.asarray(xe[1:], dtype=float) + _forcing(float(y[0]))

    def jac_x(xe, y, u):
        out = np.zeros((3, 4))
        out[:, 1:] = -np.eye(3)
        return out

    f_w = ClosedFormField(3, fn, jac_x, lambda xe, y, u: _forcing_jac(float(y[0])).reshape(3, 1), names, m.y_names)
    box = {"w1": (-6.0, 6.0), "w2": (0.0, 5.0), "w3": (0.0, 6.0)}
    return augment(m, f_w, np.eye(3), rate_w, w_names=REACTOR_W, w_box=box, seed=seed)


def reactor_root(w: np.ndarray, y: float) -> Tuple[float, np.ndarray, float]:
    """``r = w2/2 - sqrt(w2^2 - 4(w3 - w1 + ln y))/2`` with its gradients in ``w`` and ``y``.

    Discriminants in ``[-DISC_TOL, 0)`` are integration noise and read as
    zero; derivatives use ``SQRT_FLOOR`` for the square root when it vanishes.

    Raises:
        BenchmarkError: If the discriminant is below ``-DISC_TOL``, i.e. ``w``
            is off the invariant manifold
    """
    w1, w2, w3 = (float(v) for v in w)
    disc = w2 * w2 - 4.0 * (w3 - w1 + math.log(y))
    if disc < -DISC_TOL:
        raise BenchmarkError(f"reactor: negative discriminant {disc:.3e} at w={[w1, w2, w3]} y={y}")
    s = math.sqrt(max(disc, 0.0))
    sd = max(s, SQRT_FLOOR)
    r = 0.5 * w2 - 0.5 * s
    grad_w = np.array([-1.0 / sd, 0.5 - 0.5 * w2 / sd, 1.0 / sd])
    return r, grad_w, 1.0 / (y * sd)


def reactor_identity(x: float, y: float, w: Sequence[float]) -> float:
    """``z^2 - w2 z + (w3 - w1 + ln y)`` with ``z = x + y``; zero on the invariant manifold."""
    z = x + y
    return z * z - w[1] * z + (w[2] - w[0] + math.log(y))


def reactor_manifold(am: AugmentedModel, root_margin: float = 0.3) -> Domain:
    """Extended domain restricted to the manifold where the minus root equals ``x + y``."""
    base = am.extended().domain

    def lift(point):
        z = point["x"] + point["y"]
        if point["y"] <= 0 or point["w2"] - 2.0 * z < root_margin:
            return None
        out = dict(point)
        out["w1"] = z * z - point["w2"] * z + point["w3"] + math.log(point["y"])
        return out

    return Domain(box=dict(base.box), constraints=list(base.constraints), lift=lift)


def reactor_spec(am: AugmentedModel, params: Optional[Mapping[str, Any]] = None) -> ObserverSpec:
    """``phi = col(x + y, scale * w)``; ``f_z`` feeds the root of the quadratic back into ``z1``."""
    prm = _params(REACTOR_DEFAULTS, params, "reactor")
    c = prm["scale"]
    ext = am.extended()
    P = np.diag([1.0, c, c, c])
    y = Polynomial.variable("y")
    t = AffineTransformation(ext.x_names, ext.y_names, P, [y, 0.0, 0.0, 0.0])

    def fn(xe, yy, u):
        yv = float(yy[0])
        r, _, _ = reactor_root(xe[1:], yv)
        return np.concatenate([[-(xe[0] + yv) + r], c * (-np.asarray(xe[1:], dtype=float) + _forcing(yv))])

    def jac_x(xe, yy, u):
        _, gw, _ = reactor_root(xe[1:], float(yy[0]))
        out = np.zeros((4, 4))
        out[0, 0] = -1.0
        out[0, 1:] = gw
        out[1:, 1:] = -c * np.eye(3)
        return out

    def jac_y(xe, yy, u):
        yv = float(yy[0])
        _, _, gy = reactor_root(xe[1:], yv)
        return np.concatenate([[-1.0 + gy], c * _forcing_jac(yv)]).reshape(4, 1)

    return ObserverSpec(
        name="reactor-reference",
        model_name=am.base.name,
        transformation=t,
        f_z=ClosedFormField(4, fn, jac_x, jac_y, ext.x_names, ext.y_names, ext.u_names),
        metric=np.linalg.inv(P),
        rate=prm["rate"],
        margin=prm["margin"],
        mode="h3p",
        inverse=InverseStrategy.AFFINE,
        certificate_P=P,
        augmentation=AugmentationRecord(w_names=am.w_names, base_x_names=am.base.x_names, rate_w=am.rate_w),
    )


@dataclass
class HgoParams:
    """Bounds sized to the reactor scenario, where ``x + y = 0.5`` and ``y`` rises from 0.2.

    ``xi1_bar`` caps ``y`` at 10% above its limit; a wider cap lets
    ``xi1 = ln y + 1/9`` inside the region, where the observer has a second
    equilibrium with ``x_hat = 1``. ``sat_low``/``sat_high`` bracket the true
    ``y (6 mu^2 - mu)`` over ``mu <= 1/4``; ``xi2_star`` is the bound on ``mu``.
    """
    gain: float = 3.0
    xi1_bar: float = 0.55
    sat_low: float = -0.03
    sat_high: float = 0.02
    xi2_star: float = 0.25


@dataclass
class HgoStep:
    dxi: np.ndarray
    x_hat: float
    branch: str


def _phi_tilde(xi: np.ndarray, prm: HgoParams) -> Tuple[float, str]:
    xi2, xi3 = float(xi[1]), float(xi[2])
    ratio = xi2 / prm.xi2_star
    shaped = ratio * ratio - 3.0 * ratio + 1.0
    if xi2 > prm.xi2_star and xi3 < -xi2:
        return -1.0, "clamp"
    if 0.0 < xi2 <= prm.xi2_star and xi3 < xi2 * shaped:
        return shaped, "shaped"
    if xi2 == 0.0:
        return 1.0, "degenerate"
    return xi3 / xi2, "ratio"


def hgo_reactor_rhs(xi: np.ndarray, y: float, prm: Optional[HgoParams] = None) -> HgoStep:
    """High-gain observer for the reactor in coordinates ``(ln y, mu, mu')``.

    Branches are evaluated in the order clamp, shaped, ratio.
    """
    prm = prm or HgoParams()
    xi = np.asarray(xi, dtype=float)
    ell = prm.gain
    y = max(float(y), 1e-300)
    e_y = xi[0] - math.log(y)
    e1 = math.exp(min(xi[0], 700.0))
    phi_t, branch = _phi_tilde(xi, prm)
    inside = 1.0 if xi[0] <= math.log(prm.xi1_bar) else 0.0
    nominal = np.array([
        xi[1],
        -xi[2] * min(e1, prm.xi1_bar),
        float(np.clip(e1 * (2.0 * xi[1] ** 2 - xi[2] * phi_t), prm.sat_low, prm.sat_high)),
    ])
    injection = np.array([
        -3.0 * ell,
        -3.0 * ell ** 2,
        3.0 * ell * xi[2] * inside + ell ** 3 * max(math.exp(-min(xi[0], 700.0)), 1.0 / prm.xi1_bar),
    ])
    return HgoStep(dxi=nominal + injection * e_y, x_hat=0.5 * (1.0 - phi_t), branch=branch)


class HighGainReactorObserver:
    """Baseline observer with the same interface as ContractingObserver."""

    def __init__(self, params: Optional[HgoParams] = None):
        self.params = params or HgoParams()
        self.name = "reactor-hgo"
        self.n_xi = 3
        self.branches: Dict[str, int] = {}
        self.last_branch = ""

    def rhs(self, xi: np.ndarray, y: np.ndarray, u: np.ndarray, t: float = 0.0) -> np.ndarray:
        step = hgo_reactor_rhs(xi, float(np.atleast_1d(y)[0]), self.params)
        self.last_branch = step.branch
        self.branches[step.branch] = self.branches.get(step.branch, 0) + 1
        return step.dxi

    def estimate(self, xi: np.ndarray, y: np.ndarray) -> np.ndarray:
        phi_t, _ = _phi_tilde(np.asarray(xi, dtype=float), self.params)
        return np.array([0.5 * (1.0 - phi_t)])


def reactor_benchmark(params: Optional[Mapping[str, Any]] = None) -> Benchmark:
    prm = _params(REACTOR_DEFAULTS, params, "reactor")
    if prm["scale"] <= 0 or prm["rate"] <= 0:
        raise BenchmarkError("reactor: scale and rate must be positive")
    base = reactor_model()
    am = reactor_augmentation(base, rate_w=prm["rate_w"])
    checks = ("H1", "H2", "H3", "A2")
    spec = _tag(reactor_spec(am, prm), "reactor", prm, checks)
    manifold = reactor_manifold(am, prm["root_margin"])
    x0, y0 = 0.3, 0.2
    z0 = x0 + y0
    # identity initial condition for the auxiliary states; it sits on the plus root at t = 0
    identity_w0 = (z0 * z0 + math.log(y0), 0.0, 0.0)
    # same identity with w2 - 2 z > 0, so the minus root stays exact for all time
    branch_w2 = 2.0
    exact_w0 = (z0 * z0 - branch_w2 * z0 + math.log(y0), branch_w2, 0.0)
    sim = SimConfig(h=1e-3, T=20.0, x0=(x0,), y0=(y0,), w0=identity_w0, xi0=(0.5, 0.0, 0.0, 0.0), noise=prm["noise"])
    sdm = TransverseWitness(Psi=lambda chi: np.ones((2, 1)), metric=lambda chi: np.eye(1))
    return Benchmark(
        name="reactor",
        model=am,
        spec=spec,
        sim=sim,
        params=prm,
        checks=[BenchmarkCheck("immersion", spec, am, checks, region=manifold)],
        extra_checks=[lambda: check_semidefinite_metric(base, sdm, n_samples=200)],
        expected={"final_error": 1e-3, "identity": 1e-6, "hgo_xi0": (1.0, 0.1, 0.0)},
        baseline=HighGainReactorObserver(),
        exact_w0=exact_w0,
        description="Bioreactor with non-monotonic growth; observer with three auxiliary states",
    )


# -- registry ----------------------------------------------------------------------

BENCHMARKS: Dict[str, Callable[[Optional[Mapping[str, Any]]], Benchmark]] = {
    "poly19": poly19_benchmark,
    "maglev": maglev_benchmark,
    "cartpend": cartpend_benchmark,
    "reactor": reactor_benchmark,
}

DEFAULT_PARAMS: Dict[str, Dict[str, float]] = {
    "poly19": POLY19_DEFAULTS,
    "maglev": MAGLEV_DEFAULTS,
    "cartpend": CARTPEND_DEFAULTS,
    "reactor": REACTOR_DEFAULTS,
}


def benchmark(name: str, params: Optional[Mapping[str, Any]] = None) -> Benchmark:
    """
    Build a benchmark by name.

    Args:
        name: One of poly19, maglev, cartpend, reactor
        params: Overrides for the benchmark's parameters

    Returns:
        Fully populated Benchmark

    Raises:
        UnknownBenchmarkError: If the name is not registered
        BenchmarkError: On unknown or invalid parameters
    """
    if name not in BENCHMARKS:
        raise UnknownBenchmarkError(f"Unknown benchmark '{name}'; available: {', '.join(sorted(BENCHMARKS))}")
    bench = BENCHMARKS[name](params)
    print(f"[benchmark] Built: {name} params={bench.params}", file=sys.stderr)
    return bench


def run_benchmark_checks(bench: Benchmark, n_samples: int = 1000, seed: int = 0, jobs: int = 1) -> List[CheckReport]:
    """Every reference check, named ``<step>/<condition>``, followed by the extra checks."""
    reports: List[CheckReport] = []
    for bc in bench.checks:
        for r in run_checks(bc.spec, bc.model, bc.checks, region=bc.region, n_samples=n_samples, seed=seed, jobs=jobs):
            reports.append(replace(r, condition=f"{bc.label}/{r.condition}"))
    reports.extend(check() for check in bench.extra_checks)
    print(f"[benchmark] Checks complete: {bench.name} ({len(reports)} reports)", file=sys.stderr)
    return reports


def simulation_summary(bench: Benchmark, traj: Trajectory) -> Dict[str, Any]:
    """Final and post-transient error, fitted decay rate, and how they compare with ``expected``."""
    T = float(traj.times[-1])
    transient = float(bench.expected.get("transient", T / 2))
    summary: Dict[str, Any] = {
        "final_time": T,
        "final_error": float(traj.err[-1]),
        "post_transient_rms": traj.rms_error(min(transient, T)),
        "exit_reason": traj.exit_reason,
    }
    try:
        summary["fitted_rate"] = fit_rate(traj, (0.0, min(transient, T))).rate
    except FitError:
        summary["fitted_rate"] = None
    if "final_error" in bench.expected:
        summary["final_error_ok"] = summary["final_error"] <= bench.expected["final_error"]
    if "post_transient_rms" in bench.expected:
        summary["post_transient_rms_ok"] = summary["post_transient_rms"] <= bench.expected["post_transient_rms"]
    return summary
