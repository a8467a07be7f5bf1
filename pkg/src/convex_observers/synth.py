"""Convex synthesis of contracting reduced-order observers.

The observer searches for a coordinate change ``z = phi(x, y)`` in which the
unmeasured dynamics contract. With ``phi = P x + varphi(y)`` the conditions

* monotonicity ``Phi_x + Phi_x^T >= k I``,
* correctness ``Phi_x f_x + Phi_y f_y = f_z``,
* contraction ``F + F^T + 2 rate P <= 0`` with ``F = d f_z / d x``

are linear in the coefficients of ``P``, ``varphi`` and ``f_z`` and are
compiled to one SOS program. The Schur-complement variant (``h4``) trades the
symmetric ``P`` for a full ``Phi_x`` plus a separate metric, at the price of a
scalar ``r`` searched on a grid.
"""

import math
import sys
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .model import (
    AffineTransformation,
    AugmentedModel,
    PolynomialField,
    PolynomialTransformation,
    SystemModel,
    Transformation,
    VectorField,
)
from .parallel import run_parallel
from .poly import (
    PolyLike,
    PolyMatrix,
    Polynomial,
    as_polynomial,
    jacobian,
    lie_derivative,
    monomial,
    monomial_exponents,
)
from .sdp import InfeasibilityCertificate, SdpStatus, SolverOptions
from .sos import AUX_PREFIX, SosProgram, SosResult, split_affine

THETA_PREFIX = "_t"
MODES = ("h3", "h4", "h3p", "h4p")
DEFAULT_R_GRID = tuple(2.0 ** k for k in range(-4, 5))

MetricFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SynthesisError(Exception):
    """Synthesis problem cannot be set up as requested."""
    pass


class InverseStrategy(str, Enum):
    AFFINE = "AffineClosedForm"
    NEWTON = "NewtonMonotone"


@dataclass
class SynthesisConfig:
    """Degrees, rate and search options for one synthesis run."""
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
    normalize_trace: bool = True
    bisect: bool = True
    bisect_steps: int = 8
    jobs: int = 1
    solver: SolverOptions = field(default_factory=SolverOptions)

    def validate(self) -> None:
        """
        Raises:
            SynthesisError: On a negative degree or rate, non-positive margin, unknown mode or bad r grid
        """
        if self.phi_degree < 0 or self.fz_degree < 0 or self.metric_degree < 0:
            raise SynthesisError("Basis degrees must be non-negative")
        if self.gram_degree is not None and self.gram_degree < 0:
            raise SynthesisError("Gram degree must be non-negative")
        if self.rate < 0 or not math.isfinite(self.rate):
            raise SynthesisError(f"Rate must be a finite non-negative number, got {self.rate}")
        if self.margin <= 0:
            raise SynthesisError(f"Monotonicity margin k must be positive, got {self.margin}")
        if self.q_floor <= 0:
            raise SynthesisError(f"Q floor must be positive, got {self.q_floor}")
        if self.mode not in MODES:
            raise SynthesisError(f"Unknown mode '{self.mode}', expected one of {', '.join(MODES)}")
        if not self.r_grid or any(r <= 0 for r in self.r_grid):
            raise SynthesisError("r grid must be a non-empty list of positive numbers")
        if self.y_dependent_metric and self.base_mode == "h4":
            raise SynthesisError("Output-dependent metrics are only available with the h3 conditions")
        if self.bisect_steps < 1:
            raise SynthesisError("bisect_steps must be at least 1")

    @property
    def base_mode(self) -> str:
        return self.mode[:2]


# -- observer description -------------------------------------------------


@dataclass
class AugmentationRecord:
    w_names: Tuple[str, ...]
    base_x_names: Tuple[str, ...]
    rate_w: float


@dataclass
class ObserverSpec:
    """A contracting observer ``xi' = f_z(x_hat, y, u)``, ``x_hat = phi^L(xi, y)``.

    ``metric`` is the contraction metric in z coordinates, either a constant
    matrix or ``M(x, y)``. ``certificate_P`` is the ``P`` the convex
    conditions were stated in, when there is one.
    """
    name: str
    model_name: str
    transformation: Transformation
    f_z: VectorField
    metric: Union[np.ndarray, MetricFn]
    rate: float
    margin: float = 0.0
    mode: str = "h3"
    inverse: InverseStrategy = InverseStrategy.AFFINE
    certificate_P: Optional[np.ndarray] = None
    q_floor: float = 1e-3
    r: Optional[float] = None
    augmentation: Optional[AugmentationRecord] = None
    theta: Dict[str, float] = field(default_factory=dict)
    theta_labels: Dict[str, str] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def x_names(self) -> Tuple[str, ...]:
        return self.transformation.x_names

    @property
    def y_names(self) -> Tuple[str, ...]:
        return self.transformation.y_names

    @property
    def dim(self) -> int:
        return self.transformation.dim

    @property
    def is_augmented(self) -> bool:
        return self.augmentation is not None

    def M(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if callable(self.metric):
            return np.asarray(self.metric(np.asarray(x, float), np.asarray(y, float)), dtype=float)
        return np.asarray(self.metric, dtype=float)

    def phi(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.transformation.phi(x, y)


@dataclass
class SynthesisResult:
    status: SdpStatus
    spec: Optional[ObserverSpec]
    rate: float
    largest_feasible_rate: Optional[float] = None
    r: Optional[float] = None
    certificate: Optional[InfeasibilityCertificate] = None
    sos: Optional[SosResult] = None
    theta: Dict[str, float] = field(default_factory=dict)
    theta_labels: Dict[str, str] = field(default_factory=dict)
    margins: Dict[str, float] = field(default_factory=dict)
    stats: Dict[str, Any] = field(default_factory=dict)
    timing: float = 0.0
    reason: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == SdpStatus.FEASIBLE


# -- parameterization -----------------------------------------------------


@dataclass
class Parameterization:
    """Unknown coefficients of ``Phi_x``, ``varphi``, ``f_z`` (and the h4 metric).

    Every decision variable is a polynomial variable named ``_t<k>``; ``slots``
    records which matrix entry or which monomial of which component it scales.
    """
    x_names: Tuple[str, ...]
    y_names: Tuple[str, ...]
    u_names: Tuple[str, ...]
    mode: str
    P: PolyMatrix
    metric: Optional[PolyMatrix]
    varphi: List[Polynomial]
    f_z: List[Polynomial]
    theta: List[str]
    labels: Dict[str, str]
    slots: Dict[str, Tuple[str, int, int, Dict[str, int]]]
    trace_theta: List[str]

    @property
    def n(self) -> int:
        return len(self.x_names)

    @property
    def fz_theta(self) -> List[str]:
        return [t for t in self.theta if self.slots[t][0] == "f_z"]

    @property
    def core_theta(self) -> List[str]:
        """Decision variables left once ``f_z`` is fixed by correctness."""
        return [t for t in self.theta if self.slots[t][0] != "f_z"]

    @property
    def phi(self) -> List[Polynomial]:
        xs = PolyMatrix.column([Polynomial.variable(v) for v in self.x_names])
        Px = self.P @ xs
        return [Px[i, 0] + self.varphi[i] for i in range(self.n)]

    def assign(
        self,
        P: Union[np.ndarray, PolyMatrix, None] = None,
        varphi: Optional[Sequence[PolyLike]] = None,
        f_z: Optional[Sequence[PolyLike]] = None,
        metric: Optional[np.ndarray] = None,
    ) -> Dict[str, float]:
        """Decision values that reproduce the given ``P``, ``varphi``, ``f_z`` and metric."""
        sources: Dict[str, Any] = {}
        if P is not None:
            sources["P"] = P if isinstance(P, PolyMatrix) else PolyMatrix.constant(P)
            sources["T"] = sources["P"]
        if metric is not None:
            sources["metric"] = PolyMatrix.constant(metric)
        if varphi is not None:
            sources["varphi"] = [as_polynomial(p) for p in varphi]
        if f_z is not None:
            sources["f_z"] = [as_polynomial(p) for p in f_z]
        values: Dict[str, float] = {}
        for name in self.theta:
            kind, i, j, mono = self.slots[name]
            if kind not in sources:
                continue
            src = sources[kind]
            entry = src[i, j] if isinstance(src, PolyMatrix) else src[i]
            values[name] = entry.coefficient(mono)
        return values


class _Counter:
    def __init__(self):
        self.names: List[str] = []
        self.labels: Dict[str, str] = {}
        self.slots: Dict[str, Tuple[str, int, int, Dict[str, int]]] = {}

    def new(self, label: str, kind: str, i: int, j: int, mono: Dict[str, int]) -> Polynomial:
        name = f"{THETA_PREFIX}{len(self.names)}"
        self.names.append(name)
        self.labels[name] = label
        self.slots[name] = (kind, i, j, mono)
        return Polynomial.variable(name)


def _mono_label(names: Sequence[str], exps: Sequence[int]) -> str:
    text = str(monomial(names, exps)) if any(exps) else "1"
    return text


def _template(counter: _Counter, kind: str, i: int, j: int, names: Sequence[str], max_degree: int, min_degree: int, label: str) -> Polynomial:
    acc = Polynomial.zero()
    for exps in monomial_exponents(len(names), max_degree, min_degree):
        mono = {v: e for v, e in zip(names, exps) if e}
        t = counter.new(f"{label}:{_mono_label(names, exps)}", kind, i, j, mono)
        acc = acc + (t * monomial(names, exps) if any(exps) else t)
    return acc


def _check_names(m: SystemModel) -> None:
    for v in m.x_names + m.y_names + m.u_names:
        if v.startswith(THETA_PREFIX) or v.startswith(AUX_PREFIX):
            raise SynthesisError(f"Variable name '{v}' is reserved for decision or auxiliary variables")


def parameterize(m: SystemModel, cfg: SynthesisConfig) -> Parameterization:
    """Linear templates for ``phi = P x + varphi(y)`` and ``f_z``."""
    _check_names(m)
    mode = cfg.base_mode
    n = m.n_x
    counter = _Counter()
    rows: List[List[Polynomial]] = [[Polynomial.zero()] * n for _ in range(n)]
    trace: List[str] = []
    metric: Optional[PolyMatrix] = None
    if mode == "h3":
        for i in range(n):
            for j in range(i, n):
                if cfg.y_dependent_metric:
                    entry = _template(counter, "P", i, j, m.y_names, cfg.metric_degree, 0, f"P[{i},{j}]")
                else:
                    entry = counter.new(f"P[{i},{j}]", "P", i, j, {})
                rows[i][j] = entry
                rows[j][i] = entry
                if i == j:
                    # the first decision variable of a diagonal entry is its constant part
                    trace.append(counter.names[-1] if not cfg.y_dependent_metric else _constant_slot(counter, i))
        P = PolyMatrix(rows)
    else:
        for i in range(n):
            for j in range(n):
                rows[i][j] = counter.new(f"T[{i},{j}]", "T", i, j, {})
        P = PolyMatrix(rows)
        mrows: List[List[Polynomial]] = [[Polynomial.zero()] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                entry = counter.new(f"metric[{i},{j}]", "metric", i, j, {})
                mrows[i][j] = entry
                mrows[j][i] = entry
                if i == j:
                    trace.append(counter.names[-1])
        metric = PolyMatrix(mrows)
    varphi = [
        _template(counter, "varphi", i, 0, m.y_names, cfg.phi_degree, 1, f"varphi[{i}]") if cfg.phi_degree >= 1 else Polynomial.zero()
        for i in range(n)
    ]
    names = m.x_names + m.y_names + m.u_names
    f_z = [_template(counter, "f_z", i, 0, names, cfg.fz_degree, 0, f"f_z[{i}]") for i in range(n)]
    return Parameterization(
        x_names=m.x_names,
        y_names=m.y_names,
        u_names=m.u_names,
        mode=mode,
        P=P,
        metric=metric,
        varphi=varphi,
        f_z=f_z,
        theta=list(counter.names),
        labels=dict(counter.labels),
        slots=dict(counter.slots),
        trace_theta=trace,
    )


def _constant_slot(counter: _Counter, i: int) -> str:
    for name in counter.names:
        kind, a, b, mono = counter.slots[name]
        if kind == "P" and a == i and b == i and not mono:
            return name
    raise SynthesisError(f"No constant term for P[{i},{i}]")


# -- correctness ----------------------------------------------------------


@dataclass
class CorrectnessSystem:
    """Coefficient matching for ``Phi_x f_x + Phi_y f_y - f_z = 0``: ``A theta = b``."""
    A: np.ndarray
    b: np.ndarray
    labels: List[str]
    theta: List[str]
    completed: List[Polynomial]

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    def residual(self, values: Mapping[str, float]) -> float:
        """Largest coefficient of the correctness residual at ``values`` (missing entries read as 0)."""
        if not self.rows:
            return 0.0
        t = np.array([values.get(name, 0.0) for name in self.theta])
        return float(np.max(np.abs(self.A @ t - self.b)))

    def worst_row(self, values: Mapping[str, float]) -> str:
        t = np.array([values.get(name, 0.0) for name in self.theta])
        return self.labels[int(np.argmax(np.abs(self.A @ t - self.b)))]


def _flow(m: SystemModel) -> Tuple[List[Polynomial], Tuple[str, ...]]:
    fx, fy = m.polynomials()
    return fx + fy, m.x_names + m.y_names


def _require_polynomial(m: SystemModel) -> None:
    if not m.is_polynomial:
        raise SynthesisError(f"{m.name}: SOS synthesis needs a polynomial model")


def build_correctness(m: SystemModel, param: Parameterization) -> CorrectnessSystem:
    """Exact linear system tying the ``f_z`` template to ``Phi_x f_x + Phi_y f_y``.

    Raises:
        SynthesisError: If ``Phi f`` has monomials the ``f_z`` template cannot express
    """
    _require_polynomial(m)
    field_polys, names = _flow(m)
    state = set(m.x_names + m.y_names + m.u_names)
    fz_monos = [set(_monomial_keys(p, param.theta)) for p in param.f_z]
    completed: List[Polynomial] = []
    uncovered: List[str] = []
    A_rows: List[Dict[str, float]] = []
    b: List[float] = []
    labels: List[str] = []
    for i, phi_i in enumerate(param.phi):
        lie = lie_derivative(phi_i, field_polys, names)
        completed.append(lie)
        for key in _monomial_keys(lie, param.theta):
            if key not in fz_monos[i]:
                uncovered.append(f"f_z[{i}]:{_key_label(key)}")
        residual = lie - param.f_z[i]
        split = split_affine(residual, param.theta, label=f"correctness[{i}]")
        stray = set(split.variables) - state
        if stray:
            raise SynthesisError(f"Unexpected variables {sorted(stray)} in the correctness residual")
        for exps, (c0, lin) in split.coefficient_rows().items():
            lin = {k: v for k, v in lin.items() if v != 0.0}
            if not lin and c0 == 0.0:
                continue
            A_rows.append(lin)
            b.append(-c0)
            labels.append(f"f_z[{i}]:{_mono_label(split.variables, exps)}")
    if uncovered:
        raise SynthesisError(
            "f_z basis cannot express Phi_x f_x + Phi_y f_y; uncovered monomials: " + ", ".join(sorted(set(uncovered)))
        )
    index = {name: k for k, name in enumerate(param.theta)}
    A = np.zeros((len(A_rows), len(param.theta)))
    for r, lin in enumerate(A_rows):
        for name, v in lin.items():
            A[r, index[name]] = v
    return CorrectnessSystem(A=A, b=np.array(b), labels=labels, theta=list(param.theta), completed=completed)


def _monomial_keys(p: Polynomial, theta: Sequence[str]) -> List[Tuple[Tuple[str, int], ...]]:
    """Monomials of ``p`` in its non-decision variables, as sorted ``(name, exponent)`` pairs."""
    split = split_affine(p, theta)
    keys = []
    for exps, (c0, lin) in split.coefficient_rows().items():
        if c0 == 0.0 and not any(lin.values()):
            continue
        keys.append(tuple((v, e) for v, e in zip(split.variables, exps) if e))
    return keys


def _key_label(key: Tuple[Tuple[str, int], ...]) -> str:
    return "*".join(v if e == 1 else f"{v}^{e}" for v, e in key) or "1"


# -- SOS assembly -----------------------------------------------------------


def _contraction_matrix(m: SystemModel, cfg: SynthesisConfig, param: Parameterization, completed: List[Polynomial], rate: float) -> PolyMatrix:
    F = jacobian(completed, m.x_names)
    n = m.n_x
    if rate > 0:
        Q = param.P * (2.0 * rate)
    else:
        Q = PolyMatrix.identity(n) * cfg.q_floor
    S = F.sym() + Q
    if cfg.y_dependent_metric:
        _, fy = m.polynomials()
        for k, v in enumerate(m.y_names):
            dP = param.P.differentiate(v)
            S = S + dP * fy[k]
    return S


def _schur_block(m: SystemModel, cfg: SynthesisConfig, param: Parameterization, completed: List[Polynomial], rate: float, r: float) -> PolyMatrix:
    n = m.n_x
    F = jacobian(completed, m.x_names)
    Phi = param.P
    Pm = param.metric
    X = Phi - F * (r / 2.0)
    B = Phi + F * (r / 2.0)
    corner = X.sym() - Pm
    if rate > 0:
        c = math.sqrt(2.0 * rate * r)
        Z = PolyMatrix.zeros(n, n)
        return PolyMatrix.block([
            [corner, B.T, Phi.T * c],
            [B, Pm, Z],
            [Phi * c, Z, Pm],
        ])
    corner = corner - PolyMatrix.identity(n) * (r * cfg.q_floor)
    return PolyMatrix.block([[corner, B.T], [B, Pm]])


def _program(m: SystemModel, cfg: SynthesisConfig, param: Parameterization, completed: List[Polynomial], rate: float, r: Optional[float]) -> SosProgram:
    prog = SosProgram(param.core_theta)
    n = m.n_x
    if cfg.normalize_trace:
        prog.add_linear({t: 1.0 for t in param.trace_theta}, float(n), label="trace")
    mono = param.P.sym() - PolyMatrix.identity(n) * cfg.margin
    prog.add_matrix_sos(mono, sense="psd", label="H1")
    if param.mode == "h3":
        S = _contraction_matrix(m, cfg, param, completed, rate)
        prog.add_matrix_sos(S, degree=cfg.gram_degree, sense="nsd", label="H3")
    else:
        prog.add_matrix_sos(param.metric - PolyMatrix.identity(n) * cfg.q_floor, sense="psd", label="metric")
        block = _schur_block(m, cfg, param, completed, rate, r)
        prog.add_matrix_sos(block, degree=cfg.gram_degree, sense="psd", label="H4")
    prog.bound_decisions(cfg.theta_bound)
    return prog


def _solve_at(
    m: SystemModel, cfg: SynthesisConfig, param: Parameterization, completed: List[Polynomial], rate: float, jobs: int
) -> Tuple[Optional[float], SosResult]:
    """One feasibility decision at ``rate``; h4 walks the r grid and keeps the first feasible r."""
    if param.mode == "h3":
        return None, _program(m, cfg, param, completed, rate, None).solve(cfg.solver)
    grid = list(cfg.r_grid)
    tasks = [lambda r=r: _program(m, cfg, param, completed, rate, r).solve(cfg.solver) for r in grid]
    results = run_parallel(tasks, jobs=jobs, label=f"r-grid rate={rate:g}")
    for r, res in zip(grid, results):
        if res.feasible:
            return r, res
    # no r works; report the one closest to feasibility
    best = max(range(len(grid)), key=lambda k: results[k].slack if results[k].slack is not None else -math.inf)
    return grid[best], results[best]


def _gram_margins(res: SosResult) -> Dict[str, float]:
    return {
        label: float(np.linalg.eigvalsh(G)[0]) if G.size else 0.0
        for label, G in res.grams.items()
    }


def _stats(res: SosResult, param: Parameterization) -> Dict[str, Any]:
    out: Dict[str, Any] = {
        "decisions": len(param.theta),
        "free_decisions": len(param.core_theta),
        "gram_sizes": {label: len(b) for label, b in res.bases.items()},
    }
    sol = res.solution
    if sol is not None:
        out.update({
            "iterations": sol.iterations,
            "primal_residual": sol.primal_residual,
            "dual_residual": sol.dual_residual,
            "gap": sol.gap,
            "slack": sol.slack,
            "slack_upper": sol.slack_upper,
        })
    return out


def _spec_from(
    m: SystemModel,
    cfg: SynthesisConfig,
    param: Parameterization,
    res: SosResult,
    rate: float,
    r: Optional[float],
) -> ObserverSpec:
    theta = dict(res.theta)
    P_sym = param.P.partial(theta)
    varphi = [p.partial(theta).trim() for p in param.varphi]
    if P_sym.is_constant():
        P: Union[np.ndarray, PolyMatrix] = P_sym.to_array()
        if param.mode == "h3":
            P = (P + P.T) / 2.0
    else:
        P = P_sym
    if param.mode == "h4":
        Pm = param.metric.partial(theta).to_array()
        Pm = (Pm + Pm.T) / 2.0
        metric: Union[np.ndarray, MetricFn] = np.linalg.inv(Pm)
        certificate = Pm
    elif isinstance(P, np.ndarray):
        metric = np.linalg.inv(P)
        certificate = P
    else:
        metric = _inverse_of(P, m.y_names)
        certificate = None
    return complete_affine(
        m,
        P,
        varphi,
        rate=rate,
        margin=cfg.margin,
        metric=metric,
        mode=param.mode,
        certificate_P=certificate,
        q_floor=cfg.q_floor,
        r=r,
        theta={param.labels[k]: v for k, v in theta.items()},
        theta_labels=dict(param.labels),
        metadata={"synthesized": True},
    )


def _inverse_of(P: PolyMatrix, y_names: Sequence[str]) -> MetricFn:
    def metric(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.linalg.inv(P.evaluate(dict(zip(y_names, np.atleast_1d(y)))))

    return metric


def synthesize(m: SystemModel, cfg: SynthesisConfig) -> SynthesisResult:
    """
    Search for ``(P, varphi, f_z)`` meeting the monotonicity, correctness and contraction conditions.

    Args:
        m: Polynomial plant
        cfg: Degrees, rate, mode and search options

    Returns:
        SynthesisResult; Feasible carries the ObserverSpec, Infeasible the
        dual certificate and, with ``cfg.bisect``, the largest feasible rate

    Raises:
        SynthesisError: If the model is not polynomial or the f_z basis is too small
    """
    cfg.validate()
    _require_polynomial(m)
    start = time.perf_counter()
    param = parameterize(m, cfg)
    system = build_correctness(m, param)
    print(
        f"[synth] Start: model={m.name} mode={param.mode} rate={cfg.rate} "
        f"decisions={len(param.theta)} correctness_rows={system.rows}",
        file=sys.stderr,
    )
    r, res = _solve_at(m, cfg, param, system.completed, cfg.rate, cfg.jobs)
    result = SynthesisResult(
        status=res.status,
        spec=None,
        rate=cfg.rate,
        r=r,
        certificate=res.certificate,
        sos=res,
        theta=dict(res.theta),
        theta_labels=dict(param.labels),
        margins=_gram_margins(res),
        stats=_stats(res, param),
        reason=res.reason,
    )
    if res.feasible:
        result.spec = _spec_from(m, cfg, param, res, cfg.rate, r)
        result.largest_feasible_rate = cfg.rate
    elif cfg.bisect and cfg.rate > 0:
        result.largest_feasible_rate = _largest_feasible_rate(m, cfg, param, system.completed, cfg.rate)
    result.timing = time.perf_counter() - start
    print(
        f"[synth] Complete: status={result.status.value} r={r} "
        f"largest_feasible_rate={result.largest_feasible_rate} elapsed={result.timing:.2f}s",
        file=sys.stderr,
    )
    return result


def _largest_feasible_rate(
    m: SystemModel, cfg: SynthesisConfig, param: Parameterization, completed: List[Polynomial], hi: float
) -> Optional[float]:
    """k-section on ``[0, hi]``; feasibility is monotone in the rate, so each round keeps one bracket."""
    lo = 0.0
    found: Optional[float] = None
    points_per_round = max(1, cfg.jobs)
    inner_jobs = 1 if points_per_round > 1 else cfg.jobs
    for step in range(cfg.bisect_steps):
        points = [lo + (hi - lo) * (k + 1) / (points_per_round + 1) for k in range(points_per_round)]
        tasks = [lambda rate=rate: _solve_at(m, cfg, param, completed, rate, inner_jobs)[1].feasible for rate in points]
        verdicts = run_parallel(tasks, jobs=points_per_round, label=f"rate bisection step {step}")
        feasible = [p for p, ok in zip(points, verdicts) if ok]
        infeasible = [p for p, ok in zip(points, verdicts) if not ok]
        if feasible:
            lo = max(feasible)
            found = lo
        above = [p for p in infeasible if p > lo]
        hi = min(above) if above else hi
    print(f"[synth] Rate bisection: largest feasible {found}", file=sys.stderr)
    return found


def rate_sweep(m: SystemModel, cfg: SynthesisConfig, rates: Sequence[float], jobs: Optional[int] = None) -> List[Tuple[float, SdpStatus]]:
    """Feasibility verdict at each rate of a grid."""
    cfg.validate()
    param = parameterize(m, cfg)
    system = build_correctness(m, param)
    inner = 1 if (jobs or cfg.jobs) > 1 else cfg.jobs
    tasks = [lambda rate=rate: _solve_at(m, cfg, param, system.completed, rate, inner)[1].status for rate in rates]
    statuses = run_parallel(tasks, jobs=jobs or cfg.jobs, label="rate sweep")
    return list(zip(rates, statuses))


# -- augmentation -------------------------------------------------------------


def synthesize_immersed(
    am: AugmentedModel,
    cfg: SynthesisConfig,
    f_w_template: Optional[Sequence[PolyLike]] = None,
    template_params: Sequence[str] = (),
) -> SynthesisResult:
    """Synthesis over the extended state ``col(x, w)`` with ``f_w`` held fixed.

    ``f_w_template`` lets the augmentation carry its own unknowns; they
    multiply the unknowns of ``phi`` in the correctness condition and are
    rejected with a BilinearError.

    Raises:
        BilinearError: If a template with decision variables is given
        SynthesisError: If the extended model is not polynomial
    """
    cfg.validate()
    base_cfg = replace(cfg, mode=cfg.base_mode)
    if am.n_w == 0 and f_w_template is None:
        return synthesize(am.base, base_cfg)
    ext = am.extended()
    _require_polynomial(ext)
    if f_w_template is not None:
        polys = [as_polynomial(p) for p in f_w_template]
        fx, fy = am.base.polynomials()
        param = parameterize(ext, base_cfg)
        names = ext.x_names + ext.y_names
        decisions = list(param.theta) + list(template_params)
        for i, phi_i in enumerate(param.phi):
            lie = lie_derivative(phi_i, fx + polys + fy, names)
            split_affine(lie - param.f_z[i], decisions, label=f"correctness[{i}] with f_w template")
        raise SynthesisError("f_w template has no decision variables; pass it through augment() instead")
    result = synthesize(ext, base_cfg)
    if result.spec is not None:
        result.spec.augmentation = AugmentationRecord(
            w_names=am.w_names, base_x_names=am.base.x_names, rate_w=am.rate_w
        )
        result.spec.mode = cfg.mode
    return result


# -- constructions ------------------------------------------------------------


def complete_transformation(
    model: SystemModel,
    transformation: Transformation,
    rate: float = 0.0,
    margin: float = 0.0,
    metric: Union[np.ndarray, MetricFn, None] = None,
    name: Optional[str] = None,
    **fields: Any,
) -> ObserverSpec:
    """ObserverSpec whose ``f_z = Phi_x f_x + Phi_y f_y`` is built symbolically.

    The default metric is ``P^-1`` for a constant affine transformation and
    the identity otherwise.

    Raises:
        SynthesisError: If the model or the transformation is not polynomial
    """
    _require_polynomial(model)
    phi = transformation.symbolic()
    if phi is None:
        raise SynthesisError("H2 completion needs a polynomial transformation")
    if transformation.x_names != model.x_names or transformation.y_names != model.y_names:
        raise SynthesisError("Transformation and model disagree on state or output names")
    field_polys, names = _flow(model)
    f_z = [lie_derivative(p, field_polys, names) for p in phi]
    if metric is None:
        if isinstance(transformation, AffineTransformation) and transformation.constant_metric:
            P = transformation.P_const
            metric = np.linalg.inv((P + P.T) / 2.0)
        else:
            metric = np.eye(transformation.dim)
    inverse = InverseStrategy.AFFINE if transformation.is_affine else InverseStrategy.NEWTON
    fields.setdefault("inverse", inverse)
    if "certificate_P" not in fields and isinstance(transformation, AffineTransformation) and transformation.constant_metric:
        fields["certificate_P"] = transformation.P_const
    return ObserverSpec(
        name=name or f"{model.name}-observer",
        model_name=model.name,
        transformation=transformation,
        f_z=PolynomialField(f_z, model.x_names, model.y_names, model.u_names),
        metric=metric,
        rate=float(rate),
        margin=float(margin),
        **fields,
    )


def complete_affine(
    model: SystemModel,
    P: Union[np.ndarray, PolyMatrix],
    varphi: Sequence[PolyLike],
    rate: float = 0.0,
    **kwargs: Any,
) -> ObserverSpec:
    """Shortcut for ``phi = P x + varphi(y)``."""
    if not isinstance(P, PolyMatrix):
        P = np.atleast_2d(np.asarray(P, dtype=float))
    transformation = AffineTransformation(model.x_names, model.y_names, P, list(varphi))
    return complete_transformation(model, transformation, rate=rate, **kwargs)


@dataclass
class SdoTransform:
    """``phi = H - gain * Lambda * y`` for a strongly differentially observable plant.

    ``f_z = (S - gain * Lambda e_1^T) H + b`` holds exactly, with ``S`` the
    upward shift and ``b = (0, ..., 0, L_f^n f_y)``.
    """
    transformation: PolynomialTransformation
    H: List[Polynomial]
    S: np.ndarray
    Q: np.ndarray
    A: np.ndarray
    b: List[Polynomial]
    f_z: List[Polynomial]
    gain: float
    Lambda: np.ndarray


def sdo_transform(m: SystemModel, gain: float, Lambda: Sequence[float]) -> SdoTransform:
    """Coordinates from iterated Lie derivatives of the output.

    Raises:
        SynthesisError: If the plant has more than one output, ``Lambda`` has
            the wrong length, or ``s^n + Lambda_1 s^(n-1) + ... + Lambda_n`` is not Hurwitz
    """
    _require_polynomial(m)
    if m.n_y != 1:
        raise SynthesisError(f"SDO transform needs a single output, {m.name} has {m.n_y}")
    n = m.n_x
    lam = np.asarray(Lambda, dtype=float).reshape(-1)
    if lam.size != n:
        raise SynthesisError(f"Lambda needs {n} entries, got {lam.size}")
    roots = np.roots(np.concatenate([[1.0], lam]))
    if np.any(roots.real >= 0):
        raise SynthesisError(f"Lambda polynomial is not Hurwitz (roots {np.round(roots, 6).tolist()})")
    if gain <= 0:
        raise SynthesisError(f"Gain must be positive, got {gain}")
    field_polys, names = _flow(m)
    fy = m.polynomials()[1][0]
    H: List[Polynomial] = [fy]
    for _ in range(n):
        H.append(lie_derivative(H[-1], field_polys, names))
    top = H.pop()
    S = np.eye(n, k=1)
    e1 = np.zeros(n)
    e1[0] = 1.0
    Q = S - np.outer(lam, e1)
    A = S - gain * np.outer(lam, e1)
    y = Polynomial.variable(m.y_names[0])
    phi = [H[i] - y * (gain * lam[i]) for i in range(n)]
    b = [Polynomial.zero()] * (n - 1) + [top]
    f_z = []
    for i in range(n):
        acc = b[i]
        for j in range(n):
            if A[i, j] != 0.0:
                acc = acc + H[j] * float(A[i, j])
        f_z.append(acc)
    transformation = PolynomialTransformation(m.x_names, m.y_names, phi)
    print(f"[synth] SDO transform: n={n} gain={gain} Lambda={lam.tolist()}", file=sys.stderr)
    return SdoTransform(
        transformation=transformation, H=H, S=S, Q=Q, A=A, b=b, f_z=f_z, gain=float(gain), Lambda=lam
    )


def lti_spec(model: SystemModel, L: np.ndarray, name: Optional[str] = None) -> ObserverSpec:
    """Reduced-order Luenberger observer ``phi = x + L y`` for a linear plant.

    The rate is the one certified by the Lyapunov metric of ``A11 + L A21``.

    Raises:
        SynthesisError: If ``A11 + L A21`` is not Hurwitz
    """
    from .verify import lyapunov_metric

    L = np.atleast_2d(np.asarray(L, dtype=float)).reshape(model.n_x, model.n_y)
    jac = model.jacobians(np.zeros(model.n_x), np.zeros(model.n_y), check_domain=False)
    F = jac.fx_x + L @ jac.fy_x
    eig = np.linalg.eigvals(F)
    if np.any(eig.real >= 0):
        raise SynthesisError(f"A11 + L A21 is not Hurwitz (eigenvalues {np.round(eig, 6).tolist()})")
    M = lyapunov_metric(F)
    rate = 1.0 / (2.0 * float(np.linalg.eigvalsh(M)[-1]))
    varphi = [sum((Polynomial.variable(v) * float(L[i, k]) for k, v in enumerate(model.y_names)), Polynomial.zero()) for i in range(model.n_x)]
    return complete_affine(
        model,
        np.eye(model.n_x),
        varphi,
        rate=rate,
        margin=0.1,
        metric=M,
        name=name or f"{model.name}-luenberger",
        metadata={"gain": L.tolist()},
    )
