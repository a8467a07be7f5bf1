"""Sampled verification of observer certificates.

Every check evaluates a matrix inequality (or a residual) at low-discrepancy
points of a region and reduces to the worst value. The box center is always
included so marginal directions at the nominal point are not missed.
"""

import sys
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .model import (
    AugmentedModel,
    ClosedFormField,
    Domain,
    PolynomialField,
    SystemModel,
)
from .observer import left_inverse
from .parallel import run_parallel
from .poly import lie_derivative
from .synth import ObserverSpec

ABS_TOL = 1e-9
REL_TOL = 1e-6
RESIDUAL_TOL = 1e-8
DIFF_STEP = 1e-5

Model = Union[SystemModel, AugmentedModel]


class VerificationError(Exception):
    """Check called without the data it needs."""
    pass


class CheckStatus(str, Enum):
    PASS = "Pass"
    BOUNDARY = "Boundary"
    FAIL = "Fail"


@dataclass
class CheckReport:
    """Outcome of one condition. ``worst_margin`` is the largest violation
    measure found (an eigenvalue or a residual); positive beyond ``tolerance`` fails."""
    condition: str
    status: CheckStatus
    worst_margin: float
    worst_point: Dict[str, float] = field(default_factory=dict)
    samples: int = 0
    tolerance: float = ABS_TOL
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status != CheckStatus.FAIL

    def to_dict(self) -> Dict[str, Any]:
        return {
            "condition": self.condition,
            "status": self.status.value,
            "worst_margin": self.worst_margin,
            "worst_point": dict(self.worst_point),
            "samples": self.samples,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


@dataclass
class TransverseWitness:
    """Data for transverse contraction checks.

    ``psi_jac(chi)`` is the r x n Jacobian of the contracting function and
    ``metric(chi)`` the n x n metric. For the semi-definite metric condition
    ``Psi(chi)`` (n x r) and an r x r ``metric`` give ``W = Psi P Psi^T``.
    """
    psi_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    metric: Optional[Callable[[np.ndarray], np.ndarray]] = None
    Psi: Optional[Callable[[np.ndarray], np.ndarray]] = None


class _Worst:
    """Running reduction to the largest violation."""

    def __init__(self, condition: str):
        self.condition = condition
        self.value = -np.inf
        self.tol = ABS_TOL
        self.point: Dict[str, float] = {}
        self.failed = False
        self.boundary = False
        self.samples = 0

    def add(self, value: float, scale: float, point: Dict[str, float]) -> None:
        self.samples += 1
        tol = ABS_TOL + REL_TOL * scale
        if not np.isfinite(value):
            value = np.inf
        if value > tol:
            self.failed = True
        elif value >= -tol:
            self.boundary = True
        if value > self.value:
            self.value, self.tol, self.point = float(value), tol, dict(point)

    def report(self, detail: str = "") -> CheckReport:
        if self.failed:
            status = CheckStatus.FAIL
        elif self.boundary:
            status = CheckStatus.BOUNDARY
        else:
            status = CheckStatus.PASS
        return CheckReport(
            condition=self.condition,
            status=status,
            worst_margin=self.value,
            worst_point=self.point,
            samples=self.samples,
            tolerance=self.tol,
            detail=detail,
        )


def _log(report: CheckReport) -> CheckReport:
    print(
        f"[verify] {report.condition}: {report.status.value} worst={report.worst_margin:.3e} "
        f"samples={report.samples}",
        file=sys.stderr,
    )
    return report


def _plant(m: Model) -> SystemModel:
    return m.extended() if isinstance(m, AugmentedModel) else m


def _points(m: SystemModel, region: Optional[Domain], n_samples: int, seed: int) -> List[Dict[str, float]]:
    domain = region if region is not None else m.domain
    names = list(m.state_names) + [v for v in m.u_names if v in domain.box]
    points = domain.sample(n_samples, seed=seed, names=names)
    center = {v: 0.5 * (domain.box[v][0] + domain.box[v][1]) for v in names}
    if domain.lift is not None:
        center = domain.lift(center)
    if center is not None and domain.contains(center):
        points = [center] + points
    return points


def _max_eig(S: np.ndarray) -> float:
    return float(np.linalg.eigvalsh((S + S.T) / 2.0)[-1])


def _scale(*mats: np.ndarray) -> float:
    return max((float(np.max(np.abs(a))) for a in mats if a.size), default=0.0)


def _along_flow(fn: Callable[[np.ndarray, np.ndarray], np.ndarray], x, y, dx, dy, h: float = DIFF_STEP) -> np.ndarray:
    return (fn(x + h * dx, y + h * dy) - fn(x - h * dx, y - h * dy)) / (2.0 * h)


def _rate(spec: ObserverSpec, rate: Optional[float]) -> float:
    return spec.rate if rate is None else float(rate)


# -- convex conditions ---------------------------------------------------------


def check_H1(spec: ObserverSpec, m: Model, region: Optional[Domain] = None, n_samples: int = 1000, seed: int = 0, margin: Optional[float] = None) -> CheckReport:
    """``Phi_x + Phi_x^T >= k I``; the violation is ``k - lambda_min``."""
    plant = _plant(m)
    k = spec.margin if margin is None else float(margin)
    worst = _Worst("H1")
    for point in _points(plant, region, n_samples, seed):
        x, y, _ = plant.split(point)
        Px = spec.transformation.phi_x(x, y)
        lam_min = float(np.linalg.eigvalsh(Px + Px.T)[0])
        worst.add(k - lam_min, _scale(Px), point)
    return _log(worst.report(f"k={k}"))


def check_H2(spec: ObserverSpec, m: Model, region: Optional[Domain] = None, n_samples: int = 1000, seed: int = 0) -> CheckReport:
    """Correctness ``Phi_x f_x + Phi_y f_y = f_z``.

    Exact coefficient comparison when model, transformation and ``f_z`` are
    polynomial; otherwise the largest residual over samples.
    """
    plant = _plant(m)
    phi = spec.transformation.symbolic()
    if plant.is_polynomial and phi is not None and isinstance(spec.f_z, PolynomialField):
        fx, fy = plant.polynomials()
        names = plant.x_names + plant.y_names
        worst = 0.0
        row = ""
        for i, p in enumerate(phi):
            residual = lie_derivative(p, fx + fy, names) - spec.f_z.polys[i]
            value = residual.max_abs_coefficient()
            if value > worst:
                worst, row = value, f"row {i}: {residual}"
        status = CheckStatus.PASS if worst <= RESIDUAL_TOL else CheckStatus.FAIL
        return _log(CheckReport(
            condition="H2",
            status=status,
            worst_margin=worst,
            samples=0,
            tolerance=RESIDUAL_TOL,
            detail=f"symbolic {row}".strip(),
        ))
    report = CheckReport(condition="H2", status=CheckStatus.PASS, worst_margin=0.0, tolerance=RESIDUAL_TOL, detail="sampled")
    for point in _points(plant, region, n_samples, seed):
        x, y, u = plant.split(point)
        dx, dy = plant.field(x, y, u)
        t = spec.transformation
        lhs = t.phi_x(x, y) @ dx + t.phi_y(x, y) @ dy
        residual = float(np.max(np.abs(lhs - spec.f_z(x, y, u))))
        report.samples += 1
        if not np.isfinite(residual) or residual > report.worst_margin:
            report.worst_margin = residual if np.isfinite(residual) else np.inf
            report.worst_point = dict(point)
    if report.worst_margin > RESIDUAL_TOL:
        report.status = CheckStatus.FAIL
    return _log(report)


def check_H3(spec: ObserverSpec, m: Model, region: Optional[Domain] = None, n_samples: int = 1000, seed: int = 0, rate: Optional[float] = None) -> CheckReport:
    """``F + F^T + P' + 2 rate P <= 0`` with ``P = sym(Phi_x)`` and ``F = d f_z / d x``.

    At rate 0 the asymptotic form ``F + F^T + P' <= -q_floor I`` is used.
    """
    plant = _plant(m)
    lam = _rate(spec, rate)
    t = spec.transformation
    worst = _Worst("H3")
    for point in _points(plant, region, n_samples, seed):
        x, y, u = plant.split(point)
        F = spec.f_z.jac_x(x, y, u)
        Px = t.phi_x(x, y)
        P = (Px + Px.T) / 2.0
        S = F + F.T
        S = S + 2.0 * lam * P if lam > 0 else S + spec.q_floor * np.eye(spec.dim)
        if not (getattr(t, "constant_metric", False)):
            dx, dy = plant.field(x, y, u)
            S = S + _along_flow(lambda a, b: (t.phi_x(a, b) + t.phi_x(a, b).T) / 2.0, x, y, dx, dy)
        worst.add(_max_eig(S), _scale(S, F), point)
    return _log(worst.report(f"rate={lam}"))


def check_H4(spec: ObserverSpec, m: Model, region: Optional[Domain] = None, n_samples: int = 1000, seed: int = 0, rate: Optional[float] = None) -> CheckReport:
    """Inequality implied by the Schur-complement block:
    ``Phi^T M F + F^T M Phi + Q <= 0`` with ``Q = 2 rate Phi^T M Phi`` (or ``q_floor I`` at rate 0)."""
    plant = _plant(m)
    lam = _rate(spec, rate)
    worst = _Worst("H4")
    for point in _points(plant, region, n_samples, seed):
        x, y, u = plant.split(point)
        F = spec.f_z.jac_x(x, y, u)
        Px = spec.transformation.phi_x(x, y)
        M = spec.M(x, y)
        S = Px.T @ M @ F + F.T @ M @ Px
        S = S + 2.0 * lam * Px.T @ M @ Px if lam > 0 else S + spec.q_floor * np.eye(spec.dim)
        worst.add(_max_eig(S), _scale(S), point)
    return _log(worst.report(f"rate={lam}"))


def _a2_matrix(spec: ObserverSpec, plant: SystemModel, x, y, u, lam: float) -> Tuple[np.ndarray, float]:
    F = spec.f_z.jac_x(x, y, u)
    Px = spec.transformation.phi_x(x, y)
    M = spec.M(x, y)
    G = M @ F @ np.linalg.inv(Px)
    S = G + G.T + 2.0 * lam * M
    if callable(spec.metric):
        dx, dy = plant.field(x, y, u)
        S = S + _along_flow(spec.M, x, y, dx, dy)
    return S, _scale(S, G)


def check_A2(
    spec: ObserverSpec,
    m: Model,
    region: Optional[Domain] = None,
    n_samples: int = 1000,
    seed: int = 0,
    rate: Optional[float] = None,
    trajectory: Optional[Any] = None,
) -> CheckReport:
    """
    Contraction of the observer in z coordinates.

    Checks ``dM/dt + M F Phi_x^-1 + (M F Phi_x^-1)^T + 2 rate M <= 0``.

    Args:
        spec: Observer to check
        m: Plant the observer was built for
        region: Sampling domain, the plant domain by default
        n_samples: Number of region samples
        seed: Sampling seed
        rate: Rate to certify, ``spec.rate`` by default
        trajectory: A Trajectory; when given, its recorded points are used instead of region samples

    Returns:
        CheckReport for condition ``A2``
    """
    plant = _plant(m)
    lam = _rate(spec, rate)
    worst = _Worst("A2")
    if trajectory is not None:
        n = plant.n_x
        for i in range(len(trajectory.times)):
            x = trajectory.x[i] if trajectory.w is None else np.concatenate([trajectory.x[i], trajectory.w[i]])
            y, u = trajectory.y[i], trajectory.u[i]
            S, scale = _a2_matrix(spec, plant, x[:n], y, u, lam)
            worst.add(_max_eig(S), scale, {"t": float(trajectory.times[i])})
        return _log(worst.report(f"rate={lam} along trajectory"))
    for point in _points(plant, region, n_samples, seed):
        x, y, u = plant.split(point)
        S, scale = _a2_matrix(spec, plant, x, y, u, lam)
        worst.add(_max_eig(S), scale, point)
    return _log(worst.report(f"rate={lam}"))


def check_pde_pendulum(
    varphi_jac: Callable[[np.ndarray], np.ndarray],
    Psi: Callable[[np.ndarray], np.ndarray],
    rate: float,
    grid: Sequence[Sequence[float]],
    tol: float = RESIDUAL_TOL,
) -> CheckReport:
    """Sup-norm residual of ``(d varphi / dy) Psi(y) + rate I`` over a grid of outputs."""
    worst = 0.0
    where: Dict[str, float] = {}
    count = 0
    for y in grid:
        y = np.asarray(y, dtype=float)
        R = varphi_jac(y) @ Psi(y) + rate * np.eye(y.size)
        value = float(np.max(np.abs(R)))
        count += 1
        if not np.isfinite(value) or value > worst:
            worst = value if np.isfinite(value) else np.inf
            where = {f"y{i + 1}": float(v) for i, v in enumerate(y)}
    status = CheckStatus.PASS if worst < tol else CheckStatus.FAIL
    return _log(CheckReport("PDE", status, worst, where, count, tol, f"rate={rate}"))


# -- transverse contraction ---------------------------------------------------


def _chi_points(m: SystemModel, region: Optional[Domain], n_samples: int, seed: int):
    for point in _points(m, region, n_samples, seed):
        x, y, u = m.split(point)
        chi = np.concatenate([x, y])
        dx, dy = m.field(x, y, u)
        J = m.jacobians(x, y, u, check_domain=False).full()
        yield point, chi, np.concatenate([dx, dy]), J


def check_transverse(m: SystemModel, witness: TransverseWitness, region: Optional[Domain] = None, n_samples: int = 1000, seed: int = 0) -> CheckReport:
    """``dpsi (P' + P J + J^T P) dpsi^T < 0`` at every sample, with ``chi = col(x, y)``."""
    if witness.psi_jac is None or witness.metric is None:
        raise VerificationError("Transverse check needs psi_jac and metric")
    worst = _Worst("transverse")
    for point, chi, f, J in _chi_points(m, region, n_samples, seed):
        P = witness.metric(chi)
        dP = (witness.metric(chi + DIFF_STEP * f) - witness.metric(chi - DIFF_STEP * f)) / (2.0 * DIFF_STEP)
        D = np.atleast_2d(witness.psi_jac(chi))
        S = D @ (dP + P @ J + J.T @ P) @ D.T
        # strict inequality: zero counts as boundary, never as pass
        worst.add(_max_eig(S), _scale(S), point)
    return _log(worst.report())


def _column_symmetry(Psi: Callable[[np.ndarray], np.ndarray], chi: np.ndarray) -> float:
    n = chi.size
    base = np.atleast_2d(Psi(chi))
    r = base.shape[1]
    jac = np.zeros((r, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = DIFF_STEP
        jac[:, :, k] = ((np.atleast_2d(Psi(chi + e)) - np.atleast_2d(Psi(chi - e))) / (2.0 * DIFF_STEP)).T
    return max(float(np.max(np.abs(jac[i] - jac[i].T)) / (1.0 + np.max(np.abs(jac[i])))) for i in range(r))


def check_semidefinite_metric(m: SystemModel, witness: TransverseWitness, region: Optional[Domain] = None, n_samples: int = 1000, seed: int = 0) -> CheckReport:
    """Contraction in a rank-deficient metric ``W = Psi P Psi^T``, tested on ``range(Psi)``.

    Each column of ``Psi`` must have a symmetric Jacobian (so it is a
    gradient); a violation is reported as condition ``SDM-symmetry``.
    """
    if witness.Psi is None or witness.metric is None:
        raise VerificationError("Semi-definite metric check needs Psi and metric")
    points = list(_chi_points(m, region, n_samples, seed))
    asym = 0.0
    asym_point: Dict[str, float] = {}
    for point, chi, _, _ in points:
        value = _column_symmetry(witness.Psi, chi)
        if value > asym:
            asym, asym_point = value, point
    if asym > 1e-6:
        return _log(CheckReport("SDM-symmetry", CheckStatus.FAIL, asym, asym_point, len(points), 1e-6, "Jacobian of a Psi column is not symmetric"))

    def W(chi: np.ndarray) -> np.ndarray:
        Psi = np.atleast_2d(witness.Psi(chi))
        return Psi @ np.atleast_2d(witness.metric(chi)) @ Psi.T

    worst = _Worst("SDM")
    for point, chi, f, J in points:
        Wc = W(chi)
        dW = (W(chi + DIFF_STEP * f) - W(chi - DIFF_STEP * f)) / (2.0 * DIFF_STEP)
        Psi = np.atleast_2d(witness.Psi(chi))
        S = Psi.T @ (dW + J.T @ Wc + Wc @ J) @ Psi
        worst.add(_max_eig(S), _scale(S), point)
    return _log(worst.report())


# -- helpers ----------------------------------------------------------------


def lyapunov_metric(A: np.ndarray) -> np.ndarray:
    """``M`` with ``A^T M + M A = -I`` for a Hurwitz ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    M = linalg.solve_continuous_lyapunov(A.T, -np.eye(A.shape[0]))
    return (M + M.T) / 2.0


def transformed_system(m: Model, spec: ObserverSpec) -> SystemModel:
    """The plant in ``(z, y)`` coordinates: ``z' = f_z(phi^L(z, y), y, u)``."""
    plant = _plant(m)
    t = spec.transformation
    z_names = tuple(f"z{i + 1}" for i in range(spec.dim))

    def x_of(z, y):
        return left_inverse(spec, z, y)

    def fz(z, y, u):
        return spec.f_z(x_of(z, y), y, u)

    def fz_z(z, y, u):
        x = x_of(z, y)
        return spec.f_z.jac_x(x, y, u) @ np.linalg.inv(t.phi_x(x, y))

    def fz_y(z, y, u):
        x = x_of(z, y)
        dx_dy = -np.linalg.solve(t.phi_x(x, y), t.phi_y(x, y))
        return spec.f_z.jac_y(x, y, u) + spec.f_z.jac_x(x, y, u) @ dx_dy

    def fy(z, y, u):
        return plant.f_y(x_of(z, y), y, u)

    def fy_z(z, y, u):
        x = x_of(z, y)
        return plant.f_y.jac_x(x, y, u) @ np.linalg.inv(t.phi_x(x, y))

    def fy_y(z, y, u):
        x = x_of(z, y)
        dx_dy = -np.linalg.solve(t.phi_x(x, y), t.phi_y(x, y))
        return plant.f_y.jac_y(x, y, u) + plant.f_y.jac_x(x, y, u) @ dx_dy

    def lift(point):
        x = np.array([point[v] for v in z_names])
        y = np.array([point[v] for v in plant.y_names])
        z = t.phi(x, y)
        out = dict(point)
        out.update(zip(z_names, (float(v) for v in z)))
        return out

    box = {v: plant.domain.box[x] for v, x in zip(z_names, plant.x_names) if x in plant.domain.box}
    box.update({v: r for v, r in plant.domain.box.items() if v not in plant.x_names})
    return SystemModel(
        name=f"{plant.name}[z]",
        x_names=z_names,
        y_names=plant.y_names,
        u_names=plant.u_names,
        f_x=ClosedFormField(spec.dim, fz, fz_z, fz_y, z_names, plant.y_names, plant.u_names),
        f_y=ClosedFormField(plant.n_y, fy, fy_z, fy_y, z_names, plant.y_names, plant.u_names),
        domain=Domain(box=box, lift=lift),
        input=plant.input,
        params=dict(plant.params),
    )


CHECKS = {
    "H1": check_H1,
    "H2": check_H2,
    "H3": check_H3,
    "H4": check_H4,
    "A2": check_A2,
}


def default_checks(spec: ObserverSpec) -> List[str]:
    listed = spec.metadata.get("checks")
    if listed:
        return list(listed)
    return ["H1", "H2", "H4" if spec.mode.startswith("h4") else "H3", "A2"]


def run_checks(
    spec: ObserverSpec,
    m: Model,
    checks: Optional[Sequence[str]] = None,
    region: Optional[Domain] = None,
    n_samples: int = 1000,
    seed: int = 0,
    jobs: int = 1,
) -> List[CheckReport]:
    """Run named checks, fanning out over ``jobs`` workers.

    Raises:
        KeyError: On an unknown check name
    """
    names = list(checks) if checks else default_checks(spec)
    unknown = [c for c in names if c not in CHECKS]
    if unknown:
        raise KeyError(f"Unknown checks {unknown}; available: {', '.join(CHECKS)}")
    tasks = [
        lambda fn=CHECKS[c]: fn(spec, m, region=region, n_samples=n_samples, seed=seed)
        for c in names
    ]
    return run_parallel(tasks, jobs=jobs, label="checks")


def overall_status(reports: Sequence[CheckReport]) -> CheckStatus:
    statuses = {r.status for r in reports}
    if CheckStatus.FAIL in statuses:
        return CheckStatus.FAIL
    if CheckStatus.BOUNDARY in statuses:
        return CheckStatus.BOUNDARY
    return CheckStatus.PASS
