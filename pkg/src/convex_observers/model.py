"""Plants of the form ``x' = f_x(x, y, u)``, ``y' = f_y(x, y, u)``.

Vector fields come in two flavors: polynomial (symbolic Jacobians, usable by
the SOS synthesis) and closed form (hand-written Jacobians checked against
central differences when the model is built).
"""

import math
import sys
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp
from scipy.stats import qmc

from .poly import (
    CompiledPolynomials,
    PolyLike,
    PolyMatrix,
    Polynomial,
    PolynomialError,
    as_polynomial,
    from_sympy,
    jacobian,
    sympify_text,
)

Point = Dict[str, float]
ArrayFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class ModelError(Exception):
    """Inconsistent model definition."""
    pass


class DomainError(ModelError):
    """A point lies outside the declared state domain."""

    def __init__(self, constraint: str, point: Mapping[str, float]):
        self.constraint = constraint
        self.point = dict(point)
        shown = ", ".join(f"{k}={v:.6g}" for k, v in self.point.items())
        super().__init__(f"Point ({shown}) violates domain constraint '{constraint}'")


class AugmentationError(ModelError):
    """Augmentation witness fails its contraction inequality."""

    def __init__(self, message: str, worst_point: Optional[Point] = None, eigenvalue: float = float("nan")):
        self.worst_point = worst_point
        self.eigenvalue = eigenvalue
        super().__init__(message)


# -- input signals ------------------------------------------------------


@dataclass(frozen=True)
class InputSignal:
    """Input class: ``zero``, ``constant``, ``sinusoid`` or ``table``.

    Sinusoids are ``offset + amplitude * cos(frequency * t + phase)`` per
    component. Tables interpolate linearly and hold the end values.
    """
    kind: str = "zero"
    n_u: int = 0
    values: Tuple[float, ...] = ()
    amplitude: Tuple[float, ...] = ()
    frequency: Tuple[float, ...] = ()
    phase: Tuple[float, ...] = ()
    offset: Tuple[float, ...] = ()
    times: Tuple[float, ...] = ()
    table: Tuple[Tuple[float, ...], ...] = ()

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "sinusoid", "table"):
            raise ModelError(f"Unknown input kind '{self.kind}'")
        if self.kind == "table":
            if len(self.times) != len(self.table) or not self.times:
                raise ModelError("Input table needs equally many times and rows")
            if any(b <= a for a, b in zip(self.times, self.times[1:])):
                raise ModelError("Input table times must increase strictly")

    @classmethod
    def zero(cls, n_u: int = 0) -> "InputSignal":
        return cls("zero", n_u)

    @classmethod
    def constant(cls, values: Sequence[float]) -> "InputSignal":
        return cls("constant", len(values), values=tuple(float(v) for v in values))

    @classmethod
    def sinusoid(
        cls,
        amplitude: Sequence[float],
        frequency: Optional[Sequence[float]] = None,
        phase: Optional[Sequence[float]] = None,
        offset: Optional[Sequence[float]] = None,
    ) -> "InputSignal":
        n = len(amplitude)
        return cls(
            "sinusoid",
            n,
            amplitude=tuple(float(a) for a in amplitude),
            frequency=tuple(float(f) for f in (frequency or [1.0] * n)),
            phase=tuple(float(p) for p in (phase or [0.0] * n)),
            offset=tuple(float(o) for o in (offset or [0.0] * n)),
        )

    @classmethod
    def tabulated(cls, times: Sequence[float], rows: Sequence[Sequence[float]]) -> "InputSignal":
        rows = tuple(tuple(float(v) for v in r) for r in rows)
        return cls("table", len(rows[0]) if rows else 0, times=tuple(float(t) for t in times), table=rows)

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(self.n_u)
        if self.kind == "constant":
            return np.array(self.values)
        if self.kind == "sinusoid":
            return np.array(self.offset) + np.array(self.amplitude) * np.cos(
                np.array(self.frequency) * t + np.array(self.phase)
            )
        values = np.array(self.table)
        return np.array([np.interp(t, self.times, values[:, k]) for k in range(self.n_u)])

    def to_dict(self) -> dict:
        data: dict = {"kind": self.kind}
        if self.kind == "zero":
            data["n_u"] = self.n_u
        elif self.kind == "constant":
            data["values"] = list(self.values)
        elif self.kind == "sinusoid":
            data.update(
                amplitude=list(self.amplitude),
                frequency=list(self.frequency),
                phase=list(self.phase),
                offset=list(self.offset),
            )
        else:
            data.update(times=list(self.times), values=[list(r) for r in self.table])
        return data

    @classmethod
    def from_dict(cls, data: Mapping, n_u: int = 0) -> "InputSignal":
        kind = data.get("kind", "zero")
        if kind == "zero":
            return cls.zero(int(data.get("n_u", n_u)))
        if kind == "constant":
            return cls.constant(_as_list(data.get("values", [])))
        if kind == "sinusoid":
            return cls.sinusoid(
                _as_list(data["amplitude"]),
                _as_list(data["frequency"]) if "frequency" in data else None,
                _as_list(data["phase"]) if "phase" in data else None,
                _as_list(data["offset"]) if "offset" in data else None,
            )
        if kind == "table":
            return cls.tabulated(data["times"], data["values"])
        raise ModelError(f"Unknown input kind '{kind}'")


def _as_list(value) -> List[float]:
    if isinstance(value, (int, float)):
        return [float(value)]
    return [float(v) for v in value]


# -- domains ------------------------------------------------------------


@dataclass
class DomainConstraint:
    """Strict inequality ``fn(point) > 0``; ``poly`` is kept when it is polynomial."""
    name: str
    fn: Callable[[Point], float]
    poly: Optional[Polynomial] = None

    @classmethod
    def parse(cls, text: str) -> "DomainConstraint":
        """Parse ``"lhs > rhs"`` or ``"lhs < rhs"`` over polynomials; ``>=`` and ``<=`` read as strict."""
        try:
            rel = sympify_text(text)
        except PolynomialError as e:
            raise ModelError(f"Cannot parse domain constraint '{text}': {e}") from e
        if not isinstance(rel, (sp.StrictGreaterThan, sp.GreaterThan, sp.StrictLessThan, sp.LessThan)):
            raise ModelError(f"Domain constraint '{text}' has no comparison operator")
        try:
            g = from_sympy(rel.gts - rel.lts)
        except PolynomialError as e:
            raise ModelError(f"Cannot parse domain constraint '{text}': {e}") from e
        return cls(name=text.strip(), fn=lambda p, g=g: g.evaluate(p), poly=g)


@dataclass
class Domain:
    """Sampling box plus validity constraints.

    ``lift`` completes a sampled point with derived coordinates (or returns
    None to reject it); the reactor uses it to stay on its invariant manifold.
    """
    box: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    constraints: List[DomainConstraint] = field(default_factory=list)
    lift: Optional[Callable[[Point], Optional[Point]]] = None

    def violated(self, point: Mapping[str, float]) -> Optional[str]:
        """Name of the first violated constraint, or None."""
        for con in self.constraints:
            try:
                value = con.fn(dict(point))
            except (ValueError, ZeroDivisionError, PolynomialError):
                return con.name
            if not np.isfinite(value) or value <= 0.0:
                return con.name
        return None

    def contains(self, point: Mapping[str, float]) -> bool:
        return self.violated(point) is None

    def check(self, point: Mapping[str, float]) -> None:
        name = self.violated(point)
        if name is not None:
            raise DomainError(name, point)

    def with_box(self, extra: Mapping[str, Tuple[float, float]]) -> "Domain":
        box = dict(self.box)
        box.update(extra)
        return Domain(box=box, constraints=list(self.constraints), lift=self.lift)

    def sample(self, n: int, seed: int = 0, names: Optional[Sequence[str]] = None) -> List[Point]:
        """Low-discrepancy points in the box that satisfy every constraint.

        Raises:
            ModelError: If the box is empty or almost no sample is accepted
        """
        names = list(names) if names is not None else sorted(self.box)
        missing = [v for v in names if v not in self.box]
        if missing:
            raise ModelError(f"Domain box has no range for {missing}")
        if not names:
            return [{} for _ in range(n)]
        lo = np.array([self.box[v][0] for v in names], dtype=float)
        hi = np.array([self.box[v][1] for v in names], dtype=float)
        if np.any(hi < lo):
            raise ModelError(f"Empty sampling box for {names}")
        span = np.where(hi > lo, hi, lo + 1.0)
        engine = qmc.Halton(d=len(names), scramble=True, seed=seed)
        accepted: List[Point] = []
        drawn = 0
        while len(accepted) < n:
            batch = max(2 * (n - len(accepted)), 16)
            unit = engine.random(batch)
            pts = qmc.scale(unit, lo, span)
            pts = np.where(hi > lo, pts, lo)
            drawn += batch
            for row in pts:
                point = dict(zip(names, (float(v) for v in row)))
                if self.lift is not None:
                    point = self.lift(point)
                    if point is None:
                        continue
                if self.contains(point):
                    accepted.append(point)
                    if len(accepted) == n:
                        break
            if drawn > 200 * n + 1000 and len(accepted) < n:
                raise ModelError(
                    f"Domain sampling accepted {len(accepted)} of {drawn} draws; "
                    "box and constraints barely overlap"
                )
        return accepted


# -- vector fields --------------------------------------------------------


class VectorField(ABC):
    """Map ``(x, y, u) -> R^dim`` with Jacobians in ``x`` and ``y``."""

    def __init__(self, dim: int, x_names: Sequence[str], y_names: Sequence[str], u_names: Sequence[str] = ()):
        self.dim = int(dim)
        self.x_names = tuple(x_names)
        self.y_names = tuple(y_names)
        self.u_names = tuple(u_names)

    @abstractmethod
    def __call__(self, x: np.ndarray, y: np.ndarray, u: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def jac_x(self, x: np.ndarray, y: np.ndarray, u: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def jac_y(self, x: np.ndarray, y: np.ndarray, u: np.ndarray) -> np.ndarray:
        ...

    @property
    def is_polynomial(self) -> bool:
        return False

    def lifted(self, x_names: Sequence[str]) -> "VectorField":
        """The same field over a larger state whose extra entries it ignores."""
        return _LiftedField(self, x_names)


class PolynomialField(VectorField):
    def __init__(
        self,
        polys: Sequence[PolyLike],
        x_names: Sequence[str],
        y_names: Sequence[str],
        u_names: Sequence[str] = (),
    ):
        super().__init__(len(polys), x_names, y_names, u_names)
        self.polys = [as_polynomial(p) for p in polys]
        order = self.x_names + self.y_names + self.u_names
        try:
            self._eval = CompiledPolynomials(self.polys, order)
        except PolynomialError as e:
            raise ModelError(str(e)) from e
        self._jx = jacobian(self.polys, self.x_names) if self.x_names and self.polys else None
        self._jy = jacobian(self.polys, self.y_names) if self.y_names and self.polys else None
        self._jx_eval = CompiledPolynomials([e for _, _, e in self._jx.entries()], order) if self._jx is not None else None
        self._jy_eval = CompiledPolynomials([e for _, _, e in self._jy.entries()], order) if self._jy is not None else None

    @property
    def is_polynomial(self) -> bool:
        return True

    def _values(self, x, y, u) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(a, dtype=float)) for a in (x, y, u)])

    def __call__(self, x, y, u=()) -> np.ndarray:
        return self._eval(self._values(x, y, u))

    def jac_x(self, x, y, u=()) -> np.ndarray:
        if self._jx_eval is None:
            return np.zeros((self.dim, 0))
        return self._jx_eval(self._values(x, y, u)).reshape(self.dim, len(self.x_names))

    def jac_y(self, x, y, u=()) -> np.ndarray:
        if self._jy_eval is None:
            return np.zeros((self.dim, 0))
        return self._jy_eval(self._values(x, y, u)).reshape(self.dim, len(self.y_names))

    def jacobian_x(self) -> PolyMatrix:
        return self._jx

    def jacobian_y(self) -> PolyMatrix:
        return self._jy

    def lifted(self, x_names: Sequence[str]) -> "VectorField":
        return PolynomialField(self.polys, x_names, self.y_names, self.u_names)


class ClosedFormField(VectorField):
    """Field given by callables ``fn(x, y, u)`` with analytic Jacobians."""

    def __init__(
        self,
        dim: int,
        fn: ArrayFn,
        jac_x: ArrayFn,
        jac_y: ArrayFn,
        x_names: Sequence[str],
        y_names: Sequence[str],
        u_names: Sequence[str] = (),
    ):
        super().__init__(dim, x_names, y_names, u_names)
        self._fn = fn
        self._jx = jac_x
        self._jy = jac_y

    def __call__(self, x, y, u=()) -> np.ndarray:
        return np.asarray(self._fn(np.asarray(x, float), np.asarray(y, float), np.asarray(u, float)), dtype=float).reshape(self.dim)

    def jac_x(self, x, y, u=()) -> np.ndarray:
        return np.asarray(self._jx(np.asarray(x, float), np.asarray(y, float), np.asarray(u, float)), dtype=float).reshape(self.dim, len(self.x_names))

    def jac_y(self, x, y, u=()) -> np.ndarray:
        return np.asarray(self._jy(np.asarray(x, float), np.asarray(y, float), np.asarray(u, float)), dtype=float).reshape(self.dim, len(self.y_names))


class _LiftedField(VectorField):
    def __init__(self, inner: VectorField, x_names: Sequence[str]):
        super().__init__(inner.dim, x_names, inner.y_names, inner.u_names)
        missing = [v for v in inner.x_names if v not in self.x_names]
        if missing:
            raise ModelError(f"Lifted state lacks {missing}")
        self.inner = inner
        self._idx = [self.x_names.index(v) for v in inner.x_names]

    def __call__(self, x, y, u=()) -> np.ndarray:
        return self.inner(np.asarray(x, float)[self._idx], y, u)

    def jac_x(self, x, y, u=()) -> np.ndarray:
        out = np.zeros((self.dim, len(self.x_names)))
        out[:, self._idx] = self.inner.jac_x(np.asarray(x, float)[self._idx], y, u)
        return out

    def jac_y(self, x, y, u=()) -> np.ndarray:
        return self.inner.jac_y(np.asarray(x, float)[self._idx], y, u)


class StackedField(VectorField):
    """Concatenation of fields over the same ``(x, y, u)``."""

    def __init__(self, parts: Sequence[VectorField]):
        first = parts[0]
        if any(p.x_names != first.x_names or p.y_names != first.y_names for p in parts):
            raise ModelError("Stacked fields must share their state and output names")
        super().__init__(sum(p.dim for p in parts), first.x_names, first.y_names, first.u_names)
        self.parts = list(parts)

    def __call__(self, x, y, u=()) -> np.ndarray:
        return np.concatenate([p(x, y, u) for p in self.parts])

    def jac_x(self, x, y, u=()) -> np.ndarray:
        return np.vstack([p.jac_x(x, y, u) for p in self.parts])

    def jac_y(self, x, y, u=()) -> np.ndarray:
        return np.vstack([p.jac_y(x, y, u) for p in self.parts])


def stack_fields(parts: Sequence[VectorField]) -> VectorField:
    if all(p.is_polynomial for p in parts):
        polys = [q for p in parts for q in p.polys]
        first = parts[0]
        return PolynomialField(polys, first.x_names, first.y_names, first.u_names)
    return StackedField(parts)


def numeric_jacobian(fn: Callable[[np.ndarray], np.ndarray], at: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` at ``at``."""
    at = np.asarray(at, dtype=float)
    f0 = np.atleast_1d(fn(at))
    out = np.zeros((f0.size, at.size))
    for k in range(at.size):
        h = step * max(1.0, abs(at[k]))
        plus = at.copy()
        minus = at.copy()
        plus[k] += h
        minus[k] -= h
        out[:, k] = (np.atleast_1d(fn(plus)) - np.atleast_1d(fn(minus))) / (2.0 * h)
    return out


# -- system model -------------------------------------------------------------


@dataclass
class Jacobians:
    fx_x: np.ndarray
    fx_y: np.ndarray
    fy_x: np.ndarray
    fy_y: np.ndarray

    def full(self) -> np.ndarray:
        """Jacobian of ``col(f_x, f_y)`` with respect to ``col(x, y)``."""
        return np.block([[self.fx_x, self.fx_y], [self.fy_x, self.fy_y]])


@dataclass
class SystemModel:
    name: str
    x_names: Tuple[str, ...]
    y_names: Tuple[str, ...]
    u_names: Tuple[str, ...]
    f_x: VectorField
    f_y: VectorField
    domain: Domain = field(default_factory=Domain)
    input: InputSignal = field(default_factory=InputSignal)
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.x_names = tuple(self.x_names)
        self.y_names = tuple(self.y_names)
        self.u_names = tuple(self.u_names)
        if self.f_x.dim != len(self.x_names):
            raise ModelError(f"{self.name}: f_x has {self.f_x.dim} components for {len(self.x_names)} states")
        if self.f_y.dim != len(self.y_names):
            raise ModelError(f"{self.name}: f_y has {self.f_y.dim} components for {len(self.y_names)} outputs")
        clash = set(self.x_names) & set(self.y_names) | (set(self.x_names) | set(self.y_names)) & set(self.u_names)
        if clash:
            raise ModelError(f"{self.name}: names used twice: {sorted(clash)}")
        if self.input.kind != "zero" and self.input.n_u != len(self.u_names):
            raise ModelError(f"{self.name}: input signal has {self.input.n_u} channels for {len(self.u_names)} inputs")

    @property
    def n_x(self) -> int:
        return len(self.x_names)

    @property
    def n_y(self) -> int:
        return len(self.y_names)

    @property
    def n_u(self) -> int:
        return len(self.u_names)

    @property
    def is_polynomial(self) -> bool:
        return self.f_x.is_polynomial and self.f_y.is_polynomial

    @property
    def state_names(self) -> Tuple[str, ...]:
        return self.x_names + self.y_names

    def point(self, x, y, u=None) -> Point:
        u = np.zeros(self.n_u) if u is None else np.atleast_1d(u)
        values = list(np.atleast_1d(x)) + list(np.atleast_1d(y)) + list(u)
        return dict(zip(self.x_names + self.y_names + self.u_names, (float(v) for v in values)))

    def split(self, point: Mapping[str, float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.array([point[v] for v in self.x_names], dtype=float)
        y = np.array([point[v] for v in self.y_names], dtype=float)
        u = np.array([point.get(v, 0.0) for v in self.u_names], dtype=float)
        return x, y, u

    def u_at(self, t: float) -> np.ndarray:
        if self.n_u == 0:
            return np.zeros(0)
        if self.input.kind == "zero":
            return np.zeros(self.n_u)
        u = self.input(t)
        if u.size != self.n_u:
            raise ModelError(f"{self.name}: input signal gives {u.size} values at t={t} for {self.n_u} inputs")
        return u

    def field(self, x, y, u=None) -> Tuple[np.ndarray, np.ndarray]:
        u = np.zeros(self.n_u) if u is None else u
        return self.f_x(x, y, u), self.f_y(x, y, u)

    def jacobians(self, x, y, u=None, check_domain: bool = True) -> Jacobians:
        """Jacobian blocks at a point.

        Raises:
            DomainError: If the point violates a domain constraint
        """
        u = np.zeros(self.n_u) if u is None else np.asarray(u, dtype=float)
        if check_domain:
            self.domain.check(self.point(x, y, u))
        return Jacobians(
            fx_x=self.f_x.jac_x(x, y, u),
            fx_y=self.f_x.jac_y(x, y, u),
            fy_x=self.f_y.jac_x(x, y, u),
            fy_y=self.f_y.jac_y(x, y, u),
        )

    def polynomials(self) -> Tuple[List[Polynomial], List[Polynomial]]:
        if not self.is_polynomial:
            raise ModelError(f"{self.name} is not a polynomial system")
        return list(self.f_x.polys), list(self.f_y.polys)

    def validate_jacobians(self, n_samples: int = 20, seed: int = 0, rel_tol: float = 1e-6) -> float:
        """Compare Jacobians with central differences at sampled domain points.

        Returns:
            Worst relative error found

        Raises:
            ModelError: If the worst error exceeds ``rel_tol``
        """
        names = [v for v in self.state_names + self.u_names if v in self.domain.box]
        if set(self.state_names) - set(names):
            return 0.0
        worst = 0.0
        where: Optional[Point] = None
        for point in self.domain.sample(n_samples, seed=seed, names=names):
            x, y, u = self.split(point)
            for fld in (self.f_x, self.f_y):
                pairs = (
                    (fld.jac_x(x, y, u), numeric_jacobian(lambda v: fld(v, y, u), x)),
                    (fld.jac_y(x, y, u), numeric_jacobian(lambda v: fld(x, v, u), y)),
                )
                for exact, approx in pairs:
                    if exact.size == 0:
                        continue
                    err = float(np.max(np.abs(exact - approx)) / (1.0 + np.max(np.abs(exact))))
                    if err > worst:
                        worst, where = err, point
        if worst > rel_tol:
            raise ModelError(f"{self.name}: Jacobian mismatch {worst:.2e} against finite differences at {where}")
        return worst

    @classmethod
    def polynomial(
        cls,
        name: str,
        x_names: Sequence[str],
        y_names: Sequence[str],
        f_x: Sequence[Union[PolyLike, str]],
        f_y: Sequence[Union[PolyLike, str]],
        u_names: Sequence[str] = (),
        domain: Optional[Domain] = None,
        input: Optional[InputSignal] = None,
        params: Optional[Dict[str, float]] = None,
    ) -> "SystemModel":
        known = set(x_names) | set(y_names) | set(u_names)
        fx = [as_polynomial(p) for p in f_x]
        fy = [as_polynomial(p) for p in f_y]
        for p in fx + fy:
            stray = set(p.used_vars()) - known
            if stray:
                raise ModelError(f"{name}: unknown variables {sorted(stray)} in '{p}'")
        return cls(
            name=name,
            x_names=tuple(x_names),
            y_names=tuple(y_names),
            u_names=tuple(u_names),
            f_x=PolynomialField(fx, x_names, y_names, u_names),
            f_y=PolynomialField(fy, x_names, y_names, u_names),
            domain=domain or Domain(),
            input=input or InputSignal.zero(len(u_names)),
            params=dict(params or {}),
        )

    @classmethod
    def closed_form(
        cls,
        name: str,
        x_names: Sequence[str],
        y_names: Sequence[str],
        f_x: VectorField,
        f_y: VectorField,
        u_names: Sequence[str] = (),
        domain: Optional[Domain] = None,
        input: Optional[InputSignal] = None,
        params: Optional[Dict[str, float]] = None,
        validate: bool = True,
        seed: int = 0,
    ) -> "SystemModel":
        model = cls(
            name=name,
            x_names=tuple(x_names),
            y_names=tuple(y_names),
            u_names=tuple(u_names),
            f_x=f_x,
            f_y=f_y,
            domain=domain or Domain(),
            input=input or InputSignal.zero(len(u_names)),
            params=dict(params or {}),
        )
        if validate:
            model.validate_jacobians(seed=seed)
        return model


def model_from_dict(data: Mapping, name: str = "model") -> SystemModel:
    """Polynomial model from its mapping form (YAML config or spec file).

    Raises:
        ModelError: On missing keys or unparsable polynomials
    """
    try:
        x_names = list(data["states"])
        y_names = list(data["outputs"])
        u_names = list(data.get("inputs", []) or [])
        f_x = [Polynomial.parse(str(s)) for s in data["f_x"]]
        f_y = [Polynomial.parse(str(s)) for s in data["f_y"]]
    except KeyError as e:
        raise ModelError(f"Model '{name}' is missing key {e}") from e
    except PolynomialError as e:
        raise ModelError(f"Model '{name}': {e}") from e
    dom = data.get("domain", {}) or {}
    box = {k: (float(v[0]), float(v[1])) for k, v in (dom.get("box", {}) or {}).items()}
    constraints = [DomainConstraint.parse(str(c)) for c in (dom.get("constraints", []) or [])]
    signal = InputSignal.from_dict(data.get("input", {}) or {}, n_u=len(u_names))
    params = {k: float(v) for k, v in (data.get("params", {}) or {}).items()}
    return SystemModel.polynomial(
        name=str(data.get("name", name)),
        x_names=x_names,
        y_names=y_names,
        u_names=u_names,
        f_x=f_x,
        f_y=f_y,
        domain=Domain(box=box, constraints=constraints),
        input=signal,
        params=params,
    )


def model_to_dict(m: SystemModel) -> dict:
    fx, fy = m.polynomials()
    data = {
        "name": m.name,
        "states": list(m.x_names),
        "outputs": list(m.y_names),
        "inputs": list(m.u_names),
        "f_x": [str(p) for p in fx],
        "f_y": [str(p) for p in fy],
        "domain": {
            "box": {k: [lo, hi] for k, (lo, hi) in m.domain.box.items()},
            "constraints": [c.name for c in m.domain.constraints if c.poly is not None],
        },
        "input": m.input.to_dict(),
    }
    if m.params:
        data["params"] = dict(m.params)
    return data


# -- transformations ------------------------------------------------------


class Transformation(ABC):
    """Coordinate change ``z = phi(x, y)`` with Jacobian blocks ``Phi_x``, ``Phi_y``."""

    def __init__(self, x_names: Sequence[str], y_names: Sequence[str]):
        self.x_names = tuple(x_names)
        self.y_names = tuple(y_names)

    @property
    def dim(self) -> int:
        return len(self.x_names)

    @abstractmethod
    def phi(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def phi_x(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def phi_y(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ...

    @property
    def is_affine(self) -> bool:
        return False

    def symbolic(self) -> Optional[List[Polynomial]]:
        """Components of ``phi`` as polynomials, when they are polynomial."""
        return None

    def phi_w(self, x: np.ndarray, y: np.ndarray, n_base: int) -> np.ndarray:
        """Columns of ``Phi_x`` belonging to augmentation states after the first ``n_base``."""
        return self.phi_x(x, y)[:, n_base:]


class AffineTransformation(Transformation):
    """``phi(x, y) = P(y) x + varphi(y)``.

    ``P`` is a constant array or a PolyMatrix over the outputs; ``varphi`` is a
    list of polynomials in the outputs or a callable with Jacobian ``varphi_jac``.
    """

    def __init__(
        self,
        x_names: Sequence[str],
        y_names: Sequence[str],
        P: Union[np.ndarray, PolyMatrix],
        varphi: Union[Sequence[PolyLike], Callable[[np.ndarray], np.ndarray]],
        varphi_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ):
        super().__init__(x_names, y_names)
        n = self.dim
        if isinstance(P, PolyMatrix):
            stray = set(P.vars) - set(self.y_names)
            if stray:
                raise ModelError(f"P may only depend on outputs, found {sorted(stray)}")
            self.P_poly: Optional[PolyMatrix] = P
            self._P_eval = CompiledPolynomials([e for _, _, e in P.entries()], self.y_names)
            self.P_const: Optional[np.ndarray] = P.to_array() if P.is_constant() else None
        else:
            self.P_const = np.atleast_2d(np.asarray(P, dtype=float))
            self.P_poly = None
            self._P_eval = None
        shape = self.P_poly.shape if self.P_poly is not None else self.P_const.shape
        if shape != (n, n):
            raise ModelError(f"P must be {n}x{n}, got {shape}")
        if callable(varphi):
            if varphi_jac is None:
                raise ModelError("A closed-form varphi needs its Jacobian")
            self.varphi_polys: Optional[List[Polynomial]] = None
            self._varphi = varphi
            self._varphi_jac = varphi_jac
        else:
            polys = [as_polynomial(p) for p in varphi]
            if len(polys) != n:
                raise ModelError(f"varphi has {len(polys)} components, expected {n}")
            stray = set().union(*(p.used_vars() for p in polys)) - set(self.y_names)
            if stray:
                raise ModelError(f"varphi may only depend on outputs, found {sorted(stray)}")
            self.varphi_polys = polys
            ev = CompiledPolynomials(polys, self.y_names)
            jac = jacobian(polys, self.y_names)
            jev = CompiledPolynomials([e for _, _, e in jac.entries()], self.y_names)
            ny = len(self.y_names)
            self._varphi = lambda y: ev(y)
            self._varphi_jac = lambda y: jev(y).reshape(n, ny)

    @property
    def is_affine(self) -> bool:
        return True

    @property
    def constant_metric(self) -> bool:
        return self.P_const is not None

    def P(self, y: np.ndarray) -> np.ndarray:
        if self.P_const is not None:
            return self.P_const
        return self._P_eval(np.atleast_1d(y)).reshape(self.dim, self.dim)

    def varphi(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(self._varphi(np.atleast_1d(np.asarray(y, float))), dtype=float).reshape(self.dim)

    def varphi_jac(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(self._varphi_jac(np.atleast_1d(np.asarray(y, float))), dtype=float).reshape(self.dim, len(self.y_names))

    def phi(self, x, y) -> np.ndarray:
        return self.P(y) @ np.asarray(x, dtype=float) + self.varphi(y)

    def phi_x(self, x, y) -> np.ndarray:
        return self.P(y)

    def phi_y(self, x, y) -> np.ndarray:
        out = self.varphi_jac(y)
        if self.P_poly is not None and self.P_const is None:
            x = np.asarray(x, dtype=float)
            for k, v in enumerate(self.y_names):
                dP = self.P_poly.differentiate(v).evaluate(dict(zip(self.y_names, np.atleast_1d(y))))
                out = out.copy()
                out[:, k] += dP @ x
        return out

    def symbolic(self) -> Optional[List[Polynomial]]:
        if self.varphi_polys is None:
            return None
        P = self.P_poly if self.P_poly is not None else PolyMatrix.constant(self.P_const)
        xs = PolyMatrix.column([Polynomial.variable(v) for v in self.x_names])
        Px = P @ xs
        return [Px[i, 0] + self.varphi_polys[i] for i in range(self.dim)]


class PolynomialTransformation(Transformation):
    def __init__(self, x_names: Sequence[str], y_names: Sequence[str], polys: Sequence[PolyLike]):
        super().__init__(x_names, y_names)
        self.polys = [as_polynomial(p) for p in polys]
        if len(self.polys) != self.dim:
            raise ModelError(f"phi has {len(self.polys)} components for {self.dim} states")
        order = self.x_names + self.y_names
        self._eval = CompiledPolynomials(self.polys, order)
        self._jx = jacobian(self.polys, self.x_names)
        self._jy = jacobian(self.polys, self.y_names)
        self._jx_eval = CompiledPolynomials([e for _, _, e in self._jx.entries()], order)
        self._jy_eval = CompiledPolynomials([e for _, _, e in self._jy.entries()], order)

    def _v(self, x, y) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))])

    def phi(self, x, y) -> np.ndarray:
        return self._eval(self._v(x, y))

    def phi_x(self, x, y) -> np.ndarray:
        return self._jx_eval(self._v(x, y)).reshape(self.dim, self.dim)

    def phi_y(self, x, y) -> np.ndarray:
        return self._jy_eval(self._v(x, y)).reshape(self.dim, len(self.y_names))

    def symbolic(self) -> Optional[List[Polynomial]]:
        return list(self.polys)


class ClosedFormTransformation(Transformation):
    def __init__(
        self,
        x_names: Sequence[str],
        y_names: Sequence[str],
        phi: Callable[[np.ndarray, np.ndarray], np.ndarray],
        phi_x: Callable[[np.ndarray, np.ndarray], np.ndarray],
        phi_y: Callable[[np.ndarray, np.ndarray], np.ndarray],
    ):
        super().__init__(x_names, y_names)
        self._phi = phi
        self._phi_x = phi_x
        self._phi_y = phi_y

    def phi(self, x, y) -> np.ndarray:
        return np.asarray(self._phi(np.asarray(x, float), np.asarray(y, float)), dtype=float).reshape(self.dim)

    def phi_x(self, x, y) -> np.ndarray:
        return np.asarray(self._phi_x(np.asarray(x, float), np.asarray(y, float)), dtype=float).reshape(self.dim, self.dim)

    def phi_y(self, x, y) -> np.ndarray:
        return np.asarray(self._phi_y(np.asarray(x, float), np.asarray(y, float)), dtype=float).reshape(self.dim, len(self.y_names))


# -- augmentation ---------------------------------------------------------


@dataclass
class AugmentedModel:
    """Plant plus contracting auxiliary dynamics ``w' = f_w(x, w, y, u)``."""
    base: SystemModel
    f_w: VectorField
    w_names: Tuple[str, ...]
    M_w: Union[np.ndarray, Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]]
    rate_w: float
    w_box: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    worst_margin: float = float("nan")

    @property
    def n_w(self) -> int:
        return len(self.w_names)

    @property
    def x_e_names(self) -> Tuple[str, ...]:
        return self.base.x_names + self.w_names

    def metric(self, x_e: np.ndarray, y: np.ndarray) -> np.ndarray:
        if callable(self.M_w):
            return np.asarray(self.M_w(x_e[: self.base.n_x], x_e[self.base.n_x:], y), dtype=float)
        return np.asarray(self.M_w, dtype=float)

    def extended(self, domain: Optional[Domain] = None) -> SystemModel:
        """The plant over ``x_e = col(x, w)``."""
        names = self.x_e_names
        f_x = stack_fields([self.base.f_x.lifted(names), self.f_w])
        f_y = self.base.f_y.lifted(names)
        return SystemModel(
            name=f"{self.base.name}+w",
            x_names=names,
            y_names=self.base.y_names,
            u_names=self.base.u_names,
            f_x=f_x,
            f_y=f_y,
            domain=domain or self.base.domain.with_box(self.w_box),
            input=self.base.input,
            params=dict(self.base.params),
        )

    def witness_margin(self, x_e: np.ndarray, y: np.ndarray, u: np.ndarray) -> float:
        """Largest eigenvalue of ``M J_w + J_w^T M + dM + 2 rate M``; non-positive means satisfied."""
        if self.n_w == 0:
            return -math.inf
        n = self.base.n_x
        J = self.f_w.jac_x(x_e, y, u)[:, n:]
        M = self.metric(x_e, y)
        lhs = M @ J + J.T @ M + 2.0 * self.rate_w * M
        if callable(self.M_w):
            dx, dy = self.base.field(x_e[:n], y, u)
            flow = np.concatenate([dx, self.f_w(x_e, y, u), dy])
            h = 1e-5

            def at(s):
                xe = x_e + s * h * flow[: x_e.size]
                yy = y + s * h * flow[x_e.size:]
                return self.metric(xe, yy)

            lhs = lhs + (at(1.0) - at(-1.0)) / (2.0 * h)
        return float(np.linalg.eigvalsh((lhs + lhs.T) / 2.0)[-1])


def augment(
    m: SystemModel,
    f_w: VectorField,
    M_w,
    rate_w: float,
    w_names: Optional[Sequence[str]] = None,
    w_box: Optional[Mapping[str, Tuple[float, float]]] = None,
    n_samples: int = 200,
    seed: int = 0,
    tol: float = 1e-8,
) -> AugmentedModel:
    """Attach contracting auxiliary dynamics after checking the witness at sampled points.

    Raises:
        ModelError: If ``f_w`` is dimensionally inconsistent
        AugmentationError: If the witness inequality fails somewhere
    """
    names = tuple(w_names) if w_names is not None else tuple(v for v in f_w.x_names if v not in m.x_names)
    if f_w.dim != len(names):
        raise ModelError(f"f_w has {f_w.dim} components for {len(names)} augmentation states")
    if f_w.x_names != m.x_names + names:
        raise ModelError(f"f_w must be defined over {list(m.x_names + names)}, got {list(f_w.x_names)}")
    if f_w.y_names != m.y_names:
        raise ModelError("f_w must share the plant's output names")
    box = dict(w_box or {v: (-5.0, 5.0) for v in names})
    am = AugmentedModel(base=m, f_w=f_w, w_names=names, M_w=M_w, rate_w=float(rate_w), w_box=box)
    if not callable(M_w):
        M = np.atleast_2d(np.asarray(M_w, dtype=float))
        if M.shape != (len(names), len(names)):
            raise ModelError(f"M_w must be {len(names)}x{len(names)}, got {M.shape}")
        am.M_w = M
    domain = m.domain.with_box(box)
    sample_names = list(m.x_names + names + m.y_names) + [v for v in m.u_names if v in domain.box]
    worst = -math.inf
    worst_point: Optional[Point] = None
    for point in domain.sample(n_samples, seed=seed, names=sample_names):
        x_e = np.array([point[v] for v in am.x_e_names])
        y = np.array([point[v] for v in m.y_names])
        u = np.array([point.get(v, 0.0) for v in m.u_names])
        margin = am.witness_margin(x_e, y, u)
        if margin > worst:
            worst, worst_point = margin, point
    am.worst_margin = worst
    if worst > tol:
        raise AugmentationError(
            f"Augmentation witness fails: eigenvalue {worst:.3e} > {tol:g} at {worst_point}",
            worst_point=worst_point,
            eigenvalue=worst,
        )
    print(f"[model] Augmentation accepted: n_w={len(names)} rate={rate_w} worst_eig={worst:.3e}", file=sys.stderr)
    return am
