"""Multivariate polynomials over named variables.

Coefficients are floats keyed by exponent tuples. Variable names are kept in
sorted order, so every polynomial built from the same names shares one
monomial ordering and the SOS layer sees deterministic bases.
"""

import itertools
import numbers
import re
from tokenize import TokenError
from types import MappingProxyType
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    convert_xor,
    implicit_multiplication,
    parse_expr,
    standard_transformations,
)
from sympy.polys.polyerrors import BasePolynomialError

Exponent = Tuple[int, ...]
Scalar = Union[int, float]


class PolynomialError(Exception):
    """Polynomial construction, parsing or evaluation error."""
    pass


def _merge_names(a: Sequence[str], b: Sequence[str]) -> Tuple[str, ...]:
    if tuple(a) == tuple(b):
        return tuple(a)
    return tuple(sorted(set(a) | set(b)))


class Polynomial:
    """Immutable multivariate polynomial with float coefficients."""

    __slots__ = ("_vars", "_terms")
    __array_ufunc__ = None

    def __init__(
        self,
        variables: Iterable[str] = (),
        terms: Optional[Mapping[Exponent, Scalar]] = None,
    ):
        names = list(variables)
        if len(set(names)) != len(names):
            raise PolynomialError(f"Duplicate variable names: {names}")
        order = sorted(range(len(names)), key=lambda i: names[i])
        canonical: Dict[Exponent, float] = {}
        for exps, coef in (terms or {}).items():
            if len(exps) != len(names):
                raise PolynomialError(
                    f"Exponent vector {exps} does not match variables {names}"
                )
            if any(int(e) < 0 for e in exps):
                raise PolynomialError(f"Negative exponent in {exps}")
            key = tuple(int(exps[i]) for i in order)
            canonical[key] = canonical.get(key, 0.0) + float(coef)
        self._vars: Tuple[str, ...] = tuple(names[i] for i in order)
        self._terms: Dict[Exponent, float] = {k: v for k, v in canonical.items() if v != 0.0}

    @classmethod
    def _raw(cls, names: Tuple[str, ...], terms: Dict[Exponent, float]) -> "Polynomial":
        """Build from already sorted names, dropping zero coefficients."""
        poly = cls.__new__(cls)
        poly._vars = names
        poly._terms = {k: v for k, v in terms.items() if v != 0.0}
        return poly

    @classmethod
    def constant(cls, value: Scalar, variables: Iterable[str] = ()) -> "Polynomial":
        names = tuple(sorted(variables))
        return cls._raw(names, {(0,) * len(names): float(value)})

    @classmethod
    def variable(cls, name: str) -> "Polynomial":
        return cls._raw((name,), {(1,): 1.0})

    @classmethod
    def zero(cls, variables: Iterable[str] = ()) -> "Polynomial":
        return cls._raw(tuple(sorted(variables)), {})

    @classmethod
    def parse(cls, text: str, variables: Iterable[str] = ()) -> "Polynomial":
        """Parse text such as ``-0.3333*x1^3*x2^0 + 2*y``.

        ``variables`` adds names to the result even when they do not occur.
        """
        poly = from_sympy(sympify_text(text))
        extra = tuple(variables)
        return poly.extend(extra) if extra else poly

    # -- accessors -----------------------------------------------------

    @property
    def vars(self) -> Tuple[str, ...]:
        return self._vars

    @property
    def terms(self) -> Mapping[Exponent, float]:
        return MappingProxyType(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(not any(exps) for exps in self._terms)

    def constant_term(self) -> float:
        return self._terms.get((0,) * len(self._vars), 0.0)

    def degree(self) -> int:
        """Total degree; the zero polynomial has degree 0."""
        return max((sum(exps) for exps in self._terms), default=0)

    def min_degree(self) -> int:
        return min((sum(exps) for exps in self._terms), default=0)

    def degree_in(self, names: Iterable[str]) -> int:
        idx = [i for i, v in enumerate(self._vars) if v in set(names)]
        return max((sum(exps[i] for i in idx) for exps in self._terms), default=0)

    def used_vars(self) -> Tuple[str, ...]:
        return tuple(
            v for i, v in enumerate(self._vars) if any(exps[i] for exps in self._terms)
        )

    def coefficient(self, monomial: Mapping[str, int]) -> float:
        unknown = set(monomial) - set(self._vars)
        if any(monomial[name] for name in unknown):
            return 0.0
        key = tuple(int(monomial.get(v, 0)) for v in self._vars)
        return self._terms.get(key, 0.0)

    def extend(self, names: Iterable[str]) -> "Polynomial":
        """Same polynomial over the union of its variables and ``names``."""
        merged = _merge_names(self._vars, tuple(names))
        return Polynomial._raw(merged, self._expanded(merged))

    def trim(self) -> "Polynomial":
        """Drop variables that appear in no term."""
        return self.restrict(self.used_vars())

    def restrict(self, names: Sequence[str]) -> "Polynomial":
        keep = tuple(sorted(names))
        missing = [v for v in self.used_vars() if v not in keep]
        if missing:
            raise PolynomialError(f"Cannot drop variables still in use: {missing}")
        idx = [self._vars.index(v) if v in self._vars else None for v in keep]
        terms = {
            tuple(exps[i] if i is not None else 0 for i in idx): c
            for exps, c in self._terms.items()
        }
        return Polynomial._raw(keep, terms)

    def _expanded(self, names: Tuple[str, ...]) -> Dict[Exponent, float]:
        if names == self._vars:
            return dict(self._terms)
        pos = [names.index(v) for v in self._vars]
        out: Dict[Exponent, float] = {}
        width = len(names)
        for exps, c in self._terms.items():
            key = [0] * width
            for p, e in zip(pos, exps):
                key[p] = e
            out[tuple(key)] = c
        return out

    # -- arithmetic ----------------------------------------------------

    @staticmethod
    def _coerce(other) -> Optional["Polynomial"]:
        if isinstance(other, Polynomial):
            return other
        if isinstance(other, numbers.Real):
            return Polynomial.constant(float(other))
        return None

    def __add__(self, other):
        rhs = self._coerce(other)
        if rhs is None:
            return NotImplemented
        names = _merge_names(self._vars, rhs._vars)
        out = self._expanded(names)
        for k, v in rhs._expanded(names).items():
            out[k] = out.get(k, 0.0) + v
        return Polynomial._raw(names, out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial._raw(self._vars, {k: -v for k, v in self._terms.items()})

    def __sub__(self, other):
        rhs = self._coerce(other)
        if rhs is None:
            return NotImplemented
        return self + (-rhs)

    def __rsub__(self, other):
        lhs = self._coerce(other)
        if lhs is None:
            return NotImplemented
        return lhs + (-self)

    def scale(self, factor: Scalar) -> "Polynomial":
        f = float(factor)
        return Polynomial._raw(self._vars, {k: f * v for k, v in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, numbers.Real):
            return self.scale(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        names = _merge_names(self._vars, other._vars)
        a = self._expanded(names)
        b = other._expanded(names)
        out: Dict[Exponent, float] = {}
        for ka, va in a.items():
            for kb, vb in b.items():
                key = tuple(x + y for x, y in zip(ka, kb))
                out[key] = out.get(key, 0.0) + va * vb
        return Polynomial._raw(names, out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, numbers.Real):
            return self.scale(1.0 / float(other))
        if isinstance(other, Polynomial) and other.is_constant() and not other.is_zero():
            return self.scale(1.0 / other.constant_term())
        raise PolynomialError("Polynomials can only be divided by non-zero constants")

    def __pow__(self, n: int) -> "Polynomial":
        if not isinstance(n, numbers.Integral) or n < 0:
            raise PolynomialError(f"Exponent must be a non-negative integer, got {n!r}")
        result = Polynomial.constant(1.0, self._vars)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    # -- calculus ------------------------------------------------------

    def differentiate(self, var: str) -> "Polynomial":
        """Exact partial derivative; zero when ``var`` does not occur."""
        if var not in self._vars:
            return Polynomial.zero(self._vars)
        i = self._vars.index(var)
        out: Dict[Exponent, float] = {}
        for exps, c in self._terms.items():
            e = exps[i]
            if e == 0:
                continue
            key = exps[:i] + (e - 1,) + exps[i + 1:]
            out[key] = out.get(key, 0.0) + c * e
        return Polynomial._raw(self._vars, out)

    def gradient(self, variables: Sequence[str]) -> List["Polynomial"]:
        return [self.differentiate(v) for v in variables]

    # -- evaluation ----------------------------------------------------

    def evaluate(self, point: Mapping[str, Scalar]) -> float:
        """Horner evaluation at a point binding every variable.

        Raises:
            PolynomialError: If a variable of the polynomial is unbound
        """
        values = []
        for v in self._vars:
            if v not in point:
                raise PolynomialError(f"Unbound variable '{v}'")
            values.append(float(point[v]))
        return _horner(self._terms, values)

    def evaluate_batch(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        """Vectorized evaluation over equally long sample columns."""
        for v in self._vars:
            if v not in columns:
                raise PolynomialError(f"Unbound variable '{v}'")
        length = len(next(iter(columns.values()))) if columns else 1
        out = np.zeros(length)
        for exps, c in self._terms.items():
            term = np.full(length, c)
            for v, e in zip(self._vars, exps):
                if e:
                    term = term * np.asarray(columns[v], dtype=float) ** e
            out += term
        return out

    def partial(self, values: Mapping[str, Scalar]) -> "Polynomial":
        """Substitute numbers for some variables, keeping the rest symbolic."""
        bound = [i for i, v in enumerate(self._vars) if v in values]
        if not bound:
            return self
        keep = tuple(v for i, v in enumerate(self._vars) if i not in bound)
        keep_idx = [i for i in range(len(self._vars)) if i not in bound]
        out: Dict[Exponent, float] = {}
        for exps, c in self._terms.items():
            factor = c
            for i in bound:
                if exps[i]:
                    factor *= float(values[self._vars[i]]) ** exps[i]
            key = tuple(exps[i] for i in keep_idx)
            out[key] = out.get(key, 0.0) + factor
        return Polynomial._raw(keep, out)

    def collect(self, names: Sequence[str]) -> Dict[Exponent, "Polynomial"]:
        """Group terms by their exponents in ``names``.

        Returns a map from exponent tuples (in the order of ``names``) to the
        coefficient polynomial over the remaining variables.
        """
        names = tuple(names)
        pos = [self._vars.index(v) if v in self._vars else None for v in names]
        rest = tuple(v for v in self._vars if v not in names)
        rest_idx = [i for i, v in enumerate(self._vars) if v not in names]
        groups: Dict[Exponent, Dict[Exponent, float]] = {}
        for exps, c in self._terms.items():
            key = tuple(exps[p] if p is not None else 0 for p in pos)
            sub = tuple(exps[i] for i in rest_idx)
            bucket = groups.setdefault(key, {})
            bucket[sub] = bucket.get(sub, 0.0) + c
        return {k: Polynomial._raw(rest, v) for k, v in groups.items()}

    # -- comparison and display -----------------------------------------

    def _named_terms(self) -> Dict[Tuple[Tuple[str, int], ...], float]:
        return {
            tuple((v, e) for v, e in zip(self._vars, exps) if e): c
            for exps, c in self._terms.items()
        }

    def __eq__(self, other) -> bool:
        rhs = self._coerce(other)
        if rhs is None:
            return NotImplemented
        return self._named_terms() == rhs._named_terms()

    def __hash__(self) -> int:
        return hash(frozenset(self._named_terms().items()))

    def allclose(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        return (self - other).max_abs_coefficient() <= tol

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        ordered = sorted(self._terms.items(), key=lambda kv: (sum(kv[0]), kv[0]))
        pieces: List[str] = []
        for exps, c in ordered:
            factors = [
                v if e == 1 else f"{v}^{e}" for v, e in zip(self._vars, exps) if e
            ]
            mag = abs(c)
            if factors and mag == 1.0:
                body = "*".join(factors)
            else:
                body = "*".join([repr(mag)] + factors)
            sign = "-" if c < 0 else "+"
            if not pieces:
                pieces.append(body if sign == "+" else f"-{body}")
            else:
                pieces.append(f"{sign} {body}")
        return " ".join(pieces)

    def __repr__(self) -> str:
        return f"Polynomial('{self}')"


def _horner(terms: Mapping[Exponent, float], values: Sequence[float]) -> float:
    if not terms:
        return 0.0
    if not values:
        return sum(terms.values())
    groups: Dict[int, Dict[Exponent, float]] = {}
    for exps, c in terms.items():
        groups.setdefault(exps[0], {})[exps[1:]] = c
    x = values[0]
    rest = values[1:]
    acc = 0.0
    for k in range(max(groups), -1, -1):
        acc = acc * x + (_horner(groups[k], rest) if k in groups else 0.0)
    return acc


_NAME = re.compile(r"\b([A-Za-z_][A-Za-z_0-9]*)\b(?!\s*\()")
_TRANSFORMS = standard_transformations + (implicit_multiplication, convert_xor)
_PARSE_ERRORS = (sp.SympifyError, SyntaxError, TokenError, TypeError, ValueError, ZeroDivisionError, BasePolynomialError)


def sympify_text(text: str) -> sp.Basic:
    """Parse polynomial or relational text with sympy; ``^`` is a power.

    Every bare name becomes a plain symbol, so variables such as ``E``, ``I``
    or ``beta`` never pick up sympy's constants or functions.
    """
    if not text or not text.strip():
        raise PolynomialError("Empty polynomial expression")
    if "__" in text:
        raise PolynomialError(f"Unexpected '__' in '{text}'")
    local = {name: sp.Symbol(name) for name in _NAME.findall(text)}
    try:
        return parse_expr(text, local_dict=local, transformations=_TRANSFORMS)
    except _PARSE_ERRORS as e:
        raise PolynomialError(f"Cannot parse '{text}': {e}") from e


def from_sympy(expr: sp.Basic) -> Polynomial:
    """Expand a sympy expression into a Polynomial with float coefficients.

    Integral float exponents (``x**2.0``) count as integers.
    """
    expr = expr.replace(
        lambda e: e.is_Pow and e.exp.is_Float and float(e.exp).is_integer(),
        lambda e: sp.Pow(e.base, int(e.exp)),
    )
    gens = sorted(expr.free_symbols, key=str)
    try:
        if not gens:
            value = complex(sp.N(expr))
            if value.imag != 0.0:
                raise PolynomialError(f"'{expr}' is not real")
            terms = {(): value.real}
        else:
            terms = {exps: float(c) for exps, c in sp.Poly(sp.expand(expr), *gens).terms()}
    except _PARSE_ERRORS as e:
        raise PolynomialError(f"'{expr}' is not a polynomial: {e}") from e
    if not all(np.isfinite(c) for c in terms.values()):
        raise PolynomialError(f"'{expr}' has a non-finite coefficient")
    return Polynomial([str(g) for g in gens], terms)


PolyLike = Union[Polynomial, Scalar]


def as_polynomial(value: PolyLike) -> Polynomial:
    if isinstance(value, Polynomial):
        return value
    if isinstance(value, str):
        return Polynomial.parse(value)
    return Polynomial.constant(float(value))


class PolyMatrix:
    """Rectangular matrix of polynomials sharing one variable ordering."""

    __slots__ = ("_rows", "_vars")
    __array_ufunc__ = None

    def __init__(self, rows: Sequence[Sequence[PolyLike]]):
        raw = [[as_polynomial(e) for e in row] for row in rows]
        if not raw or not raw[0]:
            raise PolynomialError("PolyMatrix needs at least one entry")
        width = len(raw[0])
        if any(len(row) != width for row in raw):
            raise PolynomialError("PolyMatrix rows must have equal length")
        names: Tuple[str, ...] = ()
        for row in raw:
            for entry in row:
                names = _merge_names(names, entry.vars)
        self._vars = names
        self._rows = tuple(tuple(e.extend(names) for e in row) for row in raw)

    @classmethod
    def identity(cls, n: int) -> "PolyMatrix":
        return cls([[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)])

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "PolyMatrix":
        return cls([[0.0] * cols for _ in range(rows)])

    @classmethod
    def constant(cls, array) -> "PolyMatrix":
        arr = np.atleast_2d(np.asarray(array, dtype=float))
        return cls(arr.tolist())

    @classmethod
    def column(cls, entries: Sequence[PolyLike]) -> "PolyMatrix":
        return cls([[e] for e in entries])

    @classmethod
    def block(cls, blocks: Sequence[Sequence["PolyMatrix"]]) -> "PolyMatrix":
        rows: List[List[Polynomial]] = []
        for block_row in blocks:
            height = block_row[0].shape[0]
            for i in range(height):
                row: List[Polynomial] = []
                for blk in block_row:
                    if blk.shape[0] != height:
                        raise PolynomialError("Block rows must share a height")
                    row.extend(blk.row(i))
                rows.append(row)
        return cls(rows)

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self._rows), len(self._rows[0])

    @property
    def vars(self) -> Tuple[str, ...]:
        return self._vars

    def __getitem__(self, index: Tuple[int, int]) -> Polynomial:
        i, j = index
        return self._rows[i][j]

    def row(self, i: int) -> List[Polynomial]:
        return list(self._rows[i])

    def entries(self) -> Iterator[Tuple[int, int, Polynomial]]:
        for i, row in enumerate(self._rows):
            for j, entry in enumerate(row):
                yield i, j, entry

    def _map(self, fn) -> "PolyMatrix":
        return PolyMatrix([[fn(e) for e in row] for row in self._rows])

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.shape != other.shape:
            raise PolynomialError(f"Shape mismatch {self.shape} vs {other.shape}")
        return PolyMatrix(
            [[a + b for a, b in zip(ra, rb)] for ra, rb in zip(self._rows, other._rows)]
        )

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + (-other)

    def __neg__(self) -> "PolyMatrix":
        return self._map(lambda e: -e)

    def __mul__(self, factor: PolyLike) -> "PolyMatrix":
        return self._map(lambda e: e * factor)

    __rmul__ = __mul__

    def __matmul__(self, other) -> "PolyMatrix":
        if not isinstance(other, PolyMatrix):
            other = PolyMatrix.constant(other)
        n, k = self.shape
        k2, m = other.shape
        if k != k2:
            raise PolynomialError(f"Cannot multiply {self.shape} by {other.shape}")
        rows = []
        for i in range(n):
            row = []
            for j in range(m):
                acc = Polynomial.zero()
                for t in range(k):
                    a, b = self._rows[i][t], other._rows[t][j]
                    if a.is_zero() or b.is_zero():
                        continue
                    acc = acc + a * b
                row.append(acc)
            rows.append(row)
        return PolyMatrix(rows)

    def __rmatmul__(self, other) -> "PolyMatrix":
        return PolyMatrix.constant(other) @ self

    @property
    def T(self) -> "PolyMatrix":
        n, m = self.shape
        return PolyMatrix([[self._rows[i][j] for i in range(n)] for j in range(m)])

    def sym(self) -> "PolyMatrix":
        """Return ``M + M^T``."""
        return self + self.T

    def is_symmetric(self, tol: float = 0.0) -> bool:
        n, m = self.shape
        if n != m:
            return False
        return all(
            (self._rows[i][j] - self._rows[j][i]).max_abs_coefficient() <= tol
            for i in range(n)
            for j in range(i + 1, n)
        )

    def degree(self) -> int:
        return max(e.degree() for _, _, e in self.entries())

    def degree_in(self, names: Iterable[str]) -> int:
        names = tuple(names)
        return max(e.degree_in(names) for _, _, e in self.entries())

    def differentiate(self, var: str) -> "PolyMatrix":
        return self._map(lambda e: e.differentiate(var))

    def partial(self, values: Mapping[str, Scalar]) -> "PolyMatrix":
        return self._map(lambda e: e.partial(values))

    def evaluate(self, point: Mapping[str, Scalar]) -> np.ndarray:
        n, m = self.shape
        out = np.empty((n, m))
        for i, j, e in self.entries():
            out[i, j] = e.evaluate(point)
        return out

    def is_constant(self) -> bool:
        return all(e.is_constant() for _, _, e in self.entries())

    def to_array(self) -> np.ndarray:
        """Numeric value of a constant matrix."""
        if not self.is_constant():
            raise PolynomialError("Matrix still depends on variables")
        return self.evaluate({v: 0.0 for v in self._vars})

    def __str__(self) -> str:
        return "[" + "; ".join(", ".join(str(e) for e in row) for row in self._rows) + "]"


def variables_of(polys: Iterable[Polynomial]) -> Tuple[str, ...]:
    names: Tuple[str, ...] = ()
    for p in polys:
        names = _merge_names(names, p.vars)
    return names


def jacobian(polys: Sequence[Polynomial], variables: Sequence[str]) -> PolyMatrix:
    """Matrix of partial derivatives ``d polys[i] / d variables[j]``."""
    return PolyMatrix([[p.differentiate(v) for v in variables] for p in polys])


def lie_derivative(
    h: Polynomial, field: Sequence[Polynomial], variables: Sequence[str]
) -> Polynomial:
    """Derivative of ``h`` along the vector field ``field`` over ``variables``.

    Raises:
        PolynomialError: If the field and the variable list differ in length
    """
    if len(field) != len(variables):
        raise PolynomialError(
            f"Vector field has {len(field)} components for {len(variables)} state variables"
        )
    acc = Polynomial.zero(h.vars)
    for var, component in zip(variables, field):
        dh = h.differentiate(var)
        if not dh.is_zero():
            acc = acc + dh * component
    return acc


def monomial_exponents(n_vars: int, max_degree: int, min_degree: int = 0) -> List[Exponent]:
    """Exponent vectors in graded order with ``min_degree <= degree <= max_degree``."""
    out: List[Exponent] = []
    for d in range(max(min_degree, 0), max_degree + 1):
        block = []
        for combo in itertools.combinations_with_replacement(range(n_vars), d):
            exps = [0] * n_vars
            for i in combo:
                exps[i] += 1
            block.append(tuple(exps))
        out.extend(sorted(block, reverse=True))
    return out


def monomial(variables: Sequence[str], exps: Exponent) -> Polynomial:
    return Polynomial(variables, {tuple(exps): 1.0})


class CompiledPolynomials:
    """Vectorized evaluator for a fixed list of polynomials.

    Monomials shared between the polynomials are evaluated once; a call costs
    one power table and one matrix-vector product.
    """

    def __init__(self, polys: Sequence[Polynomial], variables: Sequence[str]):
        self.variables = tuple(variables)
        self.size = len(polys)
        used = set(variables_of(p.trim() for p in polys))
        missing = sorted(used - set(self.variables))
        if missing:
            raise PolynomialError(f"Variables {missing} are not bound by {list(self.variables)}")
        index: Dict[Exponent, int] = {}
        entries: List[Tuple[int, int, float]] = []
        for row, p in enumerate(polys):
            pos = [self.variables.index(v) if v in self.variables else None for v in p.vars]
            for exps, c in p.terms.items():
                key = [0] * len(self.variables)
                for k, e in zip(pos, exps):
                    if e:
                        key[k] = e
                col = index.setdefault(tuple(key), len(index))
                entries.append((row, col, c))
        self._exps = np.array(list(index), dtype=int).reshape(len(index), len(self.variables))
        self._coef = np.zeros((self.size, len(index)))
        for row, col, c in entries:
            self._coef[row, col] += c

    def __call__(self, values: Sequence[float]) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if not self._exps.shape[0]:
            return np.zeros(self.size)
        powers = np.prod(v[None, :] ** self._exps, axis=1)
        return self._coef @ powers
