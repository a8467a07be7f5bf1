"""Sum-of-squares compilation onto the dense SDP solver.

A polynomial ``q(x, theta)`` that is affine in the decision variables
``theta`` is certified non-negative by a Gram matrix ``G`` with
``q = m(x)^T G m(x)`` and ``G`` PSD. Matrix inequalities ``S(x) <= 0`` are
scalarized as ``-v^T S(x) v`` over auxiliary variables ``v`` and certified
the same way on the tensor basis ``m(x) (x) v``.
"""

import math
import sys
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .poly import (
    Exponent,
    PolyMatrix,
    Polynomial,
    monomial,
    monomial_exponents,
)
from .sdp import (
    InfeasibilityCertificate,
    SdpProblem,
    SdpSolution,
    SdpStatus,
    SolverOptions,
    solve,
)

AUX_PREFIX = "_v"


class SosCompileError(Exception):
    """Subject cannot be compiled into a Gram-matrix program."""
    pass


class BilinearError(SosCompileError):
    """A product of two decision variables appeared in a subject."""
    pass


def aux_names(count: int) -> List[str]:
    return [f"{AUX_PREFIX}{i}" for i in range(count)]


def _format_monomial(names: Sequence[str], exps: Exponent) -> str:
    parts = []
    for v, e in zip(names, exps):
        if e == 1:
            parts.append(v)
        elif e:
            parts.append(f"{v}^{e}")
    return "*".join(parts) or "1"


@dataclass
class MonomialBasis:
    """Gram basis: exponent vectors over a fixed, sorted variable tuple."""
    vars: Tuple[str, ...]
    exponents: List[Exponent]

    def __post_init__(self):
        self.vars = tuple(self.vars)
        if list(self.vars) != sorted(self.vars):
            raise SosCompileError(f"Basis variables must be sorted: {self.vars}")
        if len(set(self.exponents)) != len(self.exponents):
            raise SosCompileError("Monomial basis contains duplicates")

    @classmethod
    def up_to(cls, variables: Iterable[str], degree: int, min_degree: int = 0) -> "MonomialBasis":
        names = tuple(sorted(variables))
        return cls(names, monomial_exponents(len(names), degree, min_degree))

    @classmethod
    def tensor(cls, variables: Iterable[str], degree: int, aux: Sequence[str], min_degree: int = 0) -> "MonomialBasis":
        """Monomials of ``variables`` up to ``degree`` times each auxiliary variable."""
        base = tuple(sorted(variables))
        names = tuple(sorted(set(base) | set(aux)))
        pos = {v: i for i, v in enumerate(names)}
        exps: List[Exponent] = []
        for a in aux:
            for e in monomial_exponents(len(base), degree, min_degree):
                key = [0] * len(names)
                for v, k in zip(base, e):
                    key[pos[v]] = k
                key[pos[a]] = 1
                exps.append(tuple(key))
        return cls(names, exps)

    def __len__(self) -> int:
        return len(self.exponents)

    def degree(self) -> int:
        return max((sum(e) for e in self.exponents), default=0)

    def monomials(self) -> List[Polynomial]:
        return [monomial(self.vars, e) for e in self.exponents]

    def labels(self) -> List[str]:
        return [_format_monomial(self.vars, e) for e in self.exponents]

    def products(self) -> Dict[Exponent, List[Tuple[int, int]]]:
        """Index pairs ``i <= j`` grouped by the exponent of ``m_i * m_j``."""
        out: Dict[Exponent, List[Tuple[int, int]]] = {}
        for i, a in enumerate(self.exponents):
            for j in range(i, len(self.exponents)):
                key = tuple(x + y for x, y in zip(a, self.exponents[j]))
                out.setdefault(key, []).append((i, j))
        return out

    def subset(self, keep: Sequence[int]) -> "MonomialBasis":
        return MonomialBasis(self.vars, [self.exponents[i] for i in keep])


@dataclass
class AffineSplit:
    """``q = const + sum_k parts[k] * theta_k`` with parts over the remaining variables."""
    const: Polynomial
    parts: Dict[str, Polynomial]
    variables: Tuple[str, ...]

    def coefficient_rows(self) -> Dict[Exponent, Tuple[float, Dict[str, float]]]:
        """Per monomial of ``variables``: constant coefficient and theta coefficients."""
        rows: Dict[Exponent, Tuple[float, Dict[str, float]]] = {}
        for exps, c in _aligned(self.const, self.variables).terms.items():
            rows[exps] = (c, {})
        for name, part in self.parts.items():
            for exps, c in _aligned(part, self.variables).terms.items():
                c0, lin = rows.get(exps, (0.0, {}))
                lin = dict(lin)
                lin[name] = lin.get(name, 0.0) + c
                rows[exps] = (c0, lin)
        return rows


def _aligned(p: Polynomial, names: Tuple[str, ...]) -> Polynomial:
    return p.extend(names).restrict(names)


def split_affine(q: Polynomial, decision_vars: Sequence[str], label: str = "") -> AffineSplit:
    """Split ``q`` into its theta-free part and the coefficient of each theta.

    Raises:
        BilinearError: If any term has total degree above one in the decision variables
    """
    dv = tuple(v for v in decision_vars if v in q.vars)
    rest = tuple(v for v in q.vars if v not in set(decision_vars))
    if not dv:
        return AffineSplit(const=_aligned(q, rest), parts={}, variables=rest)
    const = Polynomial.zero(rest)
    parts: Dict[str, Polynomial] = {}
    for key, coeff in q.collect(dv).items():
        order = sum(key)
        if order == 0:
            const = const + coeff
        elif order == 1:
            name = dv[key.index(1)]
            parts[name] = _aligned(coeff, rest)
        else:
            factors = _format_monomial(dv, key)
            where = f" in {label}" if label else ""
            raise BilinearError(
                f"Bilinear decision term {factors}{where} (multiplying {coeff}); "
                "fix one factor before compiling"
            )
    return AffineSplit(const=_aligned(const, rest), parts=parts, variables=rest)


@dataclass
class GramRow:
    matrix: np.ndarray
    rhs: float
    theta: Dict[str, float]
    monomial: Exponent


@dataclass
class SosFragment:
    """Compiled Gram constraint: ``<A_a, G> - sum_k theta_coef * theta_k = rhs`` per monomial."""
    label: str
    basis: MonomialBasis
    rows: List[GramRow]
    subject: Polynomial
    decision_vars: Tuple[str, ...]
    dropped: List[str] = field(default_factory=list)
    linear_rows: List[Tuple[Dict[str, float], float, str]] = field(default_factory=list)
    contradictions: List[str] = field(default_factory=list)

    def to_problem(self) -> SdpProblem:
        """Standalone feasibility SDP with decision variables as free variables.

        Only the Gram rows are included; ``linear_rows`` are left to the caller.
        """
        p = SdpProblem()
        blk = p.add_block(len(self.basis), self.label)
        p.add_free(len(self.decision_vars))
        index = {name: k for k, name in enumerate(self.decision_vars)}
        for row in self.rows:
            free = {index[name]: -c for name, c in row.theta.items() if c != 0.0}
            p.add_constraint({blk: row.matrix}, row.rhs, free=free, label=_format_monomial(self.basis.vars, row.monomial))
        return p


def _newton_reduce(basis: MonomialBasis, rows: Mapping[Exponent, Tuple[float, Dict[str, float]]]) -> Tuple[MonomialBasis, List[int]]:
    """Drop basis monomials whose square is forced to have a zero coefficient.

    A diagonal Gram entry that must vanish forces its whole row to zero in any
    PSD solution, so the monomial can be removed without loss.
    """
    keep = list(range(len(basis)))
    dropped: List[int] = []
    changed = True
    while changed:
        changed = False
        current = basis.subset(keep)
        products = current.products()
        for pos, idx in enumerate(list(keep)):
            square = tuple(2 * e for e in basis.exponents[idx])
            if products.get(square) != [(pos, pos)]:
                continue
            c0, lin = rows.get(square, (0.0, {}))
            if c0 == 0.0 and not any(lin.values()):
                keep.remove(idx)
                dropped.append(idx)
                changed = True
                break
    return basis.subset(keep), dropped


def _compile(q: Polynomial, basis: MonomialBasis, split: AffineSplit, label: str, decision_vars: Tuple[str, ...], reduce: bool = True) -> SosFragment:
    rows = split.coefficient_rows()
    dropped: List[str] = []
    if reduce:
        reduced, gone = _newton_reduce(basis, rows)
        dropped = [_format_monomial(basis.vars, basis.exponents[i]) for i in gone]
        basis = reduced
    products = basis.products()
    # after reduction a term may lose every Gram product; it then pins theta linearly
    linear_rows: List[Tuple[Dict[str, float], float, str]] = []
    contradictions: List[str] = []
    for exps, (c0, lin) in rows.items():
        if exps in products:
            continue
        lin = {k: v for k, v in lin.items() if v != 0.0}
        name = _format_monomial(split.variables, exps)
        if lin:
            linear_rows.append((lin, -c0, f"{label}[{name}]"))
        elif c0 != 0.0:
            contradictions.append(f"{label or 'subject'}: monomial {name} has no Gram representation")
    n = len(basis)
    out: List[GramRow] = []
    for exps in sorted(products, key=lambda e: (sum(e), e)):
        A = np.zeros((n, n))
        for i, j in products[exps]:
            A[i, j] = 1.0
            A[j, i] = 1.0
        c0, lin = rows.get(exps, (0.0, {}))
        out.append(GramRow(matrix=A, rhs=c0, theta=dict(lin), monomial=exps))
    return SosFragment(
        label=label,
        basis=basis,
        rows=out,
        subject=q,
        decision_vars=decision_vars,
        dropped=dropped,
        linear_rows=linear_rows,
        contradictions=contradictions,
    )


def _half_range(
    split: AffineSplit, degree: Optional[int], label: str, counted: Optional[Sequence[str]] = None
) -> Tuple[int, int]:
    """Gram degree range ``(lo, hi)`` from the degrees of the subject's terms.

    Only variables in ``counted`` (default: all) contribute to a term's degree.
    """
    names = split.variables
    counted = set(names if counted is None else counted)
    idx = [i for i, v in enumerate(names) if v in counted]
    live = [e for e, (c0, lin) in split.coefficient_rows().items() if c0 != 0.0 or any(lin.values())]
    degrees = {e: sum(e[i] for i in idx) for e in live}
    top = max(degrees.values(), default=0)
    bottom = min(degrees.values(), default=0)
    what = label or "subject"
    if degree is None:
        if top % 2:
            worst = max(live, key=lambda e: degrees[e])
            raise SosCompileError(
                f"{what} has odd degree {top} (monomial {_format_monomial(names, worst)}); "
                "odd leading terms cannot be SOS"
            )
        degree = top // 2
    if top > 2 * degree:
        worst = max(live, key=lambda e: degrees[e])
        raise SosCompileError(
            f"{what}: monomial {_format_monomial(names, worst)} of degree {top} "
            f"exceeds twice the Gram degree {degree}"
        )
    return min(int(math.ceil(bottom / 2.0)), degree), degree


def compile_scalar(
    p: Polynomial,
    degree: Optional[int] = None,
    decision_vars: Sequence[str] = (),
    label: str = "",
) -> SosFragment:
    """Compile ``p >= 0`` (globally) into Gram coefficient-matching rows.

    Args:
        p: Subject polynomial, affine in ``decision_vars``
        degree: Gram basis degree; defaults to half the subject degree
        decision_vars: Names treated as unknown coefficients
        label: Name used in diagnostics

    Returns:
        SosFragment whose rows tie Gram entries to the subject coefficients

    Raises:
        SosCompileError: On odd degree or a monomial beyond ``2 * degree``
        BilinearError: If decision variables multiply each other
    """
    decision_vars = tuple(decision_vars)
    split = split_affine(p, decision_vars, label)
    lo, hi = _half_range(split, degree, label)
    basis = MonomialBasis.up_to(split.variables, hi, lo)
    return _compile(p, basis, split, label, decision_vars)


def scalarize(S: PolyMatrix, aux: Optional[Sequence[str]] = None) -> Polynomial:
    """``v^T S v`` over auxiliary variables ``v``."""
    n = S.shape[0]
    v = [Polynomial.variable(name) for name in (aux or aux_names(n))]
    acc = Polynomial.zero()
    for i, j, entry in S.entries():
        if not entry.is_zero():
            acc = acc + entry * v[i] * v[j]
    return acc


def compile_matrix(
    S: PolyMatrix,
    degree: Optional[int] = None,
    decision_vars: Sequence[str] = (),
    sense: str = "nsd",
    label: str = "",
) -> SosFragment:
    """Compile a pointwise matrix inequality on a symmetric polynomial matrix.

    ``sense="nsd"`` certifies ``S <= 0`` via SOS of ``-v^T S v``;
    ``sense="psd"`` certifies ``S >= 0`` via SOS of ``v^T S v``.

    Raises:
        SosCompileError: If ``S`` is not square and symmetric, or on degree errors
    """
    if sense not in ("nsd", "psd"):
        raise SosCompileError(f"Unknown matrix sense '{sense}', expected 'nsd' or 'psd'")
    n, m = S.shape
    if n != m or not S.is_symmetric(tol=1e-12):
        raise SosCompileError(f"{label or 'matrix'} is not symmetric (shape {S.shape})")
    decision_vars = tuple(decision_vars)
    aux = aux_names(n)
    clash = set(aux) & set(S.vars)
    if clash:
        raise SosCompileError(f"Auxiliary names {sorted(clash)} collide with subject variables")
    q = scalarize(S, aux)
    if sense == "nsd":
        q = -q
    split = split_affine(q, decision_vars, label)
    # subjects never mention every v when S has zero rows; keep them in the basis anyway
    split = AffineSplit(
        const=split.const.extend(aux),
        parts={k: p.extend(aux) for k, p in split.parts.items()},
        variables=tuple(sorted(set(split.variables) | set(aux))),
    )
    x_names = tuple(v for v in split.variables if v not in aux)
    lo, hi = _half_range(split, degree, label or "matrix", counted=x_names)
    basis = MonomialBasis.tensor(x_names, hi, aux, lo)
    return _compile(q, basis, split, label, decision_vars)


def gram_polynomial(basis: MonomialBasis, G: np.ndarray) -> Polynomial:
    """Expand ``m^T G m``."""
    mons = basis.monomials()
    acc = Polynomial.zero(basis.vars)
    for i, mi in enumerate(mons):
        for j, mj in enumerate(mons):
            if G[i, j] != 0.0:
                acc = acc + (mi * mj).scale(G[i, j])
    return acc


@dataclass
class SosResult:
    status: SdpStatus
    theta: Dict[str, float]
    grams: Dict[str, np.ndarray]
    bases: Dict[str, MonomialBasis]
    slack: Optional[float] = None
    solution: Optional[SdpSolution] = None
    certificate: Optional[InfeasibilityCertificate] = None
    reason: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == SdpStatus.FEASIBLE

    def substitute(self, p: Polynomial) -> Polynomial:
        """Replace decision variables in ``p`` by their solved values."""
        return p.partial(self.theta)


class SosProgram:
    """Collection of SOS, matrix-SOS and linear constraints sharing decision variables.

    Linear equalities on the decision variables are eliminated before the SDP
    is assembled: ``theta = theta0 + N eta`` with ``N`` a nullspace basis.
    """

    def __init__(self, decision_vars: Sequence[str] = ()):
        self.decision_vars: Tuple[str, ...] = tuple(decision_vars)
        self.fragments: List[SosFragment] = []
        self._eq_rows: List[Tuple[Dict[str, float], float, str]] = []
        self.radius: Optional[float] = None

    def add_linear(self, coefficients: Mapping[str, float], rhs: float, label: str = "") -> None:
        unknown = set(coefficients) - set(self.decision_vars)
        if unknown:
            raise SosCompileError(f"Unknown decision variables {sorted(unknown)} in {label or 'linear constraint'}")
        self._eq_rows.append((dict(coefficients), float(rhs), label))

    def add_equality(self, p: Polynomial, label: str = "") -> int:
        """Require every coefficient of ``p`` (over non-decision variables) to vanish.

        Returns:
            Number of linear rows added
        """
        split = split_affine(p, self.decision_vars, label)
        added = 0
        for exps, (c0, lin) in split.coefficient_rows().items():
            lin = {k: v for k, v in lin.items() if v != 0.0}
            if not lin and c0 == 0.0:
                continue
            self._eq_rows.append((lin, -c0, f"{label}[{_format_monomial(split.variables, exps)}]"))
            added += 1
        return added

    def add_sos(self, p: Polynomial, degree: Optional[int] = None, label: str = "") -> SosFragment:
        frag = compile_scalar(p, degree, self.decision_vars, label or f"sos{len(self.fragments)}")
        self.fragments.append(frag)
        return frag

    def add_matrix_sos(self, S: PolyMatrix, degree: Optional[int] = None, sense: str = "nsd", label: str = "") -> SosFragment:
        frag = compile_matrix(S, degree, self.decision_vars, sense, label or f"msos{len(self.fragments)}")
        self.fragments.append(frag)
        return frag

    def bound_decisions(self, radius: float = 1e3) -> None:
        """Confine the free directions of theta to a Euclidean ball."""
        if radius <= 0:
            raise SosCompileError(f"Decision bound must be positive, got {radius}")
        self.radius = float(radius)

    def equality_rows(self) -> List[Tuple[Dict[str, float], float, str]]:
        """Explicit equalities plus those pinned by the compiled fragments."""
        rows = list(self._eq_rows)
        for frag in self.fragments:
            rows.extend(frag.linear_rows)
        return rows

    def _linear_system(self, eq_rows: List[Tuple[Dict[str, float], float, str]]) -> Tuple[np.ndarray, np.ndarray]:
        names = self.decision_vars
        index = {n: k for k, n in enumerate(names)}
        A = np.zeros((len(eq_rows), len(names)))
        b = np.zeros(len(eq_rows))
        for r, (coeffs, rhs, _) in enumerate(eq_rows):
            for name, c in coeffs.items():
                A[r, index[name]] = c
            b[r] = rhs
        return A, b

    def solve(self, opts: Optional[SolverOptions] = None) -> SosResult:
        names = self.decision_vars
        n_theta = len(names)
        contradictions = [c for frag in self.fragments for c in frag.contradictions]
        if contradictions:
            reason = contradictions[0]
            print(f"[sos] Structurally infeasible: {reason}", file=sys.stderr)
            return SosResult(status=SdpStatus.INFEASIBLE, theta={n: 0.0 for n in names}, grams={}, bases={}, reason=reason)
        eq_rows = self.equality_rows()
        A, b = self._linear_system(eq_rows)
        if A.shape[0] and n_theta:
            theta0 = np.linalg.lstsq(A, b, rcond=None)[0]
            N = linalg.null_space(A, rcond=1e-12)
        else:
            theta0 = np.zeros(n_theta)
            N = np.eye(n_theta)
        if A.shape[0]:
            resid = float(np.max(np.abs(A @ theta0 - b)))
            if resid > 1e-8 * (1.0 + float(np.max(np.abs(b)))):
                worst = int(np.argmax(np.abs(A @ theta0 - b)))
                reason = f"linear equalities inconsistent (residual {resid:.2e} at {eq_rows[worst][2]})"
                print(f"[sos] {reason}", file=sys.stderr)
                return SosResult(status=SdpStatus.INFEASIBLE, theta=dict(zip(names, theta0)), grams={}, bases={}, reason=reason)

        if not self.fragments:
            return SosResult(status=SdpStatus.FEASIBLE, theta=dict(zip(names, theta0)), grams={}, bases={})

        n_eta = N.shape[1]
        index = {n: k for k, n in enumerate(names)}
        p = SdpProblem()
        p.add_free(n_eta)
        blocks: List[Optional[int]] = []
        for frag in self.fragments:
            if not len(frag.basis):
                blocks.append(None)
                continue
            blk = p.add_block(len(frag.basis), frag.label)
            blocks.append(blk)
            for row in frag.rows:
                c = np.zeros(n_theta)
                for name, v in row.theta.items():
                    c[index[name]] = v
                coupling = -(c @ N) if n_eta else np.zeros(0)
                free = {k: float(v) for k, v in enumerate(coupling) if abs(v) > 1e-15}
                p.add_constraint({blk: row.matrix}, row.rhs + float(c @ theta0), free=free, label=f"{frag.label}:{_format_monomial(frag.basis.vars, row.monomial)}")
        if not p.block_dims:
            return SosResult(status=SdpStatus.FEASIBLE, theta=dict(zip(names, theta0)), grams={}, bases={}, reason="all constraints trivial")
        if self.radius is not None and n_eta:
            self._add_ball(p, n_eta)

        print(
            f"[sos] Program: fragments={len(self.fragments)} decisions={n_theta} "
            f"free_after_elimination={n_eta} blocks={p.block_dims}",
            file=sys.stderr,
        )
        sol = solve(p, opts)
        eta = sol.free[:n_eta] if n_eta else np.zeros(0)
        theta = theta0 + (N @ eta if n_eta else 0.0)
        grams = {
            frag.label: sol.blocks[blk] if blk is not None else np.zeros((0, 0))
            for frag, blk in zip(self.fragments, blocks)
        }
        bases = {frag.label: frag.basis for frag in self.fragments}
        return SosResult(
            status=sol.status,
            theta={name: float(v) for name, v in zip(names, theta)},
            grams=grams,
            bases=bases,
            slack=sol.slack,
            solution=sol,
            certificate=sol.certificate,
        )

    def _add_ball(self, p: SdpProblem, n_eta: int) -> None:
        # [[R, eta^T], [eta, R I]] PSD  <=>  |eta| <= R
        dim = n_eta + 1
        R = self.radius
        blk = p.add_block(dim, "decision_bound")
        for i in range(dim):
            for j in range(i, dim):
                E = np.zeros((dim, dim))
                if i == j:
                    E[i, i] = 1.0
                    p.add_constraint({blk: E}, R, label=f"bound[{i},{i}]")
                    continue
                E[i, j] = E[j, i] = 0.5
                if i == 0:
                    p.add_constraint({blk: E}, 0.0, free={j - 1: -1.0}, label=f"bound[0,{j}]")
                else:
                    p.add_constraint({blk: E}, 0.0, label=f"bound[{i},{j}]")


def check_sos(p: Polynomial, degree: Optional[int] = None, opts: Optional[SolverOptions] = None) -> SosResult:
    """Decide whether a fixed polynomial is a sum of squares."""
    prog = SosProgram()
    prog.add_sos(p, degree, label="subject")
    return prog.solve(opts)
