"""Dense primal-dual interior-point solver for small semidefinite programs.

Primal form::

    minimize    sum_b <C_b, X_b> + c^T y
    subject to  sum_b <A_ib, X_b> + (B y)_i = b_i,   X_b PSD,   y free

Search directions use Nesterov-Todd scaling and a Mehrotra-style centering
parameter; the Schur complement is factored by dense Cholesky, with free
variables eliminated through a second, smaller Schur complement.

Pure feasibility problems are solved by maximizing a slack ``t`` with
``X_b - t I`` PSD, so the sign of the optimal ``t`` tells feasible,
marginal and infeasible instances apart.
"""

import sys
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg


class SdpError(Exception):
    """Malformed semidefinite program."""
    pass


class SdpStatus(str, Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass
class Constraint:
    """One equality row: ``sum_b <blocks[b], X_b> + sum_k free[k] y_k = rhs``."""
    blocks: Dict[int, np.ndarray]
    free: Dict[int, float] = field(default_factory=dict)
    rhs: float = 0.0
    label: str = ""


@dataclass
class SdpProblem:
    """Dense SDP instance assembled row by row."""
    block_dims: List[int] = field(default_factory=list)
    constraints: List[Constraint] = field(default_factory=list)
    n_free: int = 0
    objective: Optional[Dict[int, np.ndarray]] = None
    free_objective: Optional[Dict[int, float]] = None
    block_labels: List[str] = field(default_factory=list)

    def add_block(self, dim: int, label: str = "") -> int:
        if dim < 1:
            raise SdpError(f"Block dimension must be >= 1, got {dim}")
        self.block_dims.append(int(dim))
        self.block_labels.append(label or f"block{len(self.block_dims) - 1}")
        return len(self.block_dims) - 1

    def add_free(self, count: int = 1) -> int:
        """Append free variables; returns the index of the first one."""
        start = self.n_free
        self.n_free += int(count)
        return start

    def add_constraint(
        self,
        blocks: Dict[int, np.ndarray],
        rhs: float,
        free: Optional[Dict[int, float]] = None,
        label: str = "",
    ) -> None:
        self.constraints.append(Constraint(blocks=blocks, free=dict(free or {}), rhs=float(rhs), label=label))

    @property
    def is_feasibility(self) -> bool:
        return self.objective is None and self.free_objective is None

    def validate(self) -> None:
        """Check shapes and symmetry.

        Raises:
            SdpError: If any coefficient matrix is mis-sized or non-symmetric
        """
        if not self.block_dims:
            raise SdpError("Problem has no PSD blocks")
        if any(d < 1 for d in self.block_dims):
            raise SdpError(f"Block dimensions must be >= 1: {self.block_dims}")
        mats = []
        for row, con in enumerate(self.constraints):
            for b, mat in con.blocks.items():
                mats.append((f"constraint {row} ({con.label or 'unlabeled'})", b, mat))
            for k in con.free:
                if not 0 <= k < self.n_free:
                    raise SdpError(f"Constraint {row} references free variable {k} of {self.n_free}")
        for b, mat in (self.objective or {}).items():
            mats.append(("objective", b, mat))
        for where, b, mat in mats:
            if not 0 <= b < len(self.block_dims):
                raise SdpError(f"{where} references unknown block {b}")
            mat = np.asarray(mat, dtype=float)
            dim = self.block_dims[b]
            if mat.shape != (dim, dim):
                raise SdpError(f"{where}: block {b} expects {dim}x{dim}, got {mat.shape}")
            if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(mat).max())):
                raise SdpError(f"{where}: coefficient matrix for block {b} is not symmetric")

    def dump(self) -> str:
        """Plain-text block-matrix listing for debugging."""
        lines = [
            f"blocks {' '.join(str(d) for d in self.block_dims)}",
            f"free {self.n_free}",
            f"constraints {len(self.constraints)}",
        ]
        for row, con in enumerate(self.constraints):
            lines.append(f"row {row} rhs {con.rhs!r} {con.label}".rstrip())
            for b in sorted(con.blocks):
                lines.extend(_matrix_lines(f"  A[{b}]", con.blocks[b]))
            for k in sorted(con.free):
                lines.append(f"  y[{k}] {con.free[k]!r}")
        if self.objective:
            for b in sorted(self.objective):
                lines.extend(_matrix_lines(f"C[{b}]", self.objective[b]))
        if self.free_objective:
            for k in sorted(self.free_objective):
                lines.append(f"c[{k}] {self.free_objective[k]!r}")
        return "\n".join(lines)


def _matrix_lines(tag: str, mat: np.ndarray) -> List[str]:
    mat = np.asarray(mat, dtype=float)
    nz = [(i, j, mat[i, j]) for i in range(mat.shape[0]) for j in range(i, mat.shape[1]) if mat[i, j] != 0.0]
    return [f"{tag} {i} {j} {v!r}" for i, j, v in nz]


@dataclass
class SolverOptions:
    tol: float = 1e-9
    max_iter: int = 100
    step_fraction: float = 0.95
    feasibility_tol: float = 1e-9
    infeasibility_margin: float = 1e-6
    dual_residual_tol: float = 1e-8
    reduced_accuracy_tol: float = 1e-6
    marginal_tol: float = 1e-6
    equality_tol: float = 1e-6


@dataclass
class InfeasibilityCertificate:
    """Dual improving ray: ``A^*(ray)`` PSD with unit trace and ``b^T ray < 0``."""
    ray: np.ndarray
    dual_blocks: List[np.ndarray]
    violation: float


@dataclass
class SdpSolution:
    status: SdpStatus
    blocks: List[np.ndarray]
    free: np.ndarray
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    objective: float = 0.0
    slack: Optional[float] = None
    slack_upper: Optional[float] = None
    certificate: Optional[InfeasibilityCertificate] = None
    reduced_accuracy: bool = False
    history: List[Tuple[float, float, float, float]] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status == SdpStatus.FEASIBLE

    def min_eigenvalues(self) -> List[float]:
        return [float(np.linalg.eigvalsh(X)[0]) for X in self.blocks]

    def dump(self) -> str:
        lines = [
            f"status {self.status.value}",
            f"iterations {self.iterations}",
            f"primal_residual {self.primal_residual!r}",
            f"dual_residual {self.dual_residual!r}",
            f"gap {self.gap!r}",
            f"objective {self.objective!r}",
        ]
        if self.slack is not None:
            lines.append(f"slack {self.slack!r} upper {self.slack_upper!r}")
        for b, X in enumerate(self.blocks):
            lines.extend(_matrix_lines(f"X[{b}]", X))
        lines.extend(f"y[{k}] {v!r}" for k, v in enumerate(self.free))
        if self.certificate is not None:
            lines.append(f"certificate violation {self.certificate.violation!r}")
        for k, (rp, rd, gap, mu) in enumerate(self.history):
            lines.append(f"iter {k} rp {rp:.3e} rd {rd:.3e} gap {gap:.3e} mu {mu:.3e}")
        return "\n".join(lines)


@dataclass
class _Dense:
    A: List[np.ndarray]          # per block, shape (m, n_b, n_b)
    B: np.ndarray                # (m, n_free)
    b: np.ndarray                # (m,)
    C: List[np.ndarray]          # per block, (n_b, n_b)
    c: np.ndarray                # (n_free,)

    @property
    def m(self) -> int:
        return self.b.size

    def op(self, X: List[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for A_b, X_b in zip(self.A, X):
            out += np.tensordot(A_b, X_b, axes=([1, 2], [0, 1]))
        return out

    def adj(self, lam: np.ndarray) -> List[np.ndarray]:
        return [np.tensordot(lam, A_b, axes=1) for A_b in self.A]


def _densify(p: SdpProblem) -> _Dense:
    m = len(p.constraints)
    A = [np.zeros((m, d, d)) for d in p.block_dims]
    B = np.zeros((m, p.n_free))
    b = np.zeros(m)
    for i, con in enumerate(p.constraints):
        for blk, mat in con.blocks.items():
            A[blk][i] = np.asarray(mat, dtype=float)
        for k, v in con.free.items():
            B[i, k] = v
        b[i] = con.rhs
    C = [np.zeros((d, d)) for d in p.block_dims]
    for blk, mat in (p.objective or {}).items():
        C[blk] = np.asarray(mat, dtype=float)
    c = np.zeros(p.n_free)
    for k, v in (p.free_objective or {}).items():
        c[k] = v
    return _Dense(A=A, B=B, b=b, C=C, c=c)


def _with_slack(d: _Dense) -> _Dense:
    """Substitute ``X_b = X'_b + t I`` and cap ``t <= 1`` with a 1x1 block."""
    m = d.m
    t_col = np.array([sum(np.trace(A_b[i]) for A_b in d.A) for i in range(m)])
    A = [np.concatenate([A_b, np.zeros((1,) + A_b.shape[1:])]) for A_b in d.A]
    cap = np.zeros((m + 1, 1, 1))
    cap[m, 0, 0] = 1.0
    A.append(cap)
    B = np.zeros((m + 1, d.B.shape[1] + 1))
    B[:m, : d.B.shape[1]] = d.B
    B[:m, -1] = t_col
    B[m, -1] = 1.0
    b = np.concatenate([d.b, [1.0]])
    C = [np.zeros_like(C_b) for C_b in d.C] + [np.zeros((1, 1))]
    c = np.zeros(B.shape[1])
    c[-1] = -1.0
    return _Dense(A=A, B=B, b=b, C=C, c=c)


def _max_step(X: np.ndarray, D: np.ndarray) -> float:
    """Largest alpha with ``X + alpha D`` PSD (inf when unbounded)."""
    try:
        L = linalg.cholesky(X, lower=True)
        T = linalg.solve_triangular(L, D, lower=True)
        T = linalg.solve_triangular(L, T.T, lower=True)
        lo = np.linalg.eigvalsh((T + T.T) / 2.0)[0]
    except linalg.LinAlgError:
        w, V = np.linalg.eigh(X)
        w = np.maximum(w, 1e-300)
        S = V / np.sqrt(w)
        lo = np.linalg.eigvalsh(S.T @ D @ S)[0]
    return np.inf if lo >= 0 else -1.0 / lo


def _eig_floor(w: np.ndarray) -> np.ndarray:
    return np.maximum(w, 1e-14 * max(1.0, float(np.max(np.abs(w), initial=0.0))))


def _root(X: np.ndarray) -> np.ndarray:
    """``L`` with ``L L^T = X``; iterates that lost definiteness to rounding get their eigenvalues floored."""
    try:
        return linalg.cholesky(X, lower=True)
    except linalg.LinAlgError:
        w, V = np.linalg.eigh((X + X.T) / 2.0)
        return V * np.sqrt(_eig_floor(w))


def _inverse(Z: np.ndarray) -> np.ndarray:
    try:
        return linalg.cho_solve(linalg.cho_factor(Z, lower=True), np.eye(Z.shape[0]))
    except linalg.LinAlgError:
        w, V = np.linalg.eigh((Z + Z.T) / 2.0)
        return (V / _eig_floor(w)) @ V.T


def _nt_scaling(X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Nesterov-Todd scaling matrix ``W`` with ``W Z W = X``."""
    L = _root(X)
    R = _root(Z)
    _, s, Vt = np.linalg.svd(R.T @ L)
    G = (L @ Vt.T) / np.sqrt(np.maximum(s, np.finfo(float).tiny))
    return G @ G.T


def project_psd(X: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in the Frobenius norm."""
    w, V = np.linalg.eigh((X + X.T) / 2.0)
    return (V * np.maximum(w, 0.0)) @ V.T


def _factor(M: np.ndarray):
    try:
        return linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError:
        shift = 1e-14 * max(1.0, np.trace(M) / M.shape[0])
        return linalg.cho_factor(M + shift * np.eye(M.shape[0]), lower=True)


@dataclass
class _IpState:
    X: List[np.ndarray]
    Z: List[np.ndarray]
    lam: np.ndarray
    y: np.ndarray


def _initial_point(d: _Dense) -> _IpState:
    dims = [C_b.shape[0] for C_b in d.C]
    n = sum(dims)
    row_norms = np.sqrt(sum(np.sum(A_b ** 2, axis=(1, 2)) for A_b in d.A))
    c_norm = np.sqrt(sum(np.sum(C_b ** 2) for C_b in d.C))
    root_n = np.sqrt(n)
    xi = max(10.0, root_n, root_n * np.max((1.0 + np.abs(d.b)) / (1.0 + row_norms), initial=0.0))
    eta = max(10.0, root_n, c_norm, np.max(row_norms, initial=0.0))
    return _IpState(
        X=[xi * np.eye(k) for k in dims],
        Z=[eta * np.eye(k) for k in dims],
        lam=np.zeros(d.m),
        y=np.zeros(d.B.shape[1]),
    )


@dataclass
class _IpResult:
    state: _IpState
    iterations: int
    converged: bool
    stalled: bool
    pobj: float
    dobj: float
    relp: float
    reld: float
    gap: float
    rp_inf: float
    history: List[Tuple[float, float, float, float]]
    stop_reason: str = ""


def _interior_point(d: _Dense, opts: SolverOptions, early_stop=None) -> _IpResult:
    s = _initial_point(d)
    dims = [C_b.shape[0] for C_b in d.C]
    n_total = sum(dims)
    nf = d.B.shape[1]
    b_norm = np.linalg.norm(d.b)
    c_norm = np.sqrt(sum(np.sum(C_b ** 2) for C_b in d.C) + np.sum(d.c ** 2))
    history: List[Tuple[float, float, float, float]] = []
    stalled = False
    converged = False
    reason = "max_iter"

    for it in range(opts.max_iter + 1):
        rp = d.b - d.op(s.X) - d.B @ s.y
        adj = d.adj(s.lam)
        Rd = [C_b - a_b - Z_b for C_b, a_b, Z_b in zip(d.C, adj, s.Z)]
        rf = d.c - d.B.T @ s.lam
        pobj = sum(np.sum(C_b * X_b) for C_b, X_b in zip(d.C, s.X)) + d.c @ s.y
        dobj = d.b @ s.lam
        mu = sum(np.sum(X_b * Z_b) for X_b, Z_b in zip(s.X, s.Z)) / n_total
        relp = np.linalg.norm(rp) / (1.0 + b_norm)
        reld = (np.sqrt(sum(np.sum(R ** 2) for R in Rd)) + np.linalg.norm(rf)) / (1.0 + c_norm)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        history.append((relp, reld, gap, mu))

        result = _IpResult(
            state=s, iterations=it, converged=False, stalled=stalled, pobj=pobj, dobj=dobj,
            relp=relp, reld=reld, gap=gap, rp_inf=float(np.max(np.abs(rp), initial=0.0)),
            history=history,
        )
        if relp <= opts.tol and reld <= opts.tol and gap <= opts.tol:
            converged = True
            reason = "converged"
            break
        if early_stop is not None:
            reason = early_stop(result) or ""
            if reason:
                break
        if stalled or it == opts.max_iter:
            reason = "stalled" if stalled else "max_iter"
            break

        try:
            nxt = _newton_step(d, s, Rd, rp, rf, mu, n_total, opts)
        except linalg.LinAlgError:
            reason = "numerical"
            break
        if nxt is None:
            reason = "numerical"
            break
        s, step = nxt
        if step < 1e-10:
            stalled = True

    result.converged = converged
    result.stalled = stalled
    result.stop_reason = reason
    return result


def _newton_step(
    d: _Dense, s: _IpState, Rd: List[np.ndarray], rp: np.ndarray, rf: np.ndarray, mu: float, n_total: int, opts: SolverOptions
) -> Optional[Tuple[_IpState, float]]:
    """Predictor-corrector step; None when the new iterate is not finite."""
    nf = d.B.shape[1]
    W = [_nt_scaling(X_b, Z_b) for X_b, Z_b in zip(s.X, s.Z)]
    M = np.zeros((d.m, d.m))
    for A_b, W_b in zip(d.A, W):
        WAW = np.einsum("kl,ilm,mn->ikn", W_b, A_b, W_b)
        M += np.einsum("ikl,jkl->ij", WAW, A_b)
    fac = _factor(M)
    if nf:
        MinvB = linalg.cho_solve(fac, d.B)
        schur = d.B.T @ MinvB
    Zinv = [_inverse(Z_b) for Z_b in s.Z]

    def direction(sigma: float):
        Rc = [sigma * mu * Zi - X_b for Zi, X_b in zip(Zinv, s.X)]
        WRW = [W_b @ R_b @ W_b for W_b, R_b in zip(W, Rd)]
        h = rp - d.op([a - w for a, w in zip(Rc, WRW)])
        if nf:
            rhs = d.B.T @ linalg.cho_solve(fac, h) - rf
            dy = np.linalg.lstsq(schur, rhs, rcond=None)[0]
            dlam = linalg.cho_solve(fac, h - d.B @ dy)
        else:
            dy = np.zeros(0)
            dlam = linalg.cho_solve(fac, h)
        dadj = d.adj(dlam)
        dZ = [R_b - a_b for R_b, a_b in zip(Rd, dadj)]
        dX = []
        for Rc_b, W_b, dZ_b in zip(Rc, W, dZ):
            D = Rc_b - W_b @ dZ_b @ W_b
            dX.append((D + D.T) / 2.0)
        dZ = [(D + D.T) / 2.0 for D in dZ]
        return dX, dZ, dlam, dy

    def steps(dX, dZ):
        ap = min([1.0] + [_max_step(X_b, D) for X_b, D in zip(s.X, dX)])
        ad = min([1.0] + [_max_step(Z_b, D) for Z_b, D in zip(s.Z, dZ)])
        return ap, ad

    dX, dZ, _, _ = direction(0.0)
    ap, ad = steps(dX, dZ)
    mu_aff = sum(
        np.sum((X_b + ap * a) * (Z_b + ad * z))
        for X_b, a, Z_b, z in zip(s.X, dX, s.Z, dZ)
    ) / n_total
    sigma = float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0)) if mu > 0 else 0.0

    dX, dZ, dlam, dy = direction(sigma)
    ap, ad = steps(dX, dZ)
    ap = min(1.0, opts.step_fraction * ap)
    ad = min(1.0, opts.step_fraction * ad)
    nxt = _IpState(
        X=[X_b + ap * D for X_b, D in zip(s.X, dX)],
        Z=[Z_b + ad * D for Z_b, D in zip(s.Z, dZ)],
        lam=s.lam + ad * dlam,
        y=s.y + ap * dy,
    )
    finite = all(np.all(np.isfinite(B)) for B in nxt.X + nxt.Z) and np.all(np.isfinite(nxt.lam)) and np.all(np.isfinite(nxt.y))
    if not finite:
        return None
    return nxt, max(ap, ad)


def solve(p: SdpProblem, opts: Optional[SolverOptions] = None) -> SdpSolution:
    """Solve an SDP, in feasibility mode when it carries no objective.

    Args:
        p: Problem to solve
        opts: Tolerances and iteration cap

    Returns:
        SdpSolution. In feasibility mode ``slack`` is the achieved ``t`` and
        ``slack_upper`` its dual bound; Infeasible carries a certificate.

    Raises:
        SdpError: If the problem is malformed
    """
    opts = opts or SolverOptions()
    p.validate()
    dense = _densify(p)
    feasibility = p.is_feasibility
    print(
        f"[sdp] Solve start: mode={'feasibility' if feasibility else 'optimization'} "
        f"blocks={p.block_dims} constraints={len(p.constraints)} free={p.n_free}",
        file=sys.stderr,
    )
    solution = _solve_feasibility(dense, opts) if feasibility else _solve_optimization(dense, opts)
    print(
        f"[sdp] Solve complete: status={solution.status.value} iterations={solution.iterations} "
        f"rp={solution.primal_residual:.2e} rd={solution.dual_residual:.2e} gap={solution.gap:.2e}"
        + (f" slack={solution.slack:.3e}" if solution.slack is not None else ""),
        file=sys.stderr,
    )
    return solution


def _solve_feasibility(d: _Dense, opts: SolverOptions) -> SdpSolution:
    aug = _with_slack(d)
    nb = len(d.A)

    def early_stop(r: _IpResult) -> Optional[str]:
        t_primal = r.state.y[-1]
        if t_primal >= 1e-6 and r.rp_inf <= 1e-10 * (1.0 + np.max(np.abs(d.b), initial=0.0)):
            return "strictly_feasible"
        if -r.dobj < -opts.infeasibility_margin and r.reld <= opts.dual_residual_tol:
            return "certified_infeasible"
        return None

    r = _interior_point(aug, opts, early_stop=early_stop)
    s = r.state
    t = float(s.y[-1])
    t_upper = float(-r.dobj)
    blocks = [X_b + t * np.eye(X_b.shape[0]) for X_b in s.X[:nb]]
    free = s.y[:-1].copy()

    settled = r.converged or r.stop_reason in ("strictly_feasible", "certified_infeasible")
    if not settled and max(r.relp, r.reld, r.gap) <= opts.reduced_accuracy_tol:
        settled = True
    # iterate broke down next to the boundary with the equalities already met
    marginal = (
        r.stop_reason in ("numerical", "stalled", "max_iter")
        and r.relp <= opts.reduced_accuracy_tol
        and t >= -opts.marginal_tol
        and t_upper >= -opts.marginal_tol
    )
    if r.stop_reason == "strictly_feasible" or (settled and t_upper >= -opts.feasibility_tol):
        status = SdpStatus.FEASIBLE
    elif settled and t_upper < -opts.infeasibility_margin:
        status = SdpStatus.INFEASIBLE
    elif marginal:
        status = SdpStatus.FEASIBLE
    else:
        status = SdpStatus.MAX_ITER

    if status == SdpStatus.FEASIBLE:
        blocks = [project_psd(X_b) for X_b in blocks]
        rp = d.b - d.op(blocks) - d.B @ free
        if np.max(np.abs(rp), initial=0.0) > opts.equality_tol * (1.0 + np.max(np.abs(d.b), initial=0.0)):
            print(
                f"[sdp] Projected iterate misses equalities by {np.max(np.abs(rp)):.2e}; reporting MaxIter",
                file=sys.stderr,
            )
            status = SdpStatus.MAX_ITER

    certificate = None
    if status == SdpStatus.INFEASIBLE:
        ray = -s.lam[: d.m]
        dual_blocks = d.adj(ray)
        certificate = InfeasibilityCertificate(ray=ray, dual_blocks=dual_blocks, violation=-float(d.b @ ray))

    rp = d.b - d.op(blocks) - d.B @ free
    return SdpSolution(
        status=status,
        blocks=blocks,
        free=free,
        primal_residual=float(np.max(np.abs(rp), initial=0.0)),
        dual_residual=float(r.reld),
        gap=float(r.gap),
        iterations=r.iterations,
        objective=t,
        slack=t,
        slack_upper=t_upper,
        certificate=certificate,
        reduced_accuracy=not r.converged,
        history=r.history,
    )


def _solve_optimization(d: _Dense, opts: SolverOptions) -> SdpSolution:
    def early_stop(r: _IpResult) -> Optional[str]:
        lam = r.state.lam
        bl = d.b @ lam
        if bl <= 0:
            return None
        ray = lam / bl
        # primal infeasibility ray: -A^*(ray) PSD and B^T ray = 0 with b^T ray = 1
        worst = max(float(np.linalg.eigvalsh(a)[-1]) for a in d.adj(ray))
        if worst <= opts.dual_residual_tol and np.linalg.norm(d.B.T @ ray) <= opts.dual_residual_tol:
            return "certified_infeasible"
        return None

    r = _interior_point(d, opts, early_stop=early_stop)
    s = r.state
    certificate = None
    if r.stop_reason == "certified_infeasible":
        status = SdpStatus.INFEASIBLE
        ray = -s.lam / (d.b @ s.lam)
        dual_blocks = d.adj(ray)
        scale = sum(np.trace(a) for a in dual_blocks)
        if scale > 0:
            ray = ray / scale
            dual_blocks = [a / scale for a in dual_blocks]
        certificate = InfeasibilityCertificate(ray=ray, dual_blocks=dual_blocks, violation=-float(d.b @ ray))
    elif r.converged or (
        r.relp <= opts.reduced_accuracy_tol and r.reld <= opts.reduced_accuracy_tol and r.gap <= opts.reduced_accuracy_tol
    ):
        status = SdpStatus.FEASIBLE
    else:
        status = SdpStatus.MAX_ITER
    return SdpSolution(
        status=status,
        blocks=[X_b.copy() for X_b in s.X],
        free=s.y.copy(),
        primal_residual=float(r.rp_inf),
        dual_residual=float(r.reld),
        gap=float(r.gap),
        iterations=r.iterations,
        objective=float(r.pobj),
        certificate=certificate,
        reduced_accuracy=not r.converged,
        history=r.history,
    )
