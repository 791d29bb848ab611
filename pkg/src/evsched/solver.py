"""Concave quadratic maximization over boxes, linear rows, disk and norm constraints.

Programs here maximize

    f'x - sum_i d_i x_i^2 + const
        - sum_e w_e * max_m(a_em'x + b_em)          (epigraph terms)
        - sum_n w_n * || (a_nm'x + b_nm)_m ||_2     (norm terms)

subject to box bounds, linear inequality and equality rows, and magnitude
("disk") constraints  |(re'x + o_re) + j(im'x + o_im)| <= limit.

Disks and norms are handled by polyhedral outer approximation: each disk is
seeded with a regular polygon of tangent half-planes and tightened with
supporting-hyperplane cuts at violating points; every violated constraint
receives a cut each outer iteration, so the relaxation only shrinks. The
polygon contains the disk, hence intermediate iterates can overshoot a limit
by a few percent at most and the final iterate by at most ``tol``.

The inner quadratic program is solved by a Mehrotra predictor-corrector
primal-dual interior-point method on the regularized KKT system, factorized
sparsely. Epigraph and norm values become auxiliary variables minimized from
above, so reported objectives are recomputed exactly from the returned point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "LinExpr",
    "DiskConstraint",
    "EpigraphTerm",
    "NormTerm",
    "ConvexProgram",
    "Solution",
    "ProgramError",
    "add_soc_cut",
    "solve",
    "OPTIMAL",
    "INFEASIBLE",
    "MAX_ITER",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

SEED_TANGENTS = 16
_INNER_MAX_ITER = 100


class ProgramError(ValueError):
    """Raised when a program violates its structural invariants."""


@dataclass(frozen=True, eq=False)
class LinExpr:
    """Sparse affine expression coef @ x[idx] + const."""

    idx: np.ndarray
    coef: np.ndarray
    const: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "idx", np.asarray(self.idx, dtype=int))
        object.__setattr__(self, "coef", np.asarray(self.coef, dtype=float))
        if self.idx.shape != self.coef.shape:
            raise ProgramError("LinExpr index/coefficient length mismatch")

    def value(self, x: np.ndarray) -> float:
        return float(self.coef @ x[self.idx] + self.const)

    def value_many(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate on an (N, n) array of points."""
        if len(self.idx) == 0:
            return np.full(len(pts), self.const)
        return pts[:, self.idx] @ self.coef + self.const


def _combine(scale_a: float, a: LinExpr, scale_b: float, b: LinExpr) -> tuple[np.ndarray, np.ndarray]:
    idx = np.concatenate([a.idx, b.idx])
    coef = np.concatenate([scale_a * a.coef, scale_b * b.coef])
    uniq, inv = np.unique(idx, return_inverse=True)
    summed = np.zeros(len(uniq))
    np.add.at(summed, inv, coef)
    return uniq, summed


@dataclass(eq=False)
class DiskConstraint:
    """|(real(x), imag(x))| <= limit on the 2-D image of an affine map."""

    real: LinExpr
    imag: LinExpr
    limit: float

    def phasor(self, x: np.ndarray) -> tuple[float, float]:
        return self.real.value(x), self.imag.value(x)

    def violation(self, x: np.ndarray) -> float:
        re, im = self.phasor(x)
        return math.hypot(re, im) - self.limit


@dataclass(eq=False)
class EpigraphTerm:
    """Penalty weight * max_m(expr_m), subtracted from the objective."""

    weight: float
    exprs: list[LinExpr]

    def value(self, x: np.ndarray) -> float:
        return max(e.value(x) for e in self.exprs)


@dataclass(eq=False)
class NormTerm:
    """Penalty weight * ||(expr_m)_m||_2, subtracted from the objective."""

    weight: float
    exprs: list[LinExpr]

    def values(self, x: np.ndarray) -> np.ndarray:
        return np.array([e.value(x) for e in self.exprs])

    def value(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.values(x)))


@dataclass(eq=False)
class ConvexProgram:
    n: int
    linear_cost: np.ndarray
    quad_cost: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    linear_ineqs: list[tuple[LinExpr, float]] = field(default_factory=list)
    linear_eqs: list[tuple[LinExpr, float]] = field(default_factory=list)
    disks: list[DiskConstraint] = field(default_factory=list)
    epigraph_terms: list[EpigraphTerm] = field(default_factory=list)
    norm_terms: list[NormTerm] = field(default_factory=list)
    objective_const: float = 0.0

    @classmethod
    def empty(cls, n: int) -> "ConvexProgram":
        return cls(
            n=n,
            linear_cost=np.zeros(n),
            quad_cost=np.zeros(n),
            lower=np.zeros(n),
            upper=np.full(n, np.inf),
        )

    def add_ineq(self, idx: Sequence[int], coef: Sequence[float], rhs: float) -> None:
        self.linear_ineqs.append((LinExpr(np.asarray(idx), np.asarray(coef)), float(rhs)))

    def add_eq(self, idx: Sequence[int], coef: Sequence[float], rhs: float) -> None:
        self.linear_eqs.append((LinExpr(np.asarray(idx), np.asarray(coef)), float(rhs)))

    def add_disk(self, real: LinExpr, imag: LinExpr, limit: float) -> None:
        self.disks.append(DiskConstraint(real, imag, float(limit)))

    def validate(self) -> None:
        for name in ("linear_cost", "quad_cost", "lower", "upper"):
            arr = getattr(self, name)
            if np.asarray(arr).shape != (self.n,):
                raise ProgramError(f"{name} must have shape ({self.n},)")
        if np.any(self.quad_cost < 0):
            raise ProgramError("quadratic coefficients must be nonnegative (concave objective)")
        if np.any(self.lower > self.upper):
            raise ProgramError("lower bound exceeds upper bound")
        for d in self.disks:
            if d.limit < 0:
                raise ProgramError("disk limit must be nonnegative")
        for t in list(self.epigraph_terms) + list(self.norm_terms):
            if t.weight < 0:
                raise ProgramError("penalty weights must be nonnegative")
            if not t.exprs:
                raise ProgramError("penalty term needs at least one expression")

    def objective_value(self, x: np.ndarray) -> float:
        """Exact objective at x (auxiliary-variable free)."""
        v = float(self.linear_cost @ x - self.quad_cost @ (x * x)) + self.objective_const
        for term in self.epigraph_terms:
            v -= term.weight * term.value(x)
        for term in self.norm_terms:
            v -= term.weight * term.value(x)
        return v

    def max_violation(self, x: np.ndarray) -> float:
        """Worst disk-constraint violation at x, in limit units (0 if none)."""
        worst = 0.0
        for d in self.disks:
            worst = max(worst, d.violation(x))
        return worst


@dataclass(eq=False)
class Solution:
    x: np.ndarray
    status: str
    objective: float
    max_violation: float
    outer_iterations: int
    cuts_added: int
    violation_history: list[float]


def add_soc_cut(program: ConvexProgram, disk_index: int, x: np.ndarray) -> tuple[LinExpr, float]:
    """Supporting half-plane of a violated disk at the point's phasor image.

    For a phasor u outside the disk of radius ``limit``, the tangent at the
    boundary point nearest u is  (u/|u|) . v <= limit, which cuts u off while
    keeping the whole disk. Appends the row to the program and returns it.
    Raises ValueError if the point does not actually violate the disk.
    """
    disk = program.disks[disk_index]
    re, im = disk.phasor(x)
    mag = math.hypot(re, im)
    if mag <= disk.limit:
        raise ValueError(f"point does not violate disk {disk_index} ({mag:.6g} <= {disk.limit:.6g})")
    ure, uim = re / mag, im / mag
    idx, coef = _combine(ure, disk.real, uim, disk.imag)
    rhs = disk.limit - ure * disk.real.const - uim * disk.imag.const
    expr = LinExpr(idx, coef)
    program.linear_ineqs.append((expr, rhs))
    return expr, rhs


def _disk_seed_rows(disk: DiskConstraint, k: int = SEED_TANGENTS) -> list[tuple[np.ndarray, np.ndarray, float]]:
    rows = []
    for j in range(k):
        th = 2.0 * math.pi * (j + 0.5) / k
        c, s = math.cos(th), math.sin(th)
        idx, coef = _combine(c, disk.real, s, disk.imag)
        rhs = disk.limit - c * disk.real.const - s * disk.imag.const
        rows.append((idx, coef, rhs))
    return rows


class _RowStack:
    """Accumulates sparse inequality rows, then builds csr G and h."""

    def __init__(self, n: int):
        self.n = n
        self.idx: list[np.ndarray] = []
        self.coef: list[np.ndarray] = []
        self.rhs: list[float] = []

    def add(self, idx, coef, rhs: float) -> None:
        self.idx.append(np.asarray(idx, dtype=int))
        self.coef.append(np.asarray(coef, dtype=float))
        self.rhs.append(float(rhs))

    def build(self) -> tuple[sp.csr_matrix, np.ndarray]:
        m = len(self.rhs)
        if m == 0:
            return sp.csr_matrix((0, self.n)), np.zeros(0)
        indptr = np.zeros(m + 1, dtype=int)
        indptr[1:] = np.cumsum([len(i) for i in self.idx])
        indices = np.concatenate(self.idx) if indptr[-1] else np.zeros(0, dtype=int)
        data = np.concatenate(self.coef) if indptr[-1] else np.zeros(0)
        G = sp.csr_matrix((data, indices, indptr), shape=(m, self.n))
        return G, np.asarray(self.rhs)


def _row_maxabs(M: sp.csr_matrix) -> np.ndarray:
    """Per-row max |entry|, 1.0 for empty rows."""
    out = np.ones(M.shape[0])
    nz = np.diff(M.indptr) > 0
    if M.nnz:
        out[nz] = np.maximum.reduceat(np.abs(M.data), M.indptr[:-1][nz])
    return np.maximum(out, 1e-12)


def _step_length(s: np.ndarray, ds: np.ndarray, z: np.ndarray, dz: np.ndarray, tau: float) -> float:
    alpha = 1.0
    for v, dv in ((s, ds), (z, dz)):
        neg = dv < 0
        if np.any(neg):
            alpha = min(alpha, tau * float(np.min(-v[neg] / dv[neg])))
    return alpha


def _ipm_qp(P_diag, q, G, h, A, b, x0, feas_tol=1e-8, max_iter=_INNER_MAX_ITER):
    """Minimize 1/2 x'diag(P)x + q'x  s.t.  Gx <= h, Ax = b.

    Returns (x, status, iterations). G must have at least one row.
    """
    n = len(q)
    m = G.shape[0]
    p = A.shape[0] if A is not None else 0

    # Scale inequality and equality rows to unit inf-norm; keeps the central
    # path well conditioned when limits span orders of magnitude.
    G = G.tocsr()
    g_scale = _row_maxabs(G)
    Gs = sp.diags(1.0 / g_scale) @ G
    hs = h / g_scale
    if p:
        A = A.tocsr()
        a_scale = _row_maxabs(A)
        As = sp.diags(1.0 / a_scale) @ A
        bs = b / a_scale
    else:
        As, bs = None, np.zeros(0)

    x = np.asarray(x0, dtype=float).copy()
    s = np.maximum(hs - Gs @ x, 1.0)
    z = np.ones(m)
    y = np.zeros(p)
    delta = 1e-9
    GsT = Gs.T.tocsr()
    AsT = As.T.tocsr() if p else None
    q_scale = 1.0 + float(np.max(np.abs(q))) if n else 1.0
    h_scale = 1.0 + float(np.max(np.abs(hs))) if m else 1.0

    best = (np.inf, x.copy())
    for it in range(1, max_iter + 1):
        rd = P_diag * x + q + GsT @ z + (AsT @ y if p else 0.0)
        rp = Gs @ x + s - hs
        re = (As @ x - bs) if p else np.zeros(0)
        mu = float(s @ z) / m

        pres = float(np.max(np.abs(rp))) if m else 0.0
        eres = float(np.max(np.abs(re))) if p else 0.0
        dres = float(np.max(np.abs(rd))) if n else 0.0
        merit = pres + eres + dres + mu
        if merit < best[0]:
            best = (merit, x.copy())
        if pres <= feas_tol * h_scale and eres <= feas_tol * h_scale and dres <= feas_tol * q_scale and mu <= feas_tol * q_scale:
            return x, OPTIMAL, it

        # Diverging multipliers mean the iteration is chasing an infeasibility
        # direction; stop and let the caller's phase-1 check classify it.
        dual_mass = float(np.sum(np.abs(z))) + float(np.sum(np.abs(y)))
        if mu > 1e12 or dual_mass > 1e14:
            return best[1], MAX_ITER, it

        dmat = s / z + delta
        blocks = [
            [sp.diags(P_diag + delta), AsT, GsT],
            [As, -delta * sp.identity(p) if p else None, None],
            [Gs, None, sp.diags(-dmat)],
        ]
        if not p:
            blocks = [[blocks[0][0], blocks[0][2]], [blocks[2][0], blocks[2][2]]]
        K = sp.bmat(blocks, format="csc")
        try:
            lu = spla.splu(K)
        except RuntimeError:
            delta *= 100.0
            if delta > 1e-2:
                return best[1], MAX_ITER, it
            continue

        def solve_kkt(r3):
            rhs = np.concatenate([-rd, -re, r3]) if p else np.concatenate([-rd, r3])
            sol = lu.solve(rhs)
            return sol[:n], sol[n:n + p], sol[n + p:]

        dx, dy, dz = solve_kkt(-rp + s)
        ds = -rp - Gs @ dx
        alpha_aff = _step_length(s, ds, z, dz, 1.0)
        mu_aff = float((s + alpha_aff * ds) @ (z + alpha_aff * dz)) / m
        sigma = min(max((mu_aff / mu) ** 3 if mu > 0 else 0.0, 1e-8), 0.9999)

        r3 = -rp + s + (ds * dz - sigma * mu) / z
        dx, dy, dz = solve_kkt(r3)
        ds = -rp - Gs @ dx
        alpha = _step_length(s, ds, z, dz, 0.99)
        if alpha < 1e-12:
            return best[1], MAX_ITER, it
        x += alpha * dx
        s += alpha * ds
        z += alpha * dz
        if p:
            y += alpha * dy

    return best[1], MAX_ITER, max_iter


def _certify_infeasible(G, h, A, b, x0) -> bool:
    """Phase-1 check: minimize the worst violation t of Gx - t <= h, Ax = b.

    Always feasible and bounded (t floored at -1), so the interior-point
    method converges; a strictly positive optimal t proves the original row
    system empty.
    """
    n = G.shape[1]
    ones = np.ones((G.shape[0], 1))
    G1 = sp.hstack([G, -sp.csr_matrix(ones)], format="csr")
    floor_row = sp.csr_matrix(([-1.0], ([0], [n])), shape=(1, n + 1))
    G1 = sp.vstack([G1, floor_row], format="csr")
    h1 = np.concatenate([h, [1.0]])
    A1 = sp.hstack([A, sp.csr_matrix((A.shape[0], 1))], format="csr") if A is not None else None
    P1 = np.full(n + 1, 1e-9)
    q1 = np.zeros(n + 1)
    q1[n] = 1.0
    t0 = float(np.max(G @ x0 - h, initial=0.0)) + 1.0
    x1, status, _ = _ipm_qp(P1, q1, G1, h1, A1, b, np.concatenate([x0, [t0]]))
    if status != OPTIMAL:
        return False
    threshold = 1e-7 * (1.0 + float(np.max(np.abs(h), initial=0.0)))
    return x1[n] > threshold


def _assemble(program: ConvexProgram, extra_cuts: list[tuple[np.ndarray, np.ndarray, float]]):
    n = program.n
    n_epi = len(program.epigraph_terms)
    n_norm = len(program.norm_terms)
    ntot = n + n_epi + n_norm

    P = np.concatenate([2.0 * program.quad_cost, np.zeros(n_epi + n_norm)])
    q = np.concatenate(
        [-program.linear_cost,
         [t.weight for t in program.epigraph_terms],
         [t.weight for t in program.norm_terms]]
    )

    rows = _RowStack(ntot)
    for i in range(n):
        if np.isfinite(program.upper[i]):
            rows.add([i], [1.0], program.upper[i])
        if np.isfinite(program.lower[i]):
            rows.add([i], [-1.0], -program.lower[i])
    for expr, rhs in program.linear_ineqs:
        rows.add(expr.idx, expr.coef, rhs - expr.const)
    for j, term in enumerate(program.epigraph_terms):
        zi = n + j
        for e in term.exprs:
            rows.add(np.append(e.idx, zi), np.append(e.coef, -1.0), -e.const)
    for j, term in enumerate(program.norm_terms):
        zi = n + n_epi + j
        for e in term.exprs:
            rows.add(np.append(e.idx, zi), np.append(e.coef, -1.0), -e.const)
            rows.add(np.append(e.idx, zi), np.append(-e.coef, -1.0), e.const)
    for disk in program.disks:
        for idx, coef, rhs in _disk_seed_rows(disk):
            rows.add(idx, coef, rhs)
    for idx, coef, rhs in extra_cuts:
        rows.add(idx, coef, rhs)
    G, h = rows.build()

    eq = _RowStack(ntot)
    for expr, rhs in program.linear_eqs:
        eq.add(expr.idx, expr.coef, rhs - expr.const)
    A, b = eq.build()
    return P, q, G, h, (A if A.shape[0] else None), b, ntot


def _initial_point(program: ConvexProgram, ntot: int) -> np.ndarray:
    x0 = np.zeros(ntot)
    lo = np.where(np.isfinite(program.lower), program.lower, 0.0)
    hi = np.where(np.isfinite(program.upper), program.upper, lo + 2.0)
    x0[: program.n] = 0.5 * (lo + hi)
    k = program.n
    for term in program.epigraph_terms:
        x0[k] = max(e.value(x0) for e in term.exprs) + 1.0
        k += 1
    for term in program.norm_terms:
        x0[k] = max(abs(e.value(x0)) for e in term.exprs) + 1.0
        k += 1
    return x0


def solve(program: ConvexProgram, tol: float = 1e-4, max_iter: int = 50) -> Solution:
    """Maximize the program's objective; see module docstring for the method.

    ``tol`` bounds the worst disk/norm violation of the returned point, in
    constraint units. ``max_iter`` caps outer (cutting-plane) iterations.
    Status is ``optimal``, ``infeasible``, or ``max_iter`` (iteration budget
    exhausted before the violation dropped below tol; the best point found is
    still returned).
    """
    program.validate()
    inner_tol = min(1e-8, tol * 1e-2)
    cuts: list[tuple[np.ndarray, np.ndarray, float]] = []
    history: list[float] = []
    x_prog = None
    status = MAX_ITER
    outer = 0

    for outer in range(1, max_iter + 1):
        P, q, G, h, A, b, ntot = _assemble(program, cuts)
        if G.shape[0] == 0:
            raise ProgramError("program has no inequality rows; add finite bounds")
        x0 = _initial_point(program, ntot)
        x_full, inner_status, _ = _ipm_qp(P, q, G, h, A, b, x0, feas_tol=inner_tol)
        x_prog = x_full[: program.n]

        if inner_status != OPTIMAL and _certify_infeasible(G, h, A, b, x0):
            return Solution(x_prog, INFEASIBLE, math.nan, math.nan, outer, len(cuts), history)

        worst = program.max_violation(x_prog)
        # Norm terms are relaxed the same way; treat z below the true norm as
        # a violation so cuts keep tightening the epigraph.
        n_epi = len(program.epigraph_terms)
        for j, term in enumerate(program.norm_terms):
            zval = x_full[program.n + n_epi + j]
            worst = max(worst, term.value(x_prog) - zval)
        history.append(worst)
        if worst <= tol:
            status = OPTIMAL if inner_status == OPTIMAL else MAX_ITER
            break

        added = 0
        for di, disk in enumerate(program.disks):
            if disk.violation(x_prog) > tol:
                re, im = disk.phasor(x_prog)
                mag = math.hypot(re, im)
                ure, uim = re / mag, im / mag
                idx, coef = _combine(ure, disk.real, uim, disk.imag)
                cuts.append((idx, coef, disk.limit - ure * disk.real.const - uim * disk.imag.const))
                added += 1
        for j, term in enumerate(program.norm_terms):
            zval = x_full[program.n + n_epi + j]
            vals = term.values(x_prog)
            nrm = float(np.linalg.norm(vals))
            if nrm - zval > tol and nrm > 0:
                u = vals / nrm
                zi = program.n + n_epi + j
                parts = [(float(u[mi]), e) for mi, e in enumerate(term.exprs) if u[mi] != 0.0]
                idx = np.concatenate([e.idx for _, e in parts] + [[zi]])
                coef = np.concatenate([w * e.coef for w, e in parts] + [[-1.0]])
                rhs = -sum(w * e.const for w, e in parts)
                uniq, inv = np.unique(idx, return_inverse=True)
                summed = np.zeros(len(uniq))
                np.add.at(summed, inv, coef)
                cuts.append((uniq, summed, rhs))
                added += 1
        if added == 0:
            # Violation above tol but nothing to cut: numerical stall.
            status = MAX_ITER
            break

    objective = program.objective_value(x_prog)
    max_viol = history[-1] if history else 0.0
    return Solution(x_prog, status, objective, max_viol, outer, len(cuts), history)
