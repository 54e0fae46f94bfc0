"""
Sparse bounded-variable primal simplex, plus Lagrangian relaxation helpers.

The problem min c'x s.t. A_ub x <= b_ub, A_eq x = b_eq, lb <= x <= ub is shifted to 0 <= x' <= ub - lb.
Inequality rows that no point of the box can violate are dropped first (their multiplier is zero).
The remaining inequality rows get slack columns; rows whose slack cannot start the basis, and all
equality rows, get one artificial column each, and a two-phase method is run on the resulting
equality system. Artificials are fixed at zero for phase II, so rows made redundant by phase I
keep an artificial in the basis at value zero.

The basis is held as a dense LU factorization plus a file of eta columns, one per pivot since
the last refactorization.

Sign conventions of the returned multipliers:
    duals_ub >= 0 with reduced costs  c + A_ub' duals_ub - A_eq' duals_eq
    duals_eq is the marginal change of the optimum per unit increase of b_eq
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve

from .defs import LpStatus
from .errors import ConfigurationError, InfeasibleError, InputError, NumericalError
from .model import LinearProgram
from .steps import Harmonic, StepSchedule

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-9
DEGENERATE_STEP = 1e-12
DUAL_TOL = 1e-9
REDUNDANT_TOL = 1e-9
REFACTOR_EVERY = 100


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-7
    comp: float = 1e-6
    gap: float = 1e-6

    def __post_init__(self) -> None:
        if not (self.feas > 0 and self.comp > 0 and self.gap > 0):
            raise ConfigurationError(f"tolerances must be positive: {self}")


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None
    objective: float
    duals_ub: np.ndarray
    duals_eq: np.ndarray
    reduced_costs: np.ndarray
    dual_objective: float = float("nan")
    iterations: int = 0

    def __str__(self) -> str:
        return f"LpSolution: {self.status.name}, objective {self.objective:.10g}, {self.iterations} iterations"


@dataclass
class _Phase:
    status: LpStatus
    x: np.ndarray
    y: np.ndarray
    iterations: int
    degenerate: int


class _Factor:
    """B^-1 as LU factors of the basis at the last refactorization followed by eta transformations."""

    def __init__(self, A: sp.csc_matrix, basis: np.ndarray) -> None:
        self.lu = lu_factor(A[:, basis].toarray())
        self.etas: list[tuple[int, np.ndarray]] = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        x = lu_solve(self.lu, v)
        for p, w in self.etas:
            xp = x[p] / w[p]
            x -= xp * w
            x[p] = xp
        return x

    def btran(self, v: np.ndarray) -> np.ndarray:
        z = np.array(v, dtype=float)
        for p, w in reversed(self.etas):
            z[p] -= (w @ z - z[p]) / w[p]
        return lu_solve(self.lu, z, trans=1)

    def replace(self, p: int, w: np.ndarray) -> None:
        """Column p of the basis is replaced by the column whose ftran is w."""
        self.etas.append((p, w))


def _iterate(A: sp.csc_matrix, b: np.ndarray, c: np.ndarray, u: np.ndarray, basis: np.ndarray,
             at_upper: np.ndarray, max_iter: int, label: str) -> _Phase:
    """Primal simplex from a feasible basis; basis and at_upper are updated in place."""
    rows, cols = A.shape
    is_basic = np.zeros(cols, dtype=bool)
    is_basic[basis] = True
    bland = False
    bland_after = 3 * (rows + cols)
    degenerate_run = 0
    degenerate_total = 0

    def basic_values(factor: _Factor) -> np.ndarray:
        return factor.ftran(b - A @ np.where(at_upper & ~is_basic, u, 0.0))

    factor = _Factor(A, basis)
    x_B = basic_values(factor)
    for it in range(max_iter):
        if len(factor.etas) >= REFACTOR_EVERY:
            factor = _Factor(A, basis)
            x_B = basic_values(factor)
        y = factor.btran(c[basis])
        d = c - A.T @ y
        d[is_basic] = 0.0

        movable = ~is_basic & (u > 0)
        improving = movable & ((~at_upper & (d < -DUAL_TOL)) | (at_upper & (d > DUAL_TOL)))
        candidates = np.flatnonzero(improving)
        if len(candidates) == 0:
            x = np.where(at_upper & ~is_basic, u, 0.0)
            x[basis] = basic_values(factor)
            logger.debug(f"{label}: optimal after {it} iterations ({degenerate_total} degenerate)")
            return _Phase(LpStatus.OPTIMAL, x, y, it, degenerate_total)

        if bland:
            q = candidates[0]
        else:
            q = candidates[np.argmax(np.abs(d[candidates]))]
        direction = -1.0 if at_upper[q] else 1.0
        w = factor.ftran(A[:, [q]].toarray().ravel())
        rate = -direction * w

        step = u[q]
        leave = -1
        leave_to_upper = False
        ratios = np.full(rows, np.inf)
        dec = rate < -PIVOT_TOL
        ratios[dec] = np.maximum(x_B[dec], 0.0) / -rate[dec]
        u_B = u[basis]
        inc = (rate > PIVOT_TOL) & np.isfinite(u_B)
        ratios[inc] = np.maximum(u_B[inc] - x_B[inc], 0.0) / rate[inc]
        best = ratios.min()
        if best < step:
            ties = np.flatnonzero(ratios <= best + DEGENERATE_STEP)
            leave = int(ties[np.argmin(basis[ties])])
            step = best
            leave_to_upper = bool(inc[leave])
        if not np.isfinite(step):
            logger.debug(f"{label}: unbounded ray along column {q}")
            return _Phase(LpStatus.UNBOUNDED, np.zeros(cols), y, it, degenerate_total)

        if step <= DEGENERATE_STEP:
            degenerate_run += 1
            degenerate_total += 1
            if degenerate_run > bland_after and not bland:
                logger.debug(f"{label}: {degenerate_run} degenerate pivots in a row, switching to Bland's rule")
                bland = True
        else:
            degenerate_run = 0

        x_B += step * rate
        if leave < 0:
            at_upper[q] = not at_upper[q]
        else:
            out = basis[leave]
            x_B[leave] = u[q] - step if at_upper[q] else step
            basis[leave] = q
            is_basic[q] = True
            is_basic[out] = False
            at_upper[out] = leave_to_upper
            at_upper[q] = False
            factor.replace(leave, w)

    raise NumericalError(f"{label}: iteration limit reached", iterations=max_iter, degenerate=degenerate_total)


def _dual_objective(lp: LinearProgram, lam: np.ndarray, mu: np.ndarray, d: np.ndarray) -> float:
    value = float(lp.b_eq @ mu - lp.b_ub @ lam)
    pos = d > DUAL_TOL
    value += float(lp.lb[pos] @ d[pos])
    neg = d < -DUAL_TOL
    if np.isinf(lp.ub[neg]).any():
        return -np.inf
    return value + float(lp.ub[neg] @ d[neg])


def _box_solve(lp: LinearProgram) -> LpSolution:
    """No binding rows: every variable sits at the bound its cost prefers."""
    lam, mu = np.zeros(lp.n_ub), np.zeros(lp.n_eq)
    if ((lp.c < 0) & np.isinf(lp.ub)).any():
        return LpSolution(LpStatus.UNBOUNDED, None, -np.inf, lam, mu, lp.c.copy())
    x = np.where(lp.c < 0, lp.ub, lp.lb)
    obj = float(lp.c @ x)
    return LpSolution(LpStatus.OPTIMAL, x, obj, lam, mu, lp.c.copy(), obj, 0)


def binding_rows(lp: LinearProgram, tol: float = REDUNDANT_TOL) -> np.ndarray:
    """Indices of the inequality rows that some point of the box lb <= x <= ub violates.

    A row whose largest activity over the box stays within its right-hand side can never bind.
    """
    A = lp.A_ub
    pos, neg = A.multiply(A > 0), A.multiply(A < 0)
    most = pos @ lp.ub + neg @ lp.lb
    return np.flatnonzero(~(most <= lp.b_ub + tol * (1.0 + np.abs(lp.b_ub))))


def solve_lp(lp: LinearProgram, tol: Tolerances = Tolerances(), max_iter: int | None = None) -> LpSolution:
    if not np.isfinite(lp.lb).all():
        raise InputError("free or unbounded-below variables are not supported; give every column a finite lb")
    nv, n_ub, n_eq = lp.n_vars, lp.n_ub, lp.n_eq
    keep_ub = binding_rows(lp)
    n_s = len(keep_ub)
    rows = n_s + n_eq
    if rows == 0:
        return _box_solve(lp)
    if n_s < n_ub:
        logger.debug(f"Presolve dropped {n_ub - n_s} of {n_ub} inequality rows that cannot bind")

    # 0 <= x' <= ub - lb, a slack for every kept inequality row
    A_ub = lp.A_ub[keep_ub]
    A = sp.vstack([A_ub, lp.A_eq], format="csc")
    b = np.concatenate([lp.b_ub[keep_ub] - A_ub @ lp.lb, lp.b_eq - lp.A_eq @ lp.lb])
    needs_art = np.concatenate([b[:n_s] < 0, np.ones(n_eq, dtype=bool)])
    art_rows = np.flatnonzero(needs_art)
    n_art = len(art_rows)
    slack = sp.csc_matrix((np.ones(n_s), (np.arange(n_s), np.arange(n_s))), shape=(rows, n_s))
    art = sp.csc_matrix((np.where(b[art_rows] < 0, -1.0, 1.0), (art_rows, np.arange(n_art))), shape=(rows, n_art))
    A1 = sp.hstack([A, slack, art], format="csc")
    ncols = nv + n_s
    u = np.concatenate([lp.ub - lp.lb, np.full(n_s, np.inf)])
    c = np.concatenate([lp.c, np.zeros(n_s)])

    limit = max_iter if max_iter is not None else 50 * (rows + ncols) + 500
    basis = np.empty(rows, dtype=np.int64)
    basis[~needs_art] = nv + np.flatnonzero(~needs_art)
    basis[art_rows] = ncols + np.arange(n_art)
    at_upper = np.zeros(ncols + n_art, dtype=bool)

    iterations, degenerate = 0, 0
    if n_art:
        phase1 = _iterate(A1, b, np.concatenate([np.zeros(ncols), np.ones(n_art)]),
                          np.concatenate([u, np.full(n_art, np.inf)]), basis, at_upper, limit, "phase I")
        iterations, degenerate = phase1.iterations, phase1.degenerate
        infeasibility = float(phase1.x[ncols:].sum())
        if infeasibility > tol.feas * (1.0 + np.abs(b).max()):
            logger.debug(f"LP infeasible: phase I residual {infeasibility:.3g}")
            return LpSolution(LpStatus.INFEASIBLE, None, np.inf, np.zeros(n_ub), np.zeros(n_eq), np.zeros(nv),
                              iterations=iterations)

    phase2 = _iterate(A1, b, np.concatenate([c, np.zeros(n_art)]), np.concatenate([u, np.zeros(n_art)]),
                      basis, at_upper, limit, "phase II")
    iterations += phase2.iterations
    degenerate += phase2.degenerate
    if phase2.status is LpStatus.UNBOUNDED:
        return LpSolution(LpStatus.UNBOUNDED, None, -np.inf, np.zeros(n_ub), np.zeros(n_eq), np.zeros(nv),
                          iterations=iterations)

    x = np.clip(phase2.x[:nv] + lp.lb, lp.lb, lp.ub)
    lam = np.zeros(n_ub)
    lam[keep_ub] = np.maximum(-phase2.y[:n_s], 0.0)
    mu = phase2.y[n_s:]
    d = lp.c + lp.A_ub.T @ lam - lp.A_eq.T @ mu
    obj = float(lp.c @ x)
    sol = LpSolution(LpStatus.OPTIMAL, x, obj, lam, mu, d, _dual_objective(lp, lam, mu, d), iterations)
    logger.debug(f"{sol} ({degenerate} degenerate pivots)")
    return sol


def drop_empty_rows(lp: LinearProgram, tol: float = 1e-12) -> tuple[LinearProgram, np.ndarray, np.ndarray]:
    """Remove all-zero rows that are trivially satisfied; returns the reduced LP and the kept row indices."""
    keep_ub = np.flatnonzero(((abs(lp.A_ub) > tol).getnnz(axis=1) > 0) | (lp.b_ub < -tol))
    keep_eq = np.flatnonzero(((abs(lp.A_eq) > tol).getnnz(axis=1) > 0) | (np.abs(lp.b_eq) > tol))
    if len(keep_ub) == lp.n_ub and len(keep_eq) == lp.n_eq:
        return lp, keep_ub, keep_eq
    reduced = LinearProgram(lp.c, lp.A_ub[keep_ub], lp.b_ub[keep_ub], lp.A_eq[keep_eq], lp.b_eq[keep_eq],
                            lp.lb, lp.ub, lp.integrality, lp.tags_ub[keep_ub], lp.tags_eq[keep_eq],
                            [lp.keys_ub[r] for r in keep_ub], [lp.keys_eq[r] for r in keep_eq])
    return reduced, keep_ub, keep_eq


@dataclass
class LagrangianValue:
    status: LpStatus
    value: float
    x: np.ndarray | None
    subgradient: np.ndarray | None  # A_d x(lambda) - b_d


def lagrangian_value(lp: LinearProgram, rows, lam, tol: Tolerances = Tolerances()) -> LagrangianValue:
    """v(lambda) = min c'x + lambda'(A_d x - b_d) over the constraints of lp other than the
    dualized inequality rows."""
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    assert len(lam) == len(rows), "one multiplier per dualized row"
    assert (lam >= 0).all(), "multipliers of inequality rows must be nonnegative"
    A_d, b_d = lp.A_ub[rows], lp.b_ub[rows]
    keep = np.setdiff1d(np.arange(lp.n_ub), rows)
    inner = LinearProgram(lp.c + A_d.T @ lam, lp.A_ub[keep], lp.b_ub[keep], lp.A_eq, lp.b_eq, lp.lb, lp.ub,
                          lp.integrality, lp.tags_ub[keep], lp.tags_eq, [lp.keys_ub[r] for r in keep],
                          lp.keys_eq)
    sol = solve_lp(inner, tol)
    if sol.status is not LpStatus.OPTIMAL:
        return LagrangianValue(sol.status, sol.objective, None, None)
    assert sol.x is not None
    return LagrangianValue(sol.status, sol.objective - float(lam @ b_d), sol.x, A_d @ sol.x - b_d)


@dataclass
class DualAscentResult:
    bound: float
    lam: np.ndarray
    bounds: list[float] = field(default_factory=list)       # best bound after each iteration
    lambdas: list[np.ndarray] = field(default_factory=list)


def dual_ascent(lp: LinearProgram, rows, schedule: StepSchedule = Harmonic(), T: int = 500,
                lam0=None, tol: Tolerances = Tolerances()) -> DualAscentResult:
    """Projected subgradient ascent on the Lagrangian dual of the dualized inequality rows."""
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    lam = np.zeros(len(rows)) if lam0 is None else np.maximum(np.asarray(lam0, dtype=float), 0.0)
    result = DualAscentResult(-np.inf, lam.copy())
    for t in range(T):
        lv = lagrangian_value(lp, rows, lam, tol)
        if lv.status is LpStatus.INFEASIBLE:
            raise InfeasibleError("constraints kept in the inner problem are infeasible")
        if lv.status is LpStatus.OPTIMAL and lv.value > result.bound:
            result.bound = lv.value
            result.lam = lam.copy()
        result.bounds.append(result.bound)
        result.lambdas.append(lam.copy())
        if lv.subgradient is None:
            # unbounded inner problem: v(lambda) = -inf, no subgradient; push every multiplier up
            g = np.ones(len(rows))
        else:
            g = lv.subgradient
            if (g <= tol.feas).all() and abs(float(lam @ g)) <= tol.comp:
                logger.debug(f"dual ascent: optimality conditions hold at iteration {t}")
                break
        lam = np.maximum(lam + schedule(t) * g, 0.0)
    logger.info(f"Dual ascent: best bound {result.bound:.10g} after {len(result.bounds)} iterations")
    return result
