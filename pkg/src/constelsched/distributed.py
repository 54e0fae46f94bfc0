"""
Primal decomposition of the relaxed scheduling problem over a time-varying communication graph.

Each agent i holds an allocation sigma_i of the 2m coupling right-hand sides (acquisition rows first,
then downlink rows). Per iteration every agent solves its penalized local LP

    min c_i'x + M rho   s.t.  local rows,  C_i x - rho 1 <= sigma_i,  0 <= x <= 1,  rho >= 0

and reports the multipliers lambda_i of the coupling rows to its neighbours; allocations then move by

    sigma_i += alpha_t * sum_{j in N_i(t)} (lambda_i - lambda_j)

which leaves sum_i sigma_i unchanged. The transfer over each edge is limited so that no agent gives
away more than it holds above allocation_floor: x = 0 satisfies every local row, so allocations that
stay nonnegative keep every local problem feasible without the penalty. When an agent's acquisition
and downlink allocations of a target are equal, the split of their multipliers is not determined by
the LP (the pairing row moves weight between them); the agent then reports their mean for both.

A final two-stage integer solve per agent (minimum penalty first, then minimum cost) turns the
allocations into a schedule.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .centralized import Schedule
from .defs import BnbStatus, LpStatus
from .errors import ConfigurationError, ConstelError, IterationError, SolverLimitError, ValidationError
from .instance import Instance, VariableLayout
from .lp import Tolerances, solve_lp
from .milp import BnbLimits, solve_milp
from .model import (LinearProgram, build_coupling, build_local, coupling_keys, coupling_violation, objective,
                    widen)
from .network import GraphTimeline, check_joint_connectivity
from .steps import Harmonic, StepSchedule
from .util import to_jsonable, worker_count

logger = logging.getLogger(__name__)

CENSUS_THRESHOLD = 1e-6
PAIR_TIE_TOL = 1e-12


@dataclass(frozen=True)
class DecompositionConfig:
    zeta: float | tuple[float, ...] | str = 0.0  # scalar, one value per coupling row, or "auto"
    M: float | None = None                        # None: 10 (1 + max|c|) 2m
    t0: float = 10.0
    tf: int = 2000
    tol_alloc: float = 1e-6
    schedule: StepSchedule | None = None          # None: Harmonic(1, t0)
    correction: bool = False
    allocation_floor: float | None = 1e-6         # None: unlimited transfers

    def __post_init__(self) -> None:
        if isinstance(self.zeta, str):
            if self.zeta != "auto":
                raise ConfigurationError(f"zeta must be a number, a vector or 'auto', got {self.zeta!r}")
        elif isinstance(self.zeta, (list, np.ndarray)):
            object.__setattr__(self, "zeta", tuple(float(z) for z in self.zeta))
        if not isinstance(self.zeta, str) and (np.asarray(self.zeta) < 0).any():
            raise ConfigurationError(f"zeta must be >= 0, got {self.zeta}")
        if self.M is not None and not self.M > 0:
            raise ConfigurationError(f"M must be positive, got {self.M}")
        if not self.t0 > 0:
            raise ConfigurationError(f"t0 must be positive, got {self.t0}")
        if self.tf < 1:
            raise ConfigurationError(f"tf must be >= 1, got {self.tf}")
        if self.tol_alloc < 0:
            raise ConfigurationError(f"tol_alloc must be >= 0, got {self.tol_alloc}")
        if self.allocation_floor is not None and not 0 <= self.allocation_floor < 1:
            raise ConfigurationError(f"allocation_floor must be in [0, 1), got {self.allocation_floor}")
        steps = self.steps
        if not (steps.divergent and steps.square_summable):
            raise ConfigurationError(f"step schedule {steps} must have a divergent sum and a summable square sum")

    @property
    def steps(self) -> StepSchedule:
        return self.schedule if self.schedule is not None else Harmonic(1.0, self.t0)

    def resolve_zeta(self, inst: Instance, layout: VariableLayout) -> np.ndarray:
        if isinstance(self.zeta, str):
            return auto_zeta(inst, layout)
        zeta = np.broadcast_to(np.asarray(self.zeta, dtype=float), (2 * inst.m,)).copy()
        return zeta

    def resolve_M(self, inst: Instance, layout: VariableLayout) -> float:
        if self.M is not None:
            return float(self.M)
        c = objective(inst, layout)
        return 10.0 * (1.0 + float(np.abs(c).max(initial=0.0))) * 2 * inst.m

    def recovery_slack(self, inst: Instance) -> float:
        """Added to every allocation in the integer solve, so an agent holding all but the floors of the
        other agents can still take a whole target."""
        return inst.n * self.allocation_floor if self.allocation_floor is not None else 0.0

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["schedule"] = {"kind": type(self.steps).__name__, **asdict(self.steps)}
        return to_jsonable(d)


def auto_zeta(inst: Instance, layout: VariableLayout) -> np.ndarray:
    """Tightening per coupling row: the largest coefficient any column puts in the row,
    scaled by (n-1)/(2n) so the tightened budget never drops below one half."""
    rows = build_coupling(inst, layout).rows
    peak = np.abs(rows).max(axis=1, initial=0.0)
    return peak * (inst.n - 1) / (2 * inst.n)


def init_allocations(inst: Instance, zeta: np.ndarray) -> np.ndarray:
    """Uniform split of 1 - zeta; the last agent takes the rounding residual so the rows sum exactly."""
    zeta = np.asarray(zeta, dtype=float)
    if (zeta >= 1).any():
        raise ConfigurationError(f"zeta >= 1 empties coupling rows {np.flatnonzero(zeta >= 1).tolist()}")
    total = 1.0 - zeta
    sigma = np.tile(total / inst.n, (inst.n, 1))
    acc = np.zeros_like(total)
    for row in sigma[:-1]:
        acc = acc + row
    sigma[-1] = total - acc
    return sigma


@dataclass
class AgentProblem:
    """Agent i's local rows and coupling block, built once per run."""
    agent: int
    local: LinearProgram
    coupling: np.ndarray  # (2m, d_i)

    @staticmethod
    def build(inst: Instance, layout: VariableLayout, i: int) -> AgentProblem:
        return AgentProblem(i, build_local(inst, layout, i), build_coupling(inst, layout).blocks[i].rows)

    @property
    def size(self) -> int:
        return self.local.n_vars

    def penalized(self, sigma: np.ndarray, M: float, rho_max: float = math.inf,
                  cost: bool = True) -> LinearProgram:
        """Columns (x, rho); with cost=False the objective is rho alone."""
        lp, C = self.local, self.coupling
        d, rows = lp.n_vars, len(sigma)
        ctags, ckeys = coupling_keys(rows // 2)
        c = np.concatenate([lp.c, [M]]) if cost else np.concatenate([np.zeros(d), [1.0]])
        A_ub = sp.vstack([widen(lp.A_ub, d + 1), sp.csr_matrix(np.hstack([C, -np.ones((rows, 1))]))], format="csr")
        A_eq = widen(lp.A_eq, d + 1)
        return LinearProgram(c, A_ub, np.concatenate([lp.b_ub, sigma]), A_eq, lp.b_eq,
                             np.zeros(d + 1), np.concatenate([lp.ub, [rho_max]]),
                             np.concatenate([lp.integrality, [False]]),
                             np.concatenate([lp.tags_ub, np.array(ctags, dtype=np.int8)]), lp.tags_eq,
                             lp.keys_ub + ckeys, lp.keys_eq)

    def restricted(self, sigma: np.ndarray) -> LinearProgram:
        """Local rows plus C_i x <= sigma, no penalty column."""
        lp = self.local
        ctags, ckeys = coupling_keys(len(sigma) // 2)
        return replace(lp, A_ub=sp.vstack([lp.A_ub, sp.csr_matrix(self.coupling)], format="csr"),
                       b_ub=np.concatenate([lp.b_ub, sigma]),
                       tags_ub=np.concatenate([lp.tags_ub, np.array(ctags, dtype=np.int8)]),
                       keys_ub=lp.keys_ub + ckeys)


@dataclass
class AgentState:
    sigma: np.ndarray
    lam: np.ndarray
    rho: float
    x_relaxed: np.ndarray
    cost: float = 0.0       # c_i'x
    penalized: float = 0.0  # c_i'x + M rho


def _solve_local(problem: AgentProblem, sigma: np.ndarray, M: float, tol: Tolerances, t: int) -> AgentState:
    lp = problem.penalized(sigma, M)
    try:
        sol = solve_lp(lp, tol)
    except ConstelError as e:
        raise IterationError(problem.agent, t, str(e)) from e
    if sol.status is not LpStatus.OPTIMAL:
        raise IterationError(problem.agent, t, f"penalized local problem {sol.status.name.lower()}")
    assert sol.x is not None
    d = problem.size
    x, rho = sol.x[:d], float(sol.x[d])
    lam = balance_pair_multipliers(sigma, sol.duals_ub[problem.local.n_ub:])
    cost = float(problem.local.c @ x)
    return AgentState(np.asarray(sigma, dtype=float).copy(), lam, rho, x, cost, cost + M * rho)


def local_step(inst: Instance, layout: VariableLayout, i: int, sigma: np.ndarray,
               cfg: DecompositionConfig, tol: Tolerances = Tolerances(), t: int = 0) -> AgentState:
    """Penalized relaxed local solve; lambda are the multipliers of the 2m coupling rows."""
    return _solve_local(AgentProblem.build(inst, layout, i), np.asarray(sigma, dtype=float),
                        cfg.resolve_M(inst, layout), tol, t)


def exchange_and_update(sigma: np.ndarray, lam: np.ndarray, frame: np.ndarray, t: int,
                        cfg: DecompositionConfig) -> np.ndarray:
    """Synchronous update of all allocations (n, 2m) from the multipliers (n, 2m) of iteration t.

    flow[i, j] = alpha_t A_ij (lambda_i - lambda_j) moves from j to i. Unless allocation_floor is None,
    every flow is clipped to [-spare_i, spare_j] with spare the holding above the floor shared out over
    the agent's neighbours, so no allocation falls below the floor that was not already there."""
    A = np.asarray(frame, dtype=float)
    alpha = cfg.steps(t)
    if cfg.allocation_floor is None:
        laplacian = np.diag(A.sum(axis=1)) - A
        return sigma + alpha * (laplacian @ lam)
    flow = alpha * A[:, :, None] * (lam[:, None, :] - lam[None, :, :])
    degree = np.maximum((A > 0).sum(axis=1), 1)[:, None]
    spare = np.maximum(sigma - cfg.allocation_floor, 0.0) / degree
    flow = np.clip(flow, -spare[:, None, :], spare[None, :, :])
    return sigma + flow.sum(axis=1)


def balance_pair_multipliers(sigma: np.ndarray, lam: np.ndarray, tol: float = PAIR_TIE_TOL) -> np.ndarray:
    """Mean of the acquisition and downlink multipliers of every target whose two allocations are equal."""
    lam = np.array(lam, dtype=float)
    m = len(lam) // 2
    tied = np.abs(sigma[:m] - sigma[m:]) <= tol
    mean = (lam[:m] + lam[m:]) / 2
    lam[:m][tied] = mean[tied]
    lam[m:][tied] = mean[tied]
    return lam


def psi(inst: Instance, layout: VariableLayout, i: int, sigma: np.ndarray, tol: Tolerances = Tolerances()) -> float:
    """Optimal relaxed local cost under allocation sigma; inf when sigma admits no local point."""
    sol = solve_lp(AgentProblem.build(inst, layout, i).restricted(np.asarray(sigma, dtype=float)), tol)
    if sol.status is LpStatus.INFEASIBLE:
        return math.inf
    return sol.objective


def correct_allocation(inst: Instance, layout: VariableLayout, i: int, sigma: np.ndarray,
                       tol: Tolerances = Tolerances()) -> tuple[np.ndarray, float]:
    """Relaxed local point closest to the allocation: min tau s.t. |C_i x - sigma| <= tau."""
    problem = AgentProblem.build(inst, layout, i)
    lp, C = problem.local, problem.coupling
    d, rows = lp.n_vars, len(sigma)
    c = np.concatenate([np.zeros(d), [1.0]])
    tau = -np.ones((rows, 1))
    A_ub = sp.vstack([widen(lp.A_ub, d + 1), sp.csr_matrix(np.hstack([C, tau])), sp.csr_matrix(np.hstack([-C, tau]))],
                     format="csr")
    b_ub = np.concatenate([lp.b_ub, sigma, -np.asarray(sigma)])
    sol = solve_lp(LinearProgram(c, A_ub, b_ub, widen(lp.A_eq, d + 1), lp.b_eq, np.zeros(d + 1),
                                 np.concatenate([lp.ub, [np.inf]]), np.zeros(d + 1, dtype=bool)), tol)
    assert sol.status is LpStatus.OPTIMAL and sol.x is not None
    return sol.x[:d], float(sol.x[d])


@dataclass
class IterationRecord:
    t: int
    sigma: np.ndarray      # (n, 2m) at the start of iteration t
    lam: np.ndarray        # (n, 2m)
    rho: np.ndarray        # (n,)
    frame: int
    residual: float        # max |sum_i sigma_i - (1 - zeta)|
    penalized: np.ndarray  # (n,) c_i'x + M rho

    def to_dict(self) -> dict[str, Any]:
        return to_jsonable({"t": self.t, "sigma": self.sigma, "lambda": self.lam, "rho": self.rho,
                            "frame": self.frame, "sumResidual": self.residual, "penalized": self.penalized})


@dataclass
class RunTrace:
    zeta: np.ndarray
    M: float
    records: list[IterationRecord] = field(default_factory=list)
    states: list[AgentState] = field(default_factory=list)   # local solutions of the last iteration
    initial: list[AgentState] = field(default_factory=list)  # before iteration 0
    final_sigma: np.ndarray | None = None                    # after the last update
    converged: bool = False

    @property
    def sigma(self) -> np.ndarray:
        """Final allocations (n, 2m), after the last exchange."""
        if self.final_sigma is not None:
            return self.final_sigma
        return np.array([s.sigma for s in self.initial])

    @property
    def penalized_total(self) -> float:
        return float(sum(s.penalized for s in self.states))

    def __str__(self) -> str:
        state = "converged" if self.converged else "stopped"
        return (f"RunTrace: {len(self.records)} iterations, {state}, "
                f"penalized cost {self.penalized_total:.10g}")


def write_trace(trace: RunTrace, path: Path | str, provenance: dict[str, Any] | None = None) -> None:
    with open(path, "w") as f:
        for record in trace.records:
            f.write(json.dumps({**record.to_dict(), **(provenance or {})}) + "\n")


def initial_states(inst: Instance, layout: VariableLayout, sigma: np.ndarray, correction: bool,
                   tol: Tolerances = Tolerances()) -> list[AgentState]:
    """Agent states before the first local solve: x = 0, or with correction the relaxed local point
    closest to the initial allocation (its distance tau is logged)."""
    states = []
    for i in range(inst.n):
        d = layout.agent_size(i)
        x = np.zeros(d)
        if correction:
            x, tau = correct_allocation(inst, layout, i, sigma[i], tol)
            logger.info(f"agent {i}: initial allocation deviation {tau:.6g}")
        cost = float(objective(inst, layout)[layout.agent_columns(i)] @ x)
        states.append(AgentState(sigma[i].copy(), np.zeros(len(sigma[i])), 0.0, x, cost, cost))
    return states


def run(inst: Instance, timeline: GraphTimeline, cfg: DecompositionConfig, tol: Tolerances = Tolerances(),
        on_iteration: Callable[[IterationRecord], None] | None = None) -> RunTrace:
    if timeline.n != inst.n:
        raise ValidationError(f"timeline has {timeline.n} agents, instance has {inst.n}")
    report = check_joint_connectivity(timeline.cycled(cfg.tf - 1 + timeline.delta), cfg.tf - 1)
    if not report.ok:
        raise ValidationError(f"timeline is not jointly connected (first bad window {report.first_bad_window})")

    layout = VariableLayout.from_instance(inst)
    zeta = cfg.resolve_zeta(inst, layout)
    M = cfg.resolve_M(inst, layout)
    budget = 1.0 - zeta
    sigma = init_allocations(inst, zeta)
    problems = [AgentProblem.build(inst, layout, i) for i in range(inst.n)]
    trace = RunTrace(zeta, M, initial=initial_states(inst, layout, sigma, cfg.correction, tol))
    logger.info(f"Distributed run: {inst.n} agents, {2 * inst.m} coupling rows, M={M:.6g}, tf={cfg.tf}")

    workers = min(worker_count(), inst.n)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    quiet = 0
    try:
        for t in range(cfg.tf):
            if pool is not None:
                states = list(pool.map(lambda i: _solve_local(problems[i], sigma[i], M, tol, t), range(inst.n)))
            else:
                states = [_solve_local(problems[i], sigma[i], M, tol, t) for i in range(inst.n)]
            lam = np.array([s.lam for s in states])
            record = IterationRecord(t, sigma.copy(), lam, np.array([s.rho for s in states]),
                                     t % len(timeline), float(np.abs(sigma.sum(axis=0) - budget).max()),
                                     np.array([s.penalized for s in states]))
            trace.records.append(record)
            trace.states = states
            if on_iteration is not None:
                on_iteration(record)

            updated = exchange_and_update(sigma, lam, timeline.frame(t), t, cfg)
            change = float(np.abs(updated - sigma).max(initial=0.0))
            sigma = updated
            quiet = quiet + 1 if change < cfg.tol_alloc else 0
            logger.debug(f"t={t}: max change {change:.3g}, residual {record.residual:.3g}")
            if quiet >= timeline.delta:
                trace.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    trace.final_sigma = sigma
    logger.info(f"{trace}")
    return trace


@dataclass
class Recovery:
    agent: int
    x: np.ndarray   # local 0/1 point (X_i then Y_i)
    rho: float      # actual coupling overshoot max(0, max(C_i x - sigma_i - slack))
    cost: float
    status: BnbStatus


def recover_integer(inst: Instance, layout: VariableLayout, i: int, sigma: np.ndarray,
                    limits: BnbLimits = BnbLimits(), tol: Tolerances = Tolerances(),
                    slack: float = 0.0) -> Recovery:
    """Lexicographic integer solve against sigma + slack: least penalty first, then least cost at that penalty."""
    problem = AgentProblem.build(inst, layout, i)
    sigma = np.asarray(sigma, dtype=float) + slack
    first = solve_milp(problem.penalized(sigma, 1.0, cost=False), limits, tol)
    if first.x is None:
        raise SolverLimitError(f"agent {i}: no integer point for the penalty stage")
    rho_star = max(first.objective, 0.0)
    second = solve_milp(problem.penalized(sigma, 0.0, rho_max=rho_star + tol.feas), limits, tol)
    if second.x is None:
        raise SolverLimitError(f"agent {i}: no integer point for the cost stage")

    d = problem.size
    x = np.round(second.x[:d])
    rho = max(0.0, float((problem.coupling @ x - sigma).max(initial=0.0)))
    status = BnbStatus.OPTIMAL if first.status is second.status is BnbStatus.OPTIMAL else BnbStatus.GAP_LIMIT
    rec = Recovery(i, x, rho, float(problem.local.c @ x), status)
    logger.debug(f"agent {i}: recovered cost {rec.cost:.10g}, rho {rec.rho:.3g}")
    return rec


@dataclass
class Census:
    fraction: float
    distances: list[float]  # per agent, max distance of x_relaxed to {0, 1}


def integrality_census(points: Sequence[np.ndarray] | Sequence[AgentState],
                       threshold: float = CENSUS_THRESHOLD) -> Census:
    distances = []
    for p in points:
        x = p.x_relaxed if isinstance(p, AgentState) else np.asarray(p, dtype=float)
        distances.append(float(np.abs(x - np.round(x)).max(initial=0.0)))
    fraction = sum(d <= threshold for d in distances) / len(distances) if distances else 1.0
    return Census(fraction, distances)


@dataclass
class DistributedResult:
    trace: RunTrace
    recoveries: list[Recovery]
    schedule: Schedule
    total_rho: float
    coupling_violation: float
    census: Census

    @property
    def cost(self) -> float:
        return self.schedule.objective


def solve_distributed(inst: Instance, timeline: GraphTimeline, cfg: DecompositionConfig,
                      limits: BnbLimits = BnbLimits(), tol: Tolerances = Tolerances(),
                      on_iteration: Callable[[IterationRecord], None] | None = None) -> DistributedResult:
    """run, then recover_integer for every agent, combined into one schedule."""
    trace = run(inst, timeline, cfg, tol, on_iteration)
    layout = VariableLayout.from_instance(inst)
    slack = cfg.recovery_slack(inst)
    recoveries = [recover_integer(inst, layout, i, sigma, limits, tol, slack) for i, sigma in enumerate(trace.sigma)]
    z = np.zeros(layout.nz)
    for rec in recoveries:
        z[layout.agent_columns(rec.agent)] = rec.x
    total_rho = float(sum(rec.rho for rec in recoveries))
    violation = coupling_violation(inst, z, layout)
    census = integrality_census(trace.states)
    meta = {"status": "OPTIMAL" if all(r.status is BnbStatus.OPTIMAL for r in recoveries) else "GAP_LIMIT",
            "mode": "le", "iterations": len(trace.records), "converged": trace.converged,
            "total_rho": total_rho, "coupling_violation": violation, "integral_fraction": census.fraction,
            "penalized_relaxed": trace.penalized_total}
    sched = Schedule.from_vector(inst, layout, z, meta=meta)
    logger.info(f"Distributed {sched}: sum rho {total_rho:.3g}, coupling violation {violation:.3g}")
    return DistributedResult(trace, recoveries, sched, total_rho, violation, census)
