"""
LP-based branch and bound for problems whose integrality-flagged columns are binary (or integer with
finite bounds). Continuous columns are allowed.
"""
from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .defs import BnbStatus, LpStatus
from .errors import ConfigurationError, NumericalError
from .lp import Tolerances, drop_empty_rows, solve_lp
from .model import LinearProgram

logger = logging.getLogger(__name__)

INTEGRALITY_TOL = 1e-6
PRUNE_TOL = 1e-9
DEPTH_FIRST_AFTER = 100_000  # open nodes


@dataclass(frozen=True)
class BnbLimits:
    node_max: int = 200_000
    time_max: float = 600.0  # seconds
    gap_target: float = 0.0

    def __post_init__(self) -> None:
        if self.node_max < 1:
            raise ConfigurationError(f"node_max must be >= 1, got {self.node_max}")
        if not self.time_max > 0:
            raise ConfigurationError(f"time_max must be positive, got {self.time_max}")
        if self.gap_target < 0:
            raise ConfigurationError(f"gap_target must be >= 0, got {self.gap_target}")


@dataclass
class BnbResult:
    status: BnbStatus
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    nodes: int
    incumbents: list[tuple[int, float]] = field(default_factory=list)  # (nodes explored, objective)
    elapsed: float = 0.0

    def __str__(self) -> str:
        return (f"BnbResult: {self.status.name}, objective {self.objective:.10g}, bound {self.bound:.10g}, "
                f"gap {self.gap:.3g}, {self.nodes} nodes, {self.elapsed:.2f} s")


def relative_gap(objective: float, bound: float) -> float:
    if not math.isfinite(objective):
        return math.inf
    return abs(objective - bound) / max(1.0, abs(objective))


@dataclass(order=True)
class _Node:
    key: tuple
    bound: float = field(compare=False)
    depth: int = field(compare=False)
    lb: np.ndarray = field(compare=False)
    ub: np.ndarray = field(compare=False)
    x: np.ndarray = field(compare=False)


def _most_fractional(x: np.ndarray, integer: np.ndarray) -> int:
    """Column with the largest distance to the nearest integer, lowest index on ties; -1 if integral."""
    frac = np.abs(x - np.round(x))
    frac[~integer] = 0.0
    j = int(np.argmax(frac))
    return j if frac[j] > INTEGRALITY_TOL else -1


def _rounded_if_feasible(lp: LinearProgram, x: np.ndarray, tol: Tolerances) -> np.ndarray | None:
    """x with its integer columns rounded, if that point still satisfies every row and bound."""
    z = np.where(lp.integrality, np.round(x), x)
    if (z < lp.lb - tol.feas).any() or (z > lp.ub + tol.feas).any():
        return None
    if (lp.A_ub @ z > lp.b_ub + tol.feas).any() or (np.abs(lp.A_eq @ z - lp.b_eq) > tol.feas).any():
        return None
    return z


def solve_milp(lp: LinearProgram, limits: BnbLimits = BnbLimits(), tol: Tolerances = Tolerances()) -> BnbResult:
    start = time.perf_counter()
    lp, _, _ = drop_empty_rows(lp)
    integer = lp.integrality

    root = solve_lp(lp, tol)
    nodes = 1
    if root.status is LpStatus.INFEASIBLE:
        logger.info("Branch and bound: root relaxation infeasible")
        return BnbResult(BnbStatus.INFEASIBLE, None, math.inf, math.inf, math.inf, nodes,
                         elapsed=time.perf_counter() - start)
    if root.status is LpStatus.UNBOUNDED:
        raise NumericalError("LP relaxation is unbounded; integer columns need finite bounds",
                             iterations=root.iterations)
    assert root.x is not None

    best_x: np.ndarray | None = None
    best_obj = math.inf
    incumbents: list[tuple[int, float]] = []
    seq = 0
    depth_first = False

    def key(bound: float, depth: int) -> tuple:
        nonlocal seq
        seq += 1
        return (-depth, seq) if depth_first else (bound, seq)

    def offer(x: np.ndarray) -> None:
        nonlocal best_x, best_obj
        x = np.where(integer, np.round(x), x)
        obj = float(lp.c @ x)
        if obj < best_obj:
            best_x, best_obj = x, obj
            incumbents.append((nodes, obj))
            logger.debug(f"new incumbent {obj:.10g} at node {nodes}")

    rounded = _rounded_if_feasible(lp, root.x, tol)
    if rounded is not None:
        offer(rounded)
    heap = [_Node(key(root.objective, 0), root.objective, 0, lp.lb.copy(), lp.ub.copy(), root.x)]
    status = BnbStatus.OPTIMAL
    while heap:
        open_bound = min(node.bound for node in heap) if depth_first else heap[0].bound
        if limits.gap_target > 0 and best_x is not None \
                and relative_gap(best_obj, min(open_bound, best_obj)) <= limits.gap_target:
            status = BnbStatus.GAP_LIMIT
            break
        if nodes >= limits.node_max or time.perf_counter() - start > limits.time_max:
            status = BnbStatus.GAP_LIMIT
            break

        node = heapq.heappop(heap)
        if node.bound >= best_obj - PRUNE_TOL:
            continue
        j = _most_fractional(node.x, integer)
        if j < 0:
            offer(node.x)
            continue

        value = node.x[j]
        for lo, hi in ((node.lb[j], math.floor(value)), (math.ceil(value), node.ub[j])):
            child_lb, child_ub = node.lb.copy(), node.ub.copy()
            child_lb[j], child_ub[j] = lo, hi
            if lo > hi:
                continue
            sol = solve_lp(replace(lp, lb=child_lb, ub=child_ub), tol)
            nodes += 1
            if sol.status is not LpStatus.OPTIMAL or sol.objective >= best_obj - PRUNE_TOL:
                continue
            assert sol.x is not None
            if _most_fractional(sol.x, integer) < 0:
                offer(sol.x)
                continue
            rounded = _rounded_if_feasible(lp, sol.x, tol)
            if rounded is not None:
                offer(rounded)
            heapq.heappush(heap, _Node(key(sol.objective, node.depth + 1), sol.objective, node.depth + 1,
                                       child_lb, child_ub, sol.x))

        if not depth_first and len(heap) > DEPTH_FIRST_AFTER:
            logger.info(f"{len(heap)} open nodes, continuing depth-first")
            depth_first = True
            for n in heap:
                n.key = (-n.depth, n.key[1])
            heapq.heapify(heap)

    elapsed = time.perf_counter() - start
    live = [n.bound for n in heap if n.bound < best_obj - PRUNE_TOL]
    if status is BnbStatus.OPTIMAL:
        bound = best_obj
    else:
        bound = min(live + [best_obj]) if live else best_obj
    if best_x is None:
        if status is BnbStatus.OPTIMAL:
            status = BnbStatus.INFEASIBLE
            bound = math.inf
        else:
            bound = min(live) if live else root.objective
    gap = relative_gap(best_obj, bound)
    if status is BnbStatus.GAP_LIMIT and best_x is not None and gap <= tol.gap and not live:
        status = BnbStatus.OPTIMAL
    result = BnbResult(status, best_x, best_obj, bound, gap, nodes, incumbents, elapsed)
    logger.info(f"Branch and bound: {result}")
    return result
