"""
Exhaustive search over every 0/1 assignment of a tiny instance, the reference the solvers are tested against.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .defs import CouplingMode
from .errors import OracleRefusal
from .instance import Instance, VariableLayout
from .model import feasible_mask, objective
from .util import batched, gray_bits, worker_count

logger = logging.getLogger(__name__)

MAX_VARS = 24
CHUNK = 1 << 14
TIE_TOL = 1e-9


@dataclass
class OracleResult:
    objective: float
    argmins: np.ndarray  # (ties, nx + ny) 0/1
    feasible_count: int
    total_count: int

    @property
    def feasible(self) -> bool:
        return self.feasible_count > 0

    def __str__(self) -> str:
        if not self.feasible:
            return f"OracleResult: infeasible ({self.total_count} assignments)"
        return (f"OracleResult: optimum {self.objective:.10g}, {len(self.argmins)} optimal of "
                f"{self.feasible_count} feasible / {self.total_count} assignments")


@dataclass
class _Chunk:
    best: float
    argmins: np.ndarray
    feasible: int


def _merge(a: _Chunk, b: _Chunk) -> _Chunk:
    if b.best < a.best - TIE_TOL:
        a, b = b, a
    if abs(b.best - a.best) <= TIE_TOL and np.isfinite(b.best):
        return _Chunk(min(a.best, b.best), np.vstack([a.argmins, b.argmins]), a.feasible + b.feasible)
    return _Chunk(a.best, a.argmins, a.feasible + b.feasible)


def enumerate(inst: Instance, mode: CouplingMode = CouplingMode.INEQUALITY, cap: int = MAX_VARS) -> OracleResult:
    """All 2^(nx+ny) assignments in Gray-code order, filtered by the direct constraint checker."""
    layout = VariableLayout.from_instance(inst)
    nz = layout.nz
    if nz > cap:
        raise OracleRefusal(f"{nz} variables exceed the enumeration cap of {cap}")
    c = objective(inst, layout)
    total = 1 << nz

    def evaluate(start: int) -> _Chunk:
        Z = gray_bits(start, min(start + CHUNK, total), nz)
        ok = feasible_mask(inst, Z, mode, layout)
        if not ok.any():
            return _Chunk(np.inf, np.zeros((0, nz), dtype=np.int8), 0)
        Z = Z[ok]
        values = Z @ c
        best = float(values.min())
        return _Chunk(best, Z[values <= best + TIE_TOL], int(ok.sum()))

    workers = worker_count()
    result = _Chunk(np.inf, np.zeros((0, nz), dtype=np.int8), 0)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for group in batched(range(0, total, CHUNK), workers):
            for chunk in pool.map(evaluate, group):
                result = _merge(result, chunk)

    argmins = result.argmins
    if len(argmins):
        values = argmins @ c
        argmins = argmins[values <= result.best + TIE_TOL]
    out = OracleResult(result.best, argmins, result.feasible, total)
    logger.info(f"{out}")
    return out
