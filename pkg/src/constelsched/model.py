"""
Matrix form of the scheduling model.

Local rows of agent i (in agent-local columns X_i, Y_i):
  PREP    p_b x_a + p_b x_b <= max(0, t_a - t_b) + p_b   for ordered acquisition pairs a != b with t_a >= t_b
  WINDOW  sum_j y_jr q_j / DR <= d_r                      per downlink opportunity r
  MEMORY  sum_j q_j (sum_k x_jk chi(t_a, t_jk) - sum_r y_jr chi(t_a, s_jr)) <= qM   per acquisition anchor a
  ORDER   sum_k x_jk t_jk - sum_r y_jr s_jr <= 0          per target j
  PAIR    sum_k x_jk - sum_r y_jr = 0                     per target j
Coupling rows (global columns): COUPLE_ACQ sum_ik x_ijk <= 1 (or = 1), COUPLE_DL sum_ir y_ijr <= 1 (or = 1).

Every row carries a tag and a key (the indices it was built from) so that the direct checkers
below can be compared row by row with the matrices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import scipy.sparse as sp

from .defs import CouplingMode, RowTag
from .errors import InputError
from .instance import Instance, VariableLayout

logger = logging.getLogger(__name__)

CHECK_TOL = 1e-9

RowKey = tuple[int, ...]


def _matrix(A, ncols: int, name: str) -> sp.csr_matrix:
    if sp.issparse(A):
        A = sp.csr_matrix(A, dtype=float)
    else:
        A = np.asarray(A, dtype=float)
        if A.size == 0 and A.ndim != 2:
            A = A.reshape(0, ncols)
        if A.ndim != 2:
            raise InputError(f"{name} has shape {A.shape}, expected (rows, {ncols})")
        A = sp.csr_matrix(A)
    if A.shape[1] != ncols:
        raise InputError(f"{name} has shape {A.shape}, expected (rows, {ncols})")
    return A


def widen(A: sp.csr_matrix, ncols: int) -> sp.csr_matrix:
    """The same rows with all-zero columns appended on the right."""
    assert ncols >= A.shape[1]
    return sp.csr_matrix((A.data, A.indices, A.indptr), shape=(A.shape[0], ncols))


@dataclass
class LinearProgram:
    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    tags_ub: np.ndarray = field(default=None)  # type: ignore[assignment]
    tags_eq: np.ndarray = field(default=None)  # type: ignore[assignment]
    keys_ub: list[RowKey] = field(default_factory=list)
    keys_eq: list[RowKey] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        nv = len(self.c)
        self.A_ub = _matrix(self.A_ub, nv, "A_ub")
        self.A_eq = _matrix(self.A_eq, nv, "A_eq")
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.lb = np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=float).reshape(-1)
        self.integrality = np.asarray(self.integrality, dtype=bool).reshape(-1)
        if self.tags_ub is None:
            self.tags_ub = np.full(len(self.b_ub), -1, dtype=np.int8)
        if self.tags_eq is None:
            self.tags_eq = np.full(len(self.b_eq), -1, dtype=np.int8)
        self.tags_ub = np.asarray(self.tags_ub, dtype=np.int8).reshape(-1)
        self.tags_eq = np.asarray(self.tags_eq, dtype=np.int8).reshape(-1)
        if not self.keys_ub:
            self.keys_ub = [(r,) for r in range(len(self.b_ub))]
        if not self.keys_eq:
            self.keys_eq = [(r,) for r in range(len(self.b_eq))]

        for name in ("lb", "ub", "integrality"):
            if len(getattr(self, name)) != nv:
                raise InputError(f"{name} has {len(getattr(self, name))} entries, expected {nv}")
        for kind in ("ub", "eq"):
            rows = getattr(self, f"A_{kind}").shape[0]
            for name in (f"b_{kind}", f"tags_{kind}", f"keys_{kind}"):
                if len(getattr(self, name)) != rows:
                    raise InputError(f"{name} has {len(getattr(self, name))} entries, expected {rows}")
        if (self.lb > self.ub).any():
            raise InputError(f"lb > ub for columns {np.flatnonzero(self.lb > self.ub).tolist()}")
        for name in ("c", "A_ub", "b_ub", "A_eq", "b_eq"):
            values = getattr(self, name)
            if not np.isfinite(values.data if sp.issparse(values) else values).all():
                raise InputError(f"{name} contains non-finite entries")

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_ub(self) -> int:
        return len(self.b_ub)

    @property
    def n_eq(self) -> int:
        return len(self.b_eq)

    def __str__(self) -> str:
        return (f"LinearProgram: {self.n_vars} columns ({int(self.integrality.sum())} integer), "
                f"{self.n_ub} inequality rows, {self.n_eq} equality rows")

    def row_violations(self, z: np.ndarray, tol: float = CHECK_TOL) -> set[tuple[RowTag, RowKey]]:
        """(tag, key) of every matrix row violated by z by more than tol."""
        z = np.asarray(z, dtype=float)
        out = set()
        excess = self.A_ub @ z - self.b_ub
        for r in np.flatnonzero(excess > tol):
            out.add((RowTag(self.tags_ub[r]), self.keys_ub[r]))
        excess = np.abs(self.A_eq @ z - self.b_eq)
        for r in np.flatnonzero(excess > tol):
            out.add((RowTag(self.tags_eq[r]), self.keys_eq[r]))
        return out


@dataclass(frozen=True)
class CouplingBlock:
    agent: int
    rows: np.ndarray        # (2m, d_i) over agent-local columns
    rhs_share: np.ndarray   # global right-hand side, ones(2m)


@dataclass(frozen=True)
class Coupling:
    blocks: tuple[CouplingBlock, ...]
    rows: np.ndarray        # (2m, nz) over global columns
    rhs: np.ndarray


class _Rows:
    """Row accumulator, turned into a CSR matrix once the column count is known."""

    def __init__(self) -> None:
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.rhs: list[float] = []
        self.tags: list[int] = []
        self.keys: list[RowKey] = []

    def add(self, cols, vals, rhs: float, tag: RowTag, key: RowKey) -> None:
        self.cols.append(np.asarray(cols, dtype=np.int64))
        self.vals.append(np.asarray(vals, dtype=float))
        self.rhs.append(float(rhs))
        self.tags.append(int(tag))
        self.keys.append(key)

    def extend(self, other: _Rows, column_map: np.ndarray) -> None:
        for cols, vals, rhs, tag, key in zip(other.cols, other.vals, other.rhs, other.tags, other.keys):
            self.cols.append(column_map[cols])
            self.vals.append(vals)
            self.rhs.append(rhs)
            self.tags.append(tag)
            self.keys.append(key)

    def __len__(self) -> int:
        return len(self.rhs)

    def matrix(self, ncols: int) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray, list[RowKey]]:
        counts = [len(cols) for cols in self.cols]
        rows = np.repeat(np.arange(len(self)), counts)
        cols = np.concatenate(self.cols) if self.cols else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(self.vals) if self.vals else np.zeros(0)
        # duplicate (row, column) entries are summed
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(self), ncols))
        return A, np.array(self.rhs, dtype=float), np.array(self.tags, dtype=np.int8), list(self.keys)


def chi(t: float, s: float) -> int:
    """Step function: 1 iff t >= s."""
    return 1 if t >= s else 0


def objective(inst: Instance, layout: VariableLayout) -> np.ndarray:
    """alpha t - gamma/m for every x, beta s for every y, in z = (X, Y) order."""
    c = np.zeros(layout.nz)
    for (i, j, k), col in layout.x_index.items():
        c[col] = inst.alpha * inst.t[i][j][k] - inst.gamma / inst.m
    for (i, j, r), col in layout.y_index.items():
        c[layout.nx + col] = inst.beta * inst.s[i][j][r]
    return c


def _acquisitions(inst: Instance, i: int) -> list[tuple[int, int, float, float]]:
    """(j, k, t, p) of every acquisition opportunity of agent i, in layout order."""
    return [(j, k, float(inst.t[i][j][k]), float(inst.p[i][j][k]))
            for j in range(inst.m) for k in range(int(inst.theta[i, j]))]


def _local_rows(inst: Instance, layout: VariableLayout, i: int) -> tuple[_Rows, _Rows]:
    ub, eq = _Rows(), _Rows()
    acq = _acquisitions(inst, i)
    xcol = [layout.local_x(i, j, k) for j, k, _, _ in acq]

    for a, (ja, ka, ta, _) in enumerate(acq):
        for b, (jb, kb, tb, pb) in enumerate(acq):
            if a == b or not chi(ta, tb) or pb == 0.0:
                continue
            ub.add([xcol[a], xcol[b]], [pb, pb], max(0.0, ta - tb) + pb, RowTag.PREP, (i, ja, ka, jb, kb))

    for r in range(int(inst.omega[i])):
        cols = [layout.local_y(i, j, r) for j in range(inst.m)]
        ub.add(cols, inst.q[i] / inst.data_rate, inst.d[i][r], RowTag.WINDOW, (i, r))

    for js, l, anchor, _ in acq:
        cols, vals = [], []
        for j in range(inst.m):
            for k in range(int(inst.theta[i, j])):
                if chi(anchor, inst.t[i][j][k]):
                    cols.append(layout.local_x(i, j, k))
                    vals.append(inst.q[i, j])
            for r in range(int(inst.omega[i])):
                if chi(anchor, inst.s[i][j][r]):
                    cols.append(layout.local_y(i, j, r))
                    vals.append(-inst.q[i, j])
        ub.add(cols, vals, inst.q_max[i], RowTag.MEMORY, (i, js, l))

    for j in range(inst.m):
        xs = [layout.local_x(i, j, k) for k in range(int(inst.theta[i, j]))]
        ys = [layout.local_y(i, j, r) for r in range(int(inst.omega[i]))]
        ub.add(xs + ys, np.concatenate([inst.t[i][j], -inst.s[i][j]]), 0.0, RowTag.ORDER, (i, j))
        eq.add(xs + ys, [1.0] * len(xs) + [-1.0] * len(ys), 0.0, RowTag.PAIR, (i, j))
    return ub, eq


def build_local(inst: Instance, layout: VariableLayout, i: int) -> LinearProgram:
    """Agent i's private rows over its own columns (X_i then Y_i), all variables binary."""
    ub, eq = _local_rows(inst, layout, i)
    d = layout.agent_size(i)
    A_ub, b_ub, tags_ub, keys_ub = ub.matrix(d)
    A_eq, b_eq, tags_eq, keys_eq = eq.matrix(d)
    c = objective(inst, layout)[layout.agent_columns(i)]
    return LinearProgram(c, A_ub, b_ub, A_eq, b_eq, np.zeros(d), np.ones(d), np.ones(d, dtype=bool),
                         tags_ub, tags_eq, keys_ub, keys_eq)


def build_coupling(inst: Instance, layout: VariableLayout) -> Coupling:
    m = inst.m
    rows = np.zeros((2 * m, layout.nz))
    for (i, j, k), col in layout.x_index.items():
        rows[j, col] = 1.0
    for (i, j, r), col in layout.y_index.items():
        rows[m + j, layout.nx + col] = 1.0
    blocks = tuple(CouplingBlock(i, rows[:, layout.agent_columns(i)], np.ones(2 * m)) for i in range(inst.n))
    return Coupling(blocks, rows, np.ones(2 * m))


def coupling_keys(m: int) -> tuple[list[int], list[RowKey]]:
    tags = [int(RowTag.COUPLE_ACQ)] * m + [int(RowTag.COUPLE_DL)] * m
    keys: list[RowKey] = [(j,) for j in range(m)] * 2
    return tags, keys


def assemble_centralized(inst: Instance, layout: VariableLayout,
                         mode: CouplingMode = CouplingMode.EQUALITY) -> LinearProgram:
    """All local blocks, the 2m coupling rows in the given mode, and m combined rows sum x - sum y = 0."""
    mode = CouplingMode(mode)
    ub, eq = _Rows(), _Rows()
    for i in range(inst.n):
        local_ub, local_eq = _local_rows(inst, layout, i)
        cols = layout.agent_columns(i)
        ub.extend(local_ub, cols)
        eq.extend(local_eq, cols)
    A_ub, b_ub, tags_ub, keys_ub = ub.matrix(layout.nz)
    A_eq, b_eq, tags_eq, keys_eq = eq.matrix(layout.nz)

    coupling = build_coupling(inst, layout)
    ctags, ckeys = coupling_keys(inst.m)
    if mode is CouplingMode.INEQUALITY:
        A_ub = sp.vstack([A_ub, sp.csr_matrix(coupling.rows)], format="csr")
        b_ub = np.concatenate([b_ub, coupling.rhs])
        tags_ub = np.concatenate([tags_ub, np.array(ctags, dtype=np.int8)])
        keys_ub = keys_ub + ckeys
    else:
        A_eq = sp.vstack([A_eq, sp.csr_matrix(coupling.rows)], format="csr")
        b_eq = np.concatenate([b_eq, coupling.rhs])
        tags_eq = np.concatenate([tags_eq, np.array(ctags, dtype=np.int8)])
        keys_eq = keys_eq + ckeys

    combined = coupling.rows[:inst.m] - coupling.rows[inst.m:]
    A_eq = sp.vstack([A_eq, sp.csr_matrix(combined)], format="csr")
    b_eq = np.concatenate([b_eq, np.zeros(inst.m)])
    tags_eq = np.concatenate([tags_eq, np.full(inst.m, int(RowTag.PAIR), dtype=np.int8)])
    keys_eq = keys_eq + [(j,) for j in range(inst.m)]

    nz = layout.nz
    lp = LinearProgram(objective(inst, layout), A_ub, b_ub, A_eq, b_eq, np.zeros(nz), np.ones(nz),
                       np.ones(nz, dtype=bool), tags_ub, tags_eq, keys_ub, keys_eq)
    logger.info(f"Assembled centralized model ({mode.value} coupling): {lp}")
    return lp


def constraint_counts(inst: Instance) -> dict[str, dict[str, int]]:
    """Row counts per family without building matrices.

    'formulated' counts every acquisition pair of the preparation constraint, as the model is written;
    'emitted' counts the rows assemble_centralized actually produces.
    """
    formulated = {tag.name: 0 for tag in RowTag}
    emitted = {tag.name: 0 for tag in RowTag}
    m = inst.m
    for i in range(inst.n):
        times = np.concatenate([inst.t[i][j] for j in range(m)])
        preps = np.concatenate([inst.p[i][j] for j in range(m)])
        N = len(times)
        formulated["PREP"] += N * N
        later = times[:, None] >= times[None, :]
        np.fill_diagonal(later, False)
        emitted["PREP"] += int((later & (preps[None, :] > 0)).sum())
        for counts in (formulated, emitted):
            counts["MEMORY"] += N
            counts["WINDOW"] += int(inst.omega[i])
            counts["ORDER"] += m
            counts["PAIR"] += m
    for counts in (formulated, emitted):
        counts["COUPLE_ACQ"] += m
        counts["COUPLE_DL"] += m
        counts["PAIR"] += m
        counts["total"] = sum(counts.values())
    return {"formulated": formulated, "emitted": emitted}


# Direct evaluation of the model equations, independent of the matrix builders above.

@dataclass(frozen=True)
class Violation:
    tag: RowTag
    key: RowKey
    slack: float  # amount by which the row is exceeded

    def __str__(self) -> str:
        return f"{self.tag.name}{self.key}: exceeded by {self.slack:.6g}"


def _excess(inst: Instance, layout: VariableLayout, Z: np.ndarray, mode: CouplingMode,
            coupling: bool) -> Iterator[tuple[RowTag, list[RowKey], np.ndarray]]:
    """Yield (family, keys, excess) with excess of shape (batch, len(keys)); excess > 0 means violated."""
    X, Y = Z[:, :layout.nx], Z[:, layout.nx:]
    batch = Z.shape[0]
    m = inst.m

    def x(i, j, k):
        return X[:, layout.x_index[(i, j, k)]]

    def y(i, j, r):
        return Y[:, layout.y_index[(i, j, r)]]

    for i in range(inst.n):
        events = [(j, k) for j in range(m) for k in range(int(inst.theta[i, j]))]
        omega = int(inst.omega[i])

        keys, cols = [], []
        for ja, ka in events:
            ta = inst.t[i][ja][ka]
            for jb, kb in events:
                tb, pb = inst.t[i][jb][kb], inst.p[i][jb][kb]
                if (ja, ka) == (jb, kb) or ta < tb:
                    continue
                keys.append((i, ja, ka, jb, kb))
                cols.append(pb * (x(i, ja, ka) + x(i, jb, kb)) - (max(0.0, ta - tb) + pb))
        yield RowTag.PREP, keys, _stack(cols, batch)

        keys = [(i, r) for r in range(omega)]
        cols = [sum(y(i, j, r) * inst.q[i, j] for j in range(m)) / inst.data_rate - inst.d[i][r]
                for r in range(omega)]
        yield RowTag.WINDOW, keys, _stack(cols, batch)

        keys, cols = [], []
        for js, l in events:
            anchor = inst.t[i][js][l]
            held = np.zeros(batch)
            for j in range(m):
                acquired = sum((x(i, j, k) for k in range(int(inst.theta[i, j])) if inst.t[i][j][k] <= anchor),
                               np.zeros(batch))
                released = sum((y(i, j, r) for r in range(omega) if inst.s[i][j][r] <= anchor), np.zeros(batch))
                held = held + (acquired - released) * inst.q[i, j]
            keys.append((i, js, l))
            cols.append(held - inst.q_max[i])
        yield RowTag.MEMORY, keys, _stack(cols, batch)

        keys = [(i, j) for j in range(m)]
        order, pair = [], []
        for j in range(m):
            acq_time = sum((x(i, j, k) * inst.t[i][j][k] for k in range(int(inst.theta[i, j]))), np.zeros(batch))
            dl_time = sum((y(i, j, r) * inst.s[i][j][r] for r in range(omega)), np.zeros(batch))
            order.append(acq_time - dl_time)
            n_acq = sum((x(i, j, k) for k in range(int(inst.theta[i, j]))), np.zeros(batch))
            n_dl = sum((y(i, j, r) for r in range(omega)), np.zeros(batch))
            pair.append(np.abs(n_acq - n_dl))
        yield RowTag.ORDER, keys, _stack(order, batch)
        yield RowTag.PAIR, keys, _stack(pair, batch)

    if not coupling:
        return
    keys = [(j,) for j in range(m)]
    acq_total = [sum((x(i, j, k) for i in range(inst.n) for k in range(int(inst.theta[i, j]))), np.zeros(batch))
                 for j in range(m)]
    dl_total = [sum((y(i, j, r) for i in range(inst.n) for r in range(int(inst.omega[i]))), np.zeros(batch))
                for j in range(m)]
    if CouplingMode(mode) is CouplingMode.INEQUALITY:
        yield RowTag.COUPLE_ACQ, keys, _stack([a - 1.0 for a in acq_total], batch)
        yield RowTag.COUPLE_DL, keys, _stack([d - 1.0 for d in dl_total], batch)
    else:
        yield RowTag.COUPLE_ACQ, keys, _stack([np.abs(a - 1.0) for a in acq_total], batch)
        yield RowTag.COUPLE_DL, keys, _stack([np.abs(d - 1.0) for d in dl_total], batch)
    yield RowTag.PAIR, keys, _stack([np.abs(a - d) for a, d in zip(acq_total, dl_total)], batch)


def _stack(cols: list, batch: int) -> np.ndarray:
    if not cols:
        return np.zeros((batch, 0))
    return np.stack([np.broadcast_to(np.asarray(c, dtype=float), (batch,)) for c in cols], axis=1)


def violations(inst: Instance, z: np.ndarray, mode: CouplingMode = CouplingMode.INEQUALITY,
               layout: VariableLayout | None = None, *, coupling: bool = True,
               tol: float = CHECK_TOL) -> list[Violation]:
    """Evaluate every constraint family for one assignment z = (X, Y); empty list iff z is feasible.
    With coupling=False only the per-agent families are checked."""
    layout = layout or VariableLayout.from_instance(inst)
    Z = np.asarray(z, dtype=float).reshape(1, -1)
    assert Z.shape[1] == layout.nz
    found = []
    for tag, keys, excess in _excess(inst, layout, Z, mode, coupling):
        for r in np.flatnonzero(excess[0] > tol):
            found.append(Violation(tag, keys[r], float(excess[0, r])))
    return found


def feasible_mask(inst: Instance, Z: np.ndarray, mode: CouplingMode = CouplingMode.INEQUALITY,
                  layout: VariableLayout | None = None, tol: float = CHECK_TOL) -> np.ndarray:
    """Batched feasibility of the rows of Z (batch, nz)."""
    layout = layout or VariableLayout.from_instance(inst)
    Z = np.asarray(Z, dtype=float)
    ok = np.ones(Z.shape[0], dtype=bool)
    for _, _, excess in _excess(inst, layout, Z, mode, True):
        if excess.shape[1]:
            ok &= (excess <= tol).all(axis=1)
    return ok


def coupling_violation(inst: Instance, z: np.ndarray, layout: VariableLayout | None = None) -> float:
    """Total amount by which the at-most-once rows are exceeded."""
    layout = layout or VariableLayout.from_instance(inst)
    rows = build_coupling(inst, layout).rows
    return float(np.maximum(rows @ np.asarray(z, dtype=float) - 1.0, 0.0).sum())
