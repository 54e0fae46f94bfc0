"""
Centralized pipeline: assemble the full model, solve it by branch and bound, read the schedule
back through the variable layout, and export it as CSV tables.

Report files (column order is stable):
  targets.csv     target, event, satellite, occurrence, time, duration
  satellites.csv  satellite, kind, target, occurrence, start, end
  tree.csv        parent, child, kind, target
  summary.json    objective, solver metadata and provenance
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .defs import BnbStatus, CouplingMode
from .errors import InfeasibleScheduleError, SolverLimitError
from .instance import Instance, VariableLayout
from .lp import Tolerances
from .milp import BnbLimits, solve_milp
from .model import Violation, assemble_centralized, objective as cost_vector, violations

logger = logging.getLogger(__name__)

TARGET_COLUMNS = ["target", "event", "satellite", "occurrence", "time", "duration"]
SATELLITE_COLUMNS = ["satellite", "kind", "target", "occurrence", "start", "end"]
TREE_COLUMNS = ["parent", "child", "kind", "target"]
GROUND = "ground"


@dataclass(frozen=True)
class Acquisition:
    satellite: int
    target: int
    occurrence: int
    time: float


@dataclass(frozen=True)
class Downlink:
    satellite: int
    target: int
    occurrence: int
    time: float
    duration: float


@dataclass
class Schedule:
    acquisitions: list[Acquisition]
    downlinks: list[Downlink]
    objective: float
    meta: dict[str, Any] = field(default_factory=dict)

    def __str__(self) -> str:
        return (f"Schedule: {len(self.acquisitions)} acquisitions, {len(self.downlinks)} downlinks, "
                f"objective {self.objective:.10g}")

    @property
    def targets(self) -> list[int]:
        return sorted({a.target for a in self.acquisitions})

    def to_vector(self, layout: VariableLayout) -> np.ndarray:
        z = np.zeros(layout.nz)
        for a in self.acquisitions:
            z[layout.z_x(a.satellite, a.target, a.occurrence)] += 1.0
        for d in self.downlinks:
            z[layout.z_y(d.satellite, d.target, d.occurrence)] += 1.0
        return z

    @staticmethod
    def from_vector(inst: Instance, layout: VariableLayout, z: np.ndarray, objective: float | None = None,
                    meta: dict[str, Any] | None = None) -> Schedule:
        z = np.asarray(z)
        acquisitions = [Acquisition(i, j, k, float(inst.t[i][j][k]))
                        for (i, j, k), col in layout.x_index.items() if z[col] > 0.5]
        downlinks = [Downlink(i, j, r, float(inst.s[i][j][r]), float(inst.q[i, j] / inst.data_rate))
                     for (i, j, r), col in layout.y_index.items() if z[layout.nx + col] > 0.5]
        acquisitions.sort(key=lambda a: (a.target, a.satellite, a.occurrence))
        downlinks.sort(key=lambda d: (d.target, d.satellite, d.occurrence))
        if objective is None:
            objective = float(cost_vector(inst, layout) @ (z > 0.5))
        return Schedule(acquisitions, downlinks, float(objective), dict(meta or {}))


def unobservable_targets(inst: Instance) -> list[int]:
    return [int(j) for j in np.flatnonzero(inst.theta.sum(axis=0) == 0)]


def solve_centralized(inst: Instance, mode: CouplingMode = CouplingMode.EQUALITY,
                      limits: BnbLimits = BnbLimits(), tol: Tolerances = Tolerances()) -> Schedule:
    mode = CouplingMode(mode)
    if mode is CouplingMode.EQUALITY and (hidden := unobservable_targets(inst)):
        raise InfeasibleScheduleError("coupling", hidden, "no satellite can acquire these targets")

    layout = VariableLayout.from_instance(inst)
    lp = assemble_centralized(inst, layout, mode)
    result = solve_milp(lp, limits, tol)
    if result.status is BnbStatus.INFEASIBLE:
        kind = "coupling" if mode is CouplingMode.EQUALITY else "local"
        raise InfeasibleScheduleError(kind, [], "the assembled model has no integer solution")
    if result.x is None:
        raise SolverLimitError(f"no integer solution within limits ({result.nodes} nodes, bound {result.bound:.6g})")

    meta = {"status": result.status.name, "gap": result.gap, "bound": result.bound, "nodes": result.nodes,
            "mode": mode.value, "elapsed": result.elapsed}
    sched = Schedule.from_vector(inst, layout, result.x, result.objective, meta)
    logger.info(f"{sched} ({result.status.name}, gap {result.gap:.3g})")
    return sched


def validate(inst: Instance, sched: Schedule, mode: CouplingMode | None = None) -> list[Violation]:
    """Empty list iff the schedule satisfies every constraint family; the coupling mode defaults
    to the one the schedule was solved with, else at-most-once."""
    if mode is None:
        mode = CouplingMode(sched.meta.get("mode", CouplingMode.INEQUALITY.value))
    layout = VariableLayout.from_instance(inst)
    for a in sched.acquisitions:
        if (a.satellite, a.target, a.occurrence) not in layout.x_index:
            raise IndexError(f"no acquisition opportunity {a}")
    for d in sched.downlinks:
        if (d.satellite, d.target, d.occurrence) not in layout.y_index:
            raise IndexError(f"no downlink opportunity {d}")
    found = violations(inst, sched.to_vector(layout), mode, layout)
    for v in found:
        logger.debug(f"violation {v}")
    return found


def _target_table(sched: Schedule) -> pd.DataFrame:
    rows = [(a.target, "acquisition", a.satellite, a.occurrence, a.time, 0.0) for a in sched.acquisitions]
    rows += [(d.target, "downlink", d.satellite, d.occurrence, d.time, d.duration) for d in sched.downlinks]
    return pd.DataFrame(rows, columns=TARGET_COLUMNS)


def _satellite_table(sched: Schedule, inst: Instance) -> pd.DataFrame:
    rows: list[tuple] = []
    busy = {a.satellite for a in sched.acquisitions} | {d.satellite for d in sched.downlinks}
    for i in sorted(busy):
        for r in range(int(inst.omega[i])):
            start = min(float(inst.s[i][j][r]) for j in range(inst.m))
            rows.append((i, "window", -1, r, start, start + float(inst.d[i][r])))
    for a in sched.acquisitions:
        prep = float(inst.p[a.satellite][a.target][a.occurrence])
        rows.append((a.satellite, "preparation", a.target, a.occurrence, a.time - prep, a.time))
        rows.append((a.satellite, "acquisition", a.target, a.occurrence, a.time, a.time))
    for d in sched.downlinks:
        rows.append((d.satellite, "download", d.target, d.occurrence, d.time, d.time + d.duration))
    rows.sort(key=lambda row: (row[0], row[4], row[1]))
    return pd.DataFrame(rows, columns=SATELLITE_COLUMNS)


def _tree_table(sched: Schedule) -> pd.DataFrame:
    rows = [(f"target:{a.target}", f"satellite:{a.satellite}", "acquisition", a.target) for a in sched.acquisitions]
    rows += [(f"satellite:{d.satellite}", GROUND, "downlink", d.target) for d in sched.downlinks]
    return pd.DataFrame(rows, columns=TREE_COLUMNS)


def _write_csv(table: pd.DataFrame, path: Path, provenance: dict[str, Any] | None) -> None:
    """CSV preceded by one "# key: value" line per provenance entry; read back with comment="#"."""
    with open(path, "w", newline="") as f:
        for key, value in (provenance or {}).items():
            f.write(f"# {key}: {value}\n")
        table.to_csv(f, index=False)


def report(sched: Schedule, inst: Instance, out_dir: Path | str,
           provenance: dict[str, Any] | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "targets.csv", out_dir / "satellites.csv", out_dir / "tree.csv", out_dir / "summary.json"]
    for path, table in zip(paths, (_target_table(sched), _satellite_table(sched, inst), _tree_table(sched))):
        _write_csv(table, path, provenance)
    summary = {"objective": sched.objective, "meta": sched.meta, **(provenance or {})}
    paths[3].write_text(json.dumps(summary, indent=1))
    logger.info(f"Wrote report to {out_dir}")
    return paths


def read_report(out_dir: Path | str) -> Schedule:
    out_dir = Path(out_dir)
    df = pd.read_csv(out_dir / "targets.csv", float_precision="round_trip", comment="#")
    acquisitions = [Acquisition(int(row.satellite), int(row.target), int(row.occurrence), float(row.time))
                    for row in df[df.event == "acquisition"].itertuples()]
    downlinks = [Downlink(int(row.satellite), int(row.target), int(row.occurrence), float(row.time),
                          float(row.duration))
                 for row in df[df.event == "downlink"].itertuples()]
    objective, meta = float("nan"), {}
    summary_path = out_dir / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        objective, meta = summary["objective"], summary.get("meta", {})
    return Schedule(acquisitions, downlinks, objective, meta)
