"""
Benchmark cells and the centralized/distributed comparison report.

A cell either loads an instance file or generates one from (seed, GeneratorConfig), then counts
its variables and rows and optionally solves it. Every summary carries seed, config_hash and version.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from . import instance as instance_io
from . import network as network_io
from .centralized import solve_centralized
from .defs import CouplingMode, LpStatus
from .distributed import DecompositionConfig, solve_distributed
from .errors import ConfigurationError, ConstelError
from .instance import GeneratorConfig, Instance, VariableLayout, generate, paper_example_instance
from .lp import Tolerances, solve_lp
from .milp import BnbLimits
from .model import assemble_centralized, constraint_counts
from .network import GraphTimeline
from .util import config_hash, to_jsonable, worker_count

logger = logging.getLogger(__name__)

MODES = ("count", "central", "dist")
PAPER_EXAMPLE = "paper-example"
MID_SCALE = GeneratorConfig(n=20, m=30, theta_max=4, omega_max=4, days=5)
LARGE_SCALE = GeneratorConfig(n=30, m=50, theta_max=4, omega_max=4)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "cell"
    instance: Path | str | None = None          # file, PAPER_EXAMPLE, or None to generate
    generator: GeneratorConfig | None = None
    timeline: Path | None = None                # None: static complete graph
    mode: str = "central"
    coupling: CouplingMode = CouplingMode.EQUALITY
    limits: BnbLimits = field(default_factory=BnbLimits)
    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    out_dir: Path | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.instance is None and self.generator is None:
            raise ConfigurationError("need an instance file or a generator configuration")
        if self.instance is not None and self.instance != PAPER_EXAMPLE and not Path(self.instance).exists():
            raise ConfigurationError(f"instance file {self.instance} does not exist")
        if self.timeline is not None and not Path(self.timeline).exists():
            raise ConfigurationError(f"timeline file {self.timeline} does not exist")
        object.__setattr__(self, "coupling", CouplingMode(self.coupling))

    def load_instance(self) -> Instance:
        if self.instance == PAPER_EXAMPLE:
            return paper_example_instance()
        if self.instance is not None:
            return instance_io.load(self.instance)
        assert self.generator is not None
        return generate(self.seed, self.generator)

    def load_timeline(self, n: int) -> GraphTimeline:
        if self.timeline is None:
            return GraphTimeline.static(n)
        return network_io.load(self.timeline)

    def config(self) -> dict[str, Any]:
        return to_jsonable({
            "name": self.name, "instance": str(self.instance) if self.instance is not None else None,
            "generator": asdict(self.generator) if self.generator is not None else None,
            "timeline": str(self.timeline) if self.timeline is not None else None,
            "mode": self.mode, "coupling": self.coupling.value, "limits": asdict(self.limits),
            "decomposition": self.decomposition.to_dict(), "seed": self.seed,
        })


def provenance(seed: int, config: Any) -> dict[str, Any]:
    return {"seed": seed, "config_hash": config_hash(config), "version": __version__}


def bench(spec: ExperimentSpec) -> dict[str, Any]:
    """Run one cell; wall_time is the only field that differs between identical runs."""
    start = time.perf_counter()
    inst = spec.load_instance()
    layout = VariableLayout.from_instance(inst)
    counts = constraint_counts(inst)
    summary: dict[str, Any] = {
        "name": spec.name, "mode": spec.mode, "n": inst.n, "m": inst.m,
        "variables": {"x": layout.nx, "y": layout.ny, "total": layout.nz},
        "constraints": counts,
        **provenance(spec.seed, spec.config()),
    }

    try:
        if spec.mode == "central":
            sched = solve_centralized(inst, spec.coupling, spec.limits)
            summary.update(objective=sched.objective, status=sched.meta["status"], gap=sched.meta["gap"],
                           bound=sched.meta["bound"], nodes=sched.meta["nodes"], targets=sched.targets)
        elif spec.mode == "dist":
            result = solve_distributed(inst, spec.load_timeline(inst.n), spec.decomposition, spec.limits)
            summary.update(objective=result.cost, status=result.schedule.meta["status"],
                           iterations=len(result.trace.records), converged=result.trace.converged,
                           total_rho=result.total_rho, coupling_violation=result.coupling_violation,
                           targets=result.schedule.targets)
    except ConstelError as e:
        logger.info(f"{spec.name}: {type(e).__name__}: {e}")
        summary.update(status=type(e).__name__, error=str(e))

    summary["wall_time"] = time.perf_counter() - start
    logger.info(f"{spec.name}: {summary.get('status', 'counted')}, {layout.nz} variables, "
                f"{counts['formulated']['total']} rows as formulated, {summary['wall_time']:.2f} s")
    return summary


def desk_suite(seed: int = 0) -> list[ExperimentSpec]:
    """The paper example and a small cell in both modes, the 20 x 30 five-day cell solved to a 1% gap within
    two minutes, the 30 x 50 cell solved under a ten-minute limit with its certified bound, and the
    50 x 50 cell counted only."""
    small = GeneratorConfig(n=3, m=4, theta_max=2, omega_max=2, days=2)
    return [
        ExperimentSpec("paper-example-central", PAPER_EXAMPLE, mode="central", seed=seed),
        ExperimentSpec("paper-example-dist", PAPER_EXAMPLE, mode="dist", seed=seed,
                       decomposition=DecompositionConfig(tf=2000, tol_alloc=1e-3)),
        ExperimentSpec("small-central-le", generator=small, mode="central", coupling=CouplingMode.INEQUALITY,
                       seed=seed),
        ExperimentSpec("small-dist", generator=small, mode="dist", seed=seed,
                       decomposition=DecompositionConfig(tf=1000)),
        ExperimentSpec("n20-m30-5days", generator=MID_SCALE, mode="central", coupling=CouplingMode.INEQUALITY,
                       limits=BnbLimits(time_max=120.0, gap_target=0.01), seed=seed),
        ExperimentSpec("n30-m50", generator=LARGE_SCALE, mode="central", coupling=CouplingMode.INEQUALITY,
                       limits=BnbLimits(time_max=600.0), seed=seed),
        ExperimentSpec("n50-m50", generator=GeneratorConfig(n=50, m=50, theta_max=4, omega_max=4),
                       mode="count", seed=seed),
    ]


SUITES = {"desk": desk_suite}


def run_suite(name: str, seed: int = 0) -> list[dict[str, Any]]:
    if name not in SUITES:
        raise ConfigurationError(f"unknown suite {name!r}, choose from {sorted(SUITES)}")
    cells = SUITES[name](seed)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(bench, cells))


def compare(inst: Instance, timeline: GraphTimeline, cfg: DecompositionConfig,
            limits: BnbLimits = BnbLimits(), tol: Tolerances = Tolerances()) -> dict[str, Any]:
    """Relaxed bound, centralized optimum and distributed recovered cost, all with at-most-once coupling."""
    layout = VariableLayout.from_instance(inst)
    relaxed = solve_lp(assemble_centralized(inst, layout, CouplingMode.INEQUALITY), tol)
    assert relaxed.status is LpStatus.OPTIMAL, "z = 0 is feasible for the at-most-once model"
    central = solve_centralized(inst, CouplingMode.INEQUALITY, limits, tol)
    dist = solve_distributed(inst, timeline, cfg, limits, tol)
    report = {
        "relaxed_bound": relaxed.objective,
        "centralized": central.objective,
        "centralized_status": central.meta["status"],
        "distributed": dist.cost,
        "distributed_relaxed": dist.trace.penalized_total,
        "gap": dist.cost - central.objective,
        "total_rho": dist.total_rho,
        "coupling_violation": dist.coupling_violation,
        "iterations": len(dist.trace.records),
        "integral_fraction": dist.census.fraction,
        "centralized_targets": central.targets,
        "distributed_targets": dist.schedule.targets,
    }
    logger.info(f"Comparison: relaxed {relaxed.objective:.10g} <= centralized {central.objective:.10g}, "
                f"distributed {dist.cost:.10g} (sum rho {dist.total_rho:.3g})")
    return report


def write_summary(summary: Any, path: Path | str) -> None:
    Path(path).write_text(json.dumps(to_jsonable(summary), indent=1))
    logger.info(f"Wrote {path}")
