import argparse
import json
import logging
import shutil
import sys
from contextlib import contextmanager, nullcontext
from dataclasses import asdict
from pathlib import Path
from typing import Iterator

import numpy as np

from .. import centralized, experiment, instance as instance_io, lpdump, network, oracle
from ..defs import CouplingMode
from ..distributed import DecompositionConfig, IterationRecord, solve_distributed, write_trace
from ..errors import (ConfigurationError, ConstelError, InfeasibleError, InputError, IterationError, NumericalError,
                      OracleRefusal, SchemaError, SolverLimitError, ValidationError)
from ..instance import GeneratorConfig, VariableLayout, generate, paper_example_instance
from ..milp import BnbLimits
from ..model import assemble_centralized
from ..network import GraphTimeline, generate_timeline

logger = logging.getLogger(__name__)

VERBOSE_FORMAT = "[%(levelname)-7s] [%(name)-18s %(lineno)4d] %(message)s"

EXIT_OTHER = 1
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4
EXIT_REFUSAL = 5

EXIT_CODES: list[tuple[type[Exception], int]] = [
    (OracleRefusal, EXIT_REFUSAL),
    (InfeasibleError, EXIT_INFEASIBLE),
    (NumericalError, EXIT_NUMERICAL),
    (IterationError, EXIT_NUMERICAL),
    (SolverLimitError, EXIT_NUMERICAL),
    (ConfigurationError, EXIT_INPUT),
    (ValidationError, EXIT_INPUT),
    (SchemaError, EXIT_INPUT),
    (InputError, EXIT_INPUT),
]

COUPLING = {"eq": CouplingMode.EQUALITY, "le": CouplingMode.INEQUALITY}


def exit_code(e: Exception) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(e, cls):
            return code
    return EXIT_OTHER


@contextmanager
def staged(target: Path, directory: bool = False) -> Iterator[Path]:
    """Write into a sibling temporary path and move it into place only on success."""
    tmp = target.with_name(f".{target.name}.partial")
    if directory:
        shutil.rmtree(tmp, ignore_errors=True)
        tmp.mkdir(parents=True)
    else:
        tmp.parent.mkdir(parents=True, exist_ok=True)
    try:
        yield tmp
    except BaseException:
        if tmp.is_dir():
            shutil.rmtree(tmp, ignore_errors=True)
        else:
            tmp.unlink(missing_ok=True)
        raise
    if directory and target.exists():
        shutil.rmtree(target)
    tmp.replace(target)


def _limits(args) -> BnbLimits:
    return BnbLimits(node_max=args.node_max, time_max=args.time_max, gap_target=args.gap)


def _decomposition(args) -> DecompositionConfig:
    zeta: float | str = args.zeta if args.zeta == "auto" else float(args.zeta)
    floor = None if args.allocation_floor < 0 else args.allocation_floor
    return DecompositionConfig(zeta=zeta, M=args.M, t0=args.t0, tf=args.tf, tol_alloc=args.tol_alloc,
                               correction=args.correction, allocation_floor=floor)


def cmd_gen(args) -> None:
    if args.paper_example:
        inst = paper_example_instance()
        config: dict = {"paper_example": True}
    else:
        cfg = GeneratorConfig(n=args.n, m=args.m, theta_max=args.theta_max, omega_max=args.omega_max,
                              days=args.days)
        inst = generate(args.seed, cfg)
        config = {"generator": asdict(cfg)}
    with staged(args.out) as tmp:
        instance_io.save(inst, tmp, experiment.provenance(args.seed, config))


def cmd_net(args) -> None:
    tl = generate_timeline(args.seed, args.n, args.frames, args.delta)
    config = {"n": args.n, "frames": args.frames, "delta": args.delta}
    with staged(args.out) as tmp:
        network.save(tl, tmp, experiment.provenance(args.seed, config))


def cmd_solve(args) -> None:
    inst = instance_io.load(args.instance)
    config: dict = {"instance": str(args.instance), "mode": args.mode, "coupling": args.coupling,
                    "limits": asdict(_limits(args))}
    if args.mode == "dist":
        cfg = _decomposition(args)
        config["decomposition"] = cfg.to_dict()
    prov = experiment.provenance(args.seed, config)

    # every output is staged and only moved into place once the solve succeeded
    dump_target = staged(args.dump_lp) if args.dump_lp is not None else nullcontext()
    with staged(args.out, directory=True) as out, dump_target as dump_tmp:
        if dump_tmp is not None:
            mode = COUPLING[args.coupling] if args.mode == "central" else CouplingMode.INEQUALITY
            lpdump.write_lp(assemble_centralized(inst, VariableLayout.from_instance(inst), mode), dump_tmp,
                            name=args.instance.stem, comments=[f"{k}: {v}" for k, v in prov.items()])
        if args.mode == "central":
            sched = centralized.solve_centralized(inst, COUPLING[args.coupling], _limits(args))
            centralized.report(sched, inst, out, prov)
            print(sched)
            return
        _solve_distributed(args, inst, cfg, prov, out)


def _solve_distributed(args, inst, cfg: DecompositionConfig, prov: dict, out: Path) -> None:
    tl = network.load(args.net) if args.net is not None else GraphTimeline.static(inst.n)

    def progress(record: IterationRecord) -> None:
        logger.info(f"t={record.t}: sum residual {record.residual:.3g}, "
                    f"max lambda {np.max(record.lam, initial=0.0):.6g}")

    trace_target = staged(args.trace) if args.trace is not None else nullcontext()
    with trace_target as trace_tmp:
        result = solve_distributed(inst, tl, cfg, _limits(args), on_iteration=progress if args.progress else None)
        if trace_tmp is not None:
            write_trace(result.trace, trace_tmp, prov)
        centralized.report(result.schedule, inst, out, prov)
    print(result.schedule)


def cmd_oracle(args) -> None:
    inst = instance_io.load(args.instance)
    result = oracle.enumerate(inst, COUPLING[args.coupling])
    print(result)
    if args.out is not None:
        summary = {"objective": result.objective if result.feasible else None,
                   "argmins": result.argmins, "feasible_count": result.feasible_count,
                   "total_count": result.total_count,
                   **experiment.provenance(args.seed, {"instance": str(args.instance), "coupling": args.coupling})}
        with staged(args.out) as tmp:
            experiment.write_summary(summary, tmp)
    if not result.feasible:
        raise InfeasibleError(f"no feasible assignment among {result.total_count}")


def cmd_validate(args) -> None:
    inst = instance_io.load(args.instance)
    sched = centralized.read_report(args.schedule)
    mode = COUPLING[args.coupling] if args.coupling is not None else None
    found = centralized.validate(inst, sched, mode)
    for v in found:
        print(v)
    if found:
        raise ValidationError(f"{len(found)} violated constraints")
    print(f"{sched}: all constraints hold")


def cmd_report(args) -> None:
    inst = instance_io.load(args.instance)
    sched = centralized.read_report(args.schedule)
    with staged(args.out, directory=True) as out:
        centralized.report(sched, inst, out, experiment.provenance(args.seed, {"schedule": str(args.schedule)}))


def cmd_bench(args) -> None:
    if args.suite is not None:
        summary: object = experiment.run_suite(args.suite, args.seed)
    else:
        spec = experiment.ExperimentSpec(args.instance.stem, args.instance, mode=args.mode,
                                         coupling=COUPLING[args.coupling], limits=_limits(args), seed=args.seed)
        summary = experiment.bench(spec)
    if args.out is not None:
        with staged(args.out) as tmp:
            experiment.write_summary(summary, tmp)
    else:
        print(json.dumps(summary, indent=1, default=str))


def cmd_compare(args) -> None:
    inst = instance_io.load(args.instance)
    tl = network.load(args.net) if args.net is not None else GraphTimeline.static(inst.n)
    cfg = _decomposition(args)
    report = experiment.compare(inst, tl, cfg, _limits(args))
    report.update(experiment.provenance(args.seed, {"instance": str(args.instance), "decomposition": cfg.to_dict()}))
    if args.out is not None:
        with staged(args.out) as tmp:
            experiment.write_summary(report, tmp)
    else:
        print(json.dumps(report, indent=1))


def _add_limits(p: argparse.ArgumentParser) -> None:
    p.add_argument("--node-max", type=int, default=BnbLimits.node_max)
    p.add_argument("--time-max", type=float, default=BnbLimits.time_max, help="seconds")
    p.add_argument("--gap", type=float, default=BnbLimits.gap_target, help="relative gap target")


def _add_decomposition(p: argparse.ArgumentParser) -> None:
    p.add_argument("--net", type=Path, help="timeline JSON (default: static complete graph)")
    p.add_argument("--zeta", default="0", help="tightening, a number or 'auto'")
    p.add_argument("--M", type=float, default=None, help="penalty constant (default 10 (1 + max|c|) 2m)")
    p.add_argument("--t0", type=float, default=DecompositionConfig.t0)
    p.add_argument("--tf", type=int, default=DecompositionConfig.tf)
    p.add_argument("--tol-alloc", type=float, default=DecompositionConfig.tol_alloc)
    p.add_argument("--correction", action="store_true",
                   help="start from the relaxed local points closest to the initial allocations")
    p.add_argument("--allocation-floor", type=float, default=DecompositionConfig.allocation_floor,
                   help="least allocation an agent keeps when giving to neighbours; negative for unlimited transfers")


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="constel", description="Earth-observation constellation scheduling")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an instance")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--theta-max", type=int, default=2)
    p.add_argument("--omega-max", type=int, default=2)
    p.add_argument("--days", type=int, default=3)
    p.add_argument("--paper-example", action="store_true", help="the two-satellite, three-target example")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("net", help="generate a jointly connected communication timeline")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--delta", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_net)

    p = sub.add_parser("solve", help="solve an instance centrally or distributedly")
    p.add_argument("--in", dest="instance", type=Path, required=True)
    p.add_argument("--mode", choices=["central", "dist"], default="central")
    p.add_argument("--coupling", choices=sorted(COUPLING), default="eq")
    p.add_argument("--dump-lp", type=Path)
    p.add_argument("--trace", type=Path, help="JSONL trace of the distributed run")
    p.add_argument("--progress", action="store_true", help="log every distributed iteration")
    p.add_argument("--out", type=Path, required=True)
    _add_limits(p)
    _add_decomposition(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", help="exhaustive search of a tiny instance")
    p.add_argument("--in", dest="instance", type=Path, required=True)
    p.add_argument("--coupling", choices=sorted(COUPLING), default="le")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("validate", help="check a schedule report against its instance")
    p.add_argument("--in", dest="instance", type=Path, required=True)
    p.add_argument("--schedule", type=Path, required=True, help="report directory")
    p.add_argument("--coupling", choices=sorted(COUPLING))
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="rewrite the report of a schedule")
    p.add_argument("--in", dest="instance", type=Path, required=True)
    p.add_argument("--schedule", type=Path, required=True, help="report directory")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bench", help="count, solve and time one instance or a suite")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--suite", choices=sorted(experiment.SUITES))
    group.add_argument("--in", dest="instance", type=Path)
    p.add_argument("--mode", choices=experiment.MODES, default="central")
    p.add_argument("--coupling", choices=sorted(COUPLING), default="eq")
    p.add_argument("--out", type=Path)
    _add_limits(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="relaxed bound, centralized optimum and distributed cost")
    p.add_argument("--in", dest="instance", type=Path, required=True)
    p.add_argument("--out", type=Path)
    _add_limits(p)
    _add_decomposition(p)
    p.set_defaults(func=cmd_compare)

    # accepted after the subcommand too; the top-level value stays when it is not given there
    for p in sub.choices.values():
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.DEBUG, format=VERBOSE_FORMAT)
    else:
        logging.basicConfig(level=logging.INFO, format="%(message)s")

    try:
        args.func(args)
    except ConstelError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return exit_code(e)
    except (OSError, IndexError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_OTHER
    return 0


if __name__ == "__main__":
    sys.exit(main())
