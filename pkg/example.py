import logging

from constelsched import paper_example_instance
from constelsched.centralized import solve_centralized, validate
from constelsched.distributed import DecompositionConfig, solve_distributed
from constelsched.network import GraphTimeline


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="[%(levelname)-7s] [%(name)-18s %(lineno)4d] %(message)s")

    inst = paper_example_instance()
    print(inst)

    sched = solve_centralized(inst)
    print("\ncentralized:")
    print(sched)
    for a in sched.acquisitions:
        print(f"    target {a.target} acquired by satellite {a.satellite} at {a.time:.2f} h")
    for d in sched.downlinks:
        print(f"    target {d.target} downlinked by satellite {d.satellite} at {d.time:.2f} h")
    print(f"violations: {validate(inst, sched)}")

    result = solve_distributed(inst, GraphTimeline.static(inst.n), DecompositionConfig(tf=500))
    print("\ndistributed:")
    print(result.schedule)
    print(f"sum rho {result.total_rho:.3g}, coupling violation {result.coupling_violation:.3g}, "
          f"{len(result.trace.records)} iterations")


if __name__ == "__main__":
    main()
