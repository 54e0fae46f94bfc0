import json
import math
from dataclasses import replace

import numpy as np
import pytest

from constelsched import (CouplingMode, GeneratorConfig, Instance, VariableLayout, distributed, generate,
                          paper_example_instance)
from constelsched.centralized import solve_centralized
from constelsched.defs import COUPLING_TAGS, BnbStatus
from constelsched.distributed import (AgentProblem, DecompositionConfig, auto_zeta, balance_pair_multipliers,
                                      correct_allocation, exchange_and_update, init_allocations, initial_states,
                                      integrality_census, local_step, psi, recover_integer, run,
                                      solve_distributed, write_trace)
from constelsched.errors import ConfigurationError, ValidationError
from constelsched.lp import solve_lp
from constelsched.model import assemble_centralized, violations
from constelsched.network import GraphTimeline, generate_timeline
from constelsched.steps import Constant, Harmonic

from conftest import micro_instance, tiny_instance

SIGMA_HALF = np.array([0.5, 0.5])


def test_config_defaults():
    cfg = DecompositionConfig()
    assert cfg.steps == Harmonic(1.0, 10.0)
    d = cfg.to_dict()
    assert d["schedule"]["kind"] == "Harmonic"
    assert json.dumps(d)


def test_config_errors():
    for kwargs in [{"zeta": "tight"}, {"zeta": -0.1}, {"zeta": [0.1, -1.0]}, {"M": 0.0}, {"t0": 0.0},
                   {"tf": 0}, {"tol_alloc": -1.0}, {"schedule": Constant(0.1)},
                   {"allocation_floor": 1.0}, {"allocation_floor": -1e-3}]:
        with pytest.raises(ConfigurationError):
            DecompositionConfig(**kwargs)
    assert DecompositionConfig(zeta=[0.1, 0.2]).zeta == (0.1, 0.2)


def test_default_penalty(single: Instance):
    layout = VariableLayout.from_instance(single)
    # costs (-9, 2): 10 (1 + 9) 2
    assert DecompositionConfig().resolve_M(single, layout) == 200.0
    assert DecompositionConfig(M=3.0).resolve_M(single, layout) == 3.0


def test_auto_zeta_stays_below_one_half():
    inst = paper_example_instance()
    zeta = auto_zeta(inst, VariableLayout.from_instance(inst))
    assert zeta.shape == (2 * inst.m,)
    assert (zeta >= 0).all() and (zeta < 0.5).all()


def test_auto_zeta_single_agent(single: Instance):
    assert auto_zeta(single, VariableLayout.from_instance(single)).tolist() == [0.0, 0.0]


def test_init_allocations():
    inst = micro_instance([[1, 1]] * 3, [1, 1, 1], [[[1.0], [2.0]]] * 3, [[[3.0], [4.0]]] * 3)
    zeta = np.array([0.1, 0.0, 0.3, 0.7])
    sigma = init_allocations(inst, zeta)
    assert sigma.shape == (3, 4)
    assert sigma.sum(axis=0) == pytest.approx(1.0 - zeta, abs=1e-15)
    assert sigma[0] == pytest.approx((1.0 - zeta) / 3)
    with pytest.raises(ConfigurationError):
        init_allocations(inst, np.array([0.0, 1.0, 0.0, 0.0]))


def test_penalized_problem_columns(contested: Instance):
    layout = VariableLayout.from_instance(contested)
    problem = AgentProblem.build(contested, layout, 0)
    lp = problem.penalized(SIGMA_HALF, 5.0)
    assert lp.n_vars == problem.size + 1
    assert lp.c[-1] == 5.0
    assert not lp.integrality[-1]
    assert set(lp.tags_ub[-2:].tolist()) == set(COUPLING_TAGS)
    assert lp.A_ub[-2:, -1].toarray().ravel().tolist() == [-1.0, -1.0]
    assert lp.b_ub[-2:].tolist() == [0.5, 0.5]
    stage_one = problem.penalized(SIGMA_HALF, 5.0, cost=False)
    assert stage_one.c.tolist() == [0.0] * problem.size + [1.0]


def test_local_step_multipliers_match_centralized(single: Instance):
    """With one agent the penalty never binds: local multipliers are the coupling duals of the full model."""
    layout = VariableLayout.from_instance(single)
    state = local_step(single, layout, 0, SIGMA_HALF, DecompositionConfig())
    assert state.rho == pytest.approx(0.0, abs=1e-12)
    assert state.x_relaxed == pytest.approx([0.5, 0.5])
    assert state.cost == pytest.approx(-3.5)
    assert state.lam.sum() == pytest.approx(7.0)
    assert (state.lam >= 0).all()

    full = assemble_centralized(single, layout, CouplingMode.INEQUALITY)
    coupling = np.isin(full.tags_ub, list(COUPLING_TAGS))
    b_ub = full.b_ub.copy()
    b_ub[coupling] = 0.5
    sol = solve_lp(replace(full, b_ub=b_ub))
    assert sol.objective == pytest.approx(state.cost)
    assert sol.duals_ub[coupling].sum() == pytest.approx(state.lam.sum())


def test_penalty_absorbs_a_negative_allocation(single: Instance):
    layout = VariableLayout.from_instance(single)
    state = local_step(single, layout, 0, np.array([-0.25, 0.5]), DecompositionConfig(M=1.0))
    # with M below the reward the agent buys its way past the allocation
    assert state.x_relaxed == pytest.approx([1.0, 1.0])
    assert state.rho == pytest.approx(1.25)
    assert state.penalized == pytest.approx(-7.0 + 1.25)


def test_exchange_conserves_the_allocation_sum():
    rng = np.random.default_rng(1)
    sigma, lam = rng.random((4, 6)), rng.random((4, 6))
    frame = GraphTimeline.static(4).frame(0)
    updated = exchange_and_update(sigma, lam, frame, 3, DecompositionConfig(allocation_floor=None))
    assert updated.sum(axis=0) == pytest.approx(sigma.sum(axis=0), abs=1e-12)
    alpha = DecompositionConfig().steps(3)
    assert updated[0] == pytest.approx(sigma[0] + alpha * (3 * lam[0] - lam[1:].sum(axis=0)))
    assert np.array_equal(exchange_and_update(sigma, lam, np.zeros((4, 4)), 0, DecompositionConfig()), sigma)


def test_psi(single: Instance):
    layout = VariableLayout.from_instance(single)
    assert psi(single, layout, 0, SIGMA_HALF) == pytest.approx(-3.5)
    assert psi(single, layout, 0, np.array([1.0, 1.0])) == pytest.approx(-7.0)
    assert psi(single, layout, 0, np.array([-0.1, 1.0])) == math.inf


def test_correct_allocation(single: Instance):
    layout = VariableLayout.from_instance(single)
    x, tau = correct_allocation(single, layout, 0, np.array([-0.2, 0.3]))
    assert tau == pytest.approx(0.25)
    assert x == pytest.approx([0.05, 0.05])
    _, tau = correct_allocation(single, layout, 0, SIGMA_HALF)
    assert tau == pytest.approx(0.0, abs=1e-12)


def test_recover_integer(contested: Instance):
    layout = VariableLayout.from_instance(contested)
    winner = recover_integer(contested, layout, 0, np.array([1.0, 1.0]))
    assert winner.x.tolist() == [1.0, 1.0]
    assert winner.rho == 0.0
    assert winner.cost == pytest.approx(-0.5)
    assert winner.status is BnbStatus.OPTIMAL
    loser = recover_integer(contested, layout, 1, np.array([0.0, 0.0]))
    assert loser.x.tolist() == [0.0, 0.0]
    assert loser.cost == 0.0
    # a negative allocation cannot be met by any point; the least overshoot is x = 0
    short = recover_integer(contested, layout, 1, np.array([-0.3, 0.0]))
    assert short.x.tolist() == [0.0, 0.0]
    assert short.rho == pytest.approx(0.3)


def test_integrality_census():
    census = integrality_census([np.array([0.0, 1.0]), np.array([0.5, 1.0]), np.array([1.0 - 1e-9])])
    assert census.fraction == pytest.approx(2 / 3)
    assert census.distances == pytest.approx([0.0, 0.5, 1e-9])
    assert integrality_census([]).fraction == 1.0


def test_single_agent_matches_centralized(single: Instance):
    result = solve_distributed(single, GraphTimeline.static(1), DecompositionConfig())
    assert result.trace.converged
    assert len(result.trace.records) == 1
    assert result.cost == pytest.approx(solve_centralized(single).objective)
    assert result.total_rho == 0.0
    assert result.census.fraction == 1.0
    assert result.schedule.meta["mode"] == "le"


def test_run_rejects_bad_timelines(contested: Instance):
    with pytest.raises(ValidationError):
        run(contested, GraphTimeline.static(3), DecompositionConfig(tf=5))
    with pytest.raises(ValidationError):
        run(contested, GraphTimeline(2, np.zeros((1, 2, 2)), 1), DecompositionConfig(tf=5))


def _relaxed(inst: Instance) -> float:
    return solve_lp(assemble_centralized(inst, VariableLayout.from_instance(inst), CouplingMode.INEQUALITY)).objective


def _sum_psi(inst: Instance, sigma: np.ndarray) -> float:
    layout = VariableLayout.from_instance(inst)
    return sum(psi(inst, layout, i, s) for i, s in enumerate(sigma))


def _check_sandwich(inst: Instance, result):
    layout = VariableLayout.from_instance(inst)
    central = solve_centralized(inst, CouplingMode.INEQUALITY)
    assert _relaxed(inst) <= central.objective + 1e-9
    assert violations(inst, result.schedule.to_vector(layout), layout=layout, coupling=False) == []
    if result.total_rho == 0.0:
        assert result.coupling_violation <= 1e-9
        assert central.objective <= result.cost + 1e-9
    else:
        assert result.coupling_violation <= result.total_rho + 1e-9


def _separated(seed: int) -> tuple[Instance, np.ndarray]:
    """Two satellites, every target worth at least 0.375 more to its winner; all local rows slack."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 4))
    winners = rng.integers(0, 2, m)
    t = [[[0.0] for _ in range(m)] for _ in range(2)]
    s = [[[0.0] for _ in range(m)] for _ in range(2)]
    for i in range(2):
        for j in range(m):
            a = rng.uniform(0.5, 1.0) if winners[j] == i else rng.uniform(2.5, 3.0)
            t[i][j], s[i][j] = [a], [a + 0.5]
    inst = micro_instance(np.ones((2, m), dtype=int), [1, 1], t, s, alpha=0.125, beta=0.125, gamma=1.0)
    return inst, winners


def test_contested_converges(contested: Instance):
    seen = []
    result = solve_distributed(contested, GraphTimeline.static(2), DecompositionConfig(tf=1000),
                               on_iteration=seen.append)
    trace = result.trace
    assert trace.converged
    assert len(seen) == len(trace.records) < 1000
    assert max(r.residual for r in trace.records) <= 1e-9
    # satellite 1 hands the target over and keeps only the floor
    assert trace.sigma[1] == pytest.approx([1e-6, 1e-6], abs=1e-12)
    assert trace.penalized_total == pytest.approx(-0.5, abs=1e-5)
    assert _sum_psi(contested, trace.sigma) == pytest.approx(_relaxed(contested), abs=1e-3)
    assert result.total_rho == 0.0
    assert result.cost == pytest.approx(-0.5)
    _check_sandwich(contested, result)


def test_paper_example_reaches_the_relaxed_optimum():
    inst = paper_example_instance()
    result = solve_distributed(inst, GraphTimeline.static(2), DecompositionConfig(tf=2000, tol_alloc=1e-3))
    trace = result.trace
    assert trace.converged
    assert max(r.residual for r in trace.records) <= 1e-9
    assert (np.array([r.rho for r in trace.records]) <= 1e-9).all()
    assert _sum_psi(inst, trace.sigma) == pytest.approx(_relaxed(inst), abs=1e-3)
    _check_sandwich(inst, result)


@pytest.mark.parametrize("seed", range(10))
def test_separated_costs_reach_the_relaxed_optimum(seed: int):
    inst, winners = _separated(seed)
    result = solve_distributed(inst, GraphTimeline.static(2), DecompositionConfig(tf=2000))
    trace = result.trace
    assert trace.converged
    for j, w in enumerate(winners):
        assert trace.sigma[1 - w, [j, inst.m + j]] == pytest.approx([1e-6, 1e-6], abs=1e-12)
    assert _sum_psi(inst, trace.sigma) == pytest.approx(_relaxed(inst), abs=1e-3)
    assert result.cost == pytest.approx(solve_centralized(inst, CouplingMode.INEQUALITY).objective, abs=1e-9)
    _check_sandwich(inst, result)


@pytest.mark.parametrize("seed", range(10))
def test_tiny_instances_keep_allocations_admissible(seed: int):
    inst = tiny_instance(seed)
    result = solve_distributed(inst, GraphTimeline.static(inst.n), DecompositionConfig(tf=300))
    trace = result.trace
    for record in trace.records:
        assert record.residual <= 1e-9
        assert (record.sigma >= 0).all()
        assert (record.rho <= 1e-9).all()
    assert (trace.sigma >= 0).all()
    total = _sum_psi(inst, trace.sigma)
    assert math.isfinite(total)
    assert total >= _relaxed(inst) - 1e-9
    _check_sandwich(inst, result)


@pytest.mark.parametrize("seed", range(6))
def test_recovered_schedules_meet_local_rows(seed: int):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 4)), int(rng.integers(1, 4))
    inst = generate(seed, GeneratorConfig(n=n, m=m, theta_max=2, omega_max=2, days=1))
    result = solve_distributed(inst, generate_timeline(seed, n, 6, delta=2), DecompositionConfig(tf=100))
    _check_sandwich(inst, result)


def test_psi_is_convex_along_segments():
    inst = paper_example_instance()
    layout = VariableLayout.from_instance(inst)
    rng = np.random.default_rng(0)
    for i in range(inst.n):
        a, b = rng.random(2 * inst.m), rng.random(2 * inst.m)
        values = np.array([psi(inst, layout, i, (1 - h) * a + h * b) for h in np.linspace(0.0, 1.0, 101)])
        assert np.isfinite(values).all()
        assert (values[1:-1] <= (values[:-2] + values[2:]) / 2 + 1e-8).all()


@pytest.mark.slow
def test_allocations_stay_bounded_over_long_runs():
    inst = paper_example_instance()
    trace = run(inst, generate_timeline(0, 2, 10, delta=2), DecompositionConfig(tf=10_000, tol_alloc=0.0))
    assert len(trace.records) == 10_000
    sigma = np.array([r.sigma for r in trace.records])
    assert (sigma >= 0).all()
    assert (sigma <= 1.0 + 1e-9).all()


def test_exchange_keeps_allocations_above_the_floor():
    sigma, lam = np.array([[0.9, 0.5], [0.1, 0.5]]), np.array([[5.0, 0.0], [0.0, 0.0]])
    cfg = DecompositionConfig(allocation_floor=0.01)
    updated = exchange_and_update(sigma, lam, GraphTimeline.static(2).frame(0), 0, cfg)
    # alpha 0.1 would move 0.5, agent 1 only holds 0.09 above the floor
    assert updated == pytest.approx(np.array([[0.99, 0.5], [0.01, 0.5]]), abs=1e-15)

    # the spare is shared out over the neighbours
    sigma = np.array([[0.35, 0.35], [0.35, 0.35], [0.3, 0.3]])
    lam = np.array([[10.0, 10.0], [10.0, 10.0], [0.0, 0.0]])
    updated = exchange_and_update(sigma, lam, GraphTimeline.static(3).frame(0), 0,
                                  DecompositionConfig(allocation_floor=0.0))
    assert updated == pytest.approx(np.array([[0.5, 0.5], [0.5, 0.5], [0.0, 0.0]]), abs=1e-15)
    assert updated.sum(axis=0) == pytest.approx(sigma.sum(axis=0), abs=1e-15)


def test_balance_pair_multipliers():
    sigma = np.array([0.5, 0.2, 0.5, 0.3])
    lam = balance_pair_multipliers(sigma, np.array([0.4, 1.0, 0.0, 2.0]))
    assert lam.tolist() == [0.2, 1.0, 0.2, 2.0]


def test_recovery_slack():
    inst = paper_example_instance()
    assert DecompositionConfig().recovery_slack(inst) == pytest.approx(2e-6)
    assert DecompositionConfig(allocation_floor=None).recovery_slack(inst) == 0.0


def test_correction_starts_from_the_closest_local_point(single: Instance):
    layout = VariableLayout.from_instance(single)
    sigma = init_allocations(single, np.zeros(2))
    plain = initial_states(single, layout, sigma, correction=False)
    corrected = initial_states(single, layout, sigma, correction=True)
    assert plain[0].x_relaxed.tolist() == [0.0, 0.0]
    assert plain[0].cost == 0.0
    assert corrected[0].x_relaxed == pytest.approx([1.0, 1.0])
    assert corrected[0].cost == pytest.approx(-7.0)
    trace = run(single, GraphTimeline.static(1), DecompositionConfig(correction=True, tf=1))
    assert trace.initial[0].cost == pytest.approx(-7.0)


def test_recovery_uses_the_allocations_after_the_last_update(contested: Instance, monkeypatch):
    cfg = DecompositionConfig(tf=5)
    trace = run(contested, GraphTimeline.static(2), cfg)
    last = trace.records[-1]
    assert not trace.converged
    expected = exchange_and_update(last.sigma, last.lam, GraphTimeline.static(2).frame(last.t), last.t, cfg)
    assert np.array_equal(trace.sigma, expected)
    assert not np.array_equal(trace.sigma, last.sigma)

    seen = []
    original = distributed.recover_integer

    def recording(inst, layout, i, sigma, *args):
        seen.append(np.array(sigma))
        return original(inst, layout, i, sigma, *args)

    monkeypatch.setattr(distributed, "recover_integer", recording)
    solve_distributed(contested, GraphTimeline.static(2), cfg)
    assert np.array_equal(np.array(seen), expected)


def test_parallel_run_matches_serial(contested: Instance, monkeypatch):
    cfg = DecompositionConfig(M=1.0, tf=50)
    serial = run(contested, GraphTimeline.static(2), cfg)
    monkeypatch.setenv("CONSTEL_THREADS", "2")
    parallel = run(contested, GraphTimeline.static(2), cfg)
    assert np.array_equal(serial.sigma, parallel.sigma)


def test_write_trace(contested: Instance, tmp_path):
    trace = run(contested, GraphTimeline.static(2), DecompositionConfig(M=1.0, tf=20))
    path = tmp_path / "trace.jsonl"
    write_trace(trace, path, {"seed": 4})
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == len(trace.records)
    assert [line["t"] for line in lines] == list(range(len(lines)))
    first = lines[0]
    assert set(first) == {"t", "sigma", "lambda", "rho", "frame", "sumResidual", "penalized", "seed"}
    assert np.array(first["sigma"]).shape == (2, 2)


@pytest.mark.parametrize("seed", range(20))
def test_allocations_are_conserved_on_random_timelines(seed: int):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    inst = generate(seed, GeneratorConfig(n=n, m=m, theta_max=2, omega_max=2, days=1))
    tl = generate_timeline(seed, n, 10, delta=2)
    trace = run(inst, tl, DecompositionConfig(zeta="auto", tf=25))
    budget = 1.0 - trace.zeta
    for record in trace.records:
        assert np.abs(record.sigma.sum(axis=0) - budget).max() <= 1e-9
        assert record.residual <= 1e-9
