import math

import numpy as np
import pytest

from constelsched import CouplingMode, VariableLayout
from constelsched.defs import BnbStatus
from constelsched.errors import ConfigurationError
from constelsched.milp import BnbLimits, relative_gap, solve_milp
from constelsched.model import LinearProgram, assemble_centralized
from constelsched.oracle import enumerate as enumerate_all

from conftest import tiny_instance


@pytest.fixture
def knapsack():
    """min -(x1 + x2)  s.t.  2 x1 + 2 x2 <= 3, binary: relaxation -1.5, integer optimum -1."""
    return LinearProgram([-1.0, -1.0], [[2.0, 2.0]], [3.0], np.zeros((0, 2)), [], [0.0, 0.0], [1.0, 1.0],
                         [True, True])


def test_knapsack(knapsack: LinearProgram):
    result = solve_milp(knapsack)
    assert result.status is BnbStatus.OPTIMAL
    assert result.objective == pytest.approx(-1.0)
    assert result.x.sum() == 1.0
    assert result.gap == 0.0
    assert result.incumbents


def test_node_limit_before_any_incumbent(knapsack: LinearProgram):
    result = solve_milp(knapsack, BnbLimits(node_max=1))
    assert result.status is BnbStatus.GAP_LIMIT
    assert result.x is None
    assert result.bound == pytest.approx(-1.5)
    assert math.isinf(result.gap)


def test_infeasible_integer_program():
    # 0.4 <= x <= 0.6 has no integer point
    lp = LinearProgram([1.0], [[1.0], [-1.0]], [0.6, -0.4], np.zeros((0, 1)), [], [0.0], [1.0], [True])
    result = solve_milp(lp)
    assert result.status is BnbStatus.INFEASIBLE
    assert result.x is None


def test_mixed_columns():
    # continuous y picks up what the integer x cannot
    lp = LinearProgram([-2.0, -1.0], [[1.0, 1.0]], [1.5], np.zeros((0, 2)), [], [0.0, 0.0], [1.0, 1.0],
                       [True, False])
    result = solve_milp(lp)
    assert result.x == pytest.approx([1.0, 0.5])
    assert result.objective == pytest.approx(-2.5)


def test_limits_validation():
    with pytest.raises(ConfigurationError):
        BnbLimits(node_max=0)
    with pytest.raises(ConfigurationError):
        BnbLimits(time_max=0.0)
    with pytest.raises(ConfigurationError):
        BnbLimits(gap_target=-0.1)


def test_relative_gap():
    assert relative_gap(-10.0, -11.0) == pytest.approx(0.1)
    assert relative_gap(0.5, 0.0) == pytest.approx(0.5)
    assert relative_gap(math.inf, 0.0) == math.inf


@pytest.mark.parametrize("seed", range(100))
@pytest.mark.parametrize("mode", [CouplingMode.INEQUALITY, CouplingMode.EQUALITY])
def test_matches_enumeration(seed: int, mode: CouplingMode):
    inst = tiny_instance(seed)
    layout = VariableLayout.from_instance(inst)
    result = solve_milp(assemble_centralized(inst, layout, mode))
    reference = enumerate_all(inst, mode)
    if not reference.feasible:
        assert result.status is BnbStatus.INFEASIBLE
        return
    assert result.status is BnbStatus.OPTIMAL
    assert result.objective == pytest.approx(reference.objective, abs=1e-9)
    assert any(np.array_equal(result.x, row) for row in reference.argmins)


def test_rounded_root_is_the_first_incumbent():
    # root relaxation (1, 0.2) or (0.2, 1); either rounds to a feasible point worth -1
    lp = LinearProgram([-1.0, -1.0], [[1.0, 1.0]], [1.2], np.zeros((0, 2)), [], [0.0, 0.0], [1.0, 1.0],
                       [True, True])
    result = solve_milp(lp)
    assert result.incumbents[0] == (1, pytest.approx(-1.0))
    assert result.objective == pytest.approx(-1.0)


@pytest.mark.parametrize("seed", range(30))
def test_incumbents_improve(seed: int):
    inst = tiny_instance(seed)
    result = solve_milp(assemble_centralized(inst, VariableLayout.from_instance(inst), CouplingMode.INEQUALITY))
    assert result.incumbents
    nodes = [k for k, _ in result.incumbents]
    values = [v for _, v in result.incumbents]
    assert nodes == sorted(nodes)
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] == result.objective
    assert result.bound <= result.objective + 1e-9
