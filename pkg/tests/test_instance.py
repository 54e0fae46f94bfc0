import json

import numpy as np
import pytest

from constelsched import GeneratorConfig, Instance, VariableLayout, Weights, generate, paper_example_instance
from constelsched.errors import ConfigurationError, SchemaError, ValidationError
from constelsched.instance import INSTANCE_FIELDS, load, save

from conftest import micro_instance

CFG = GeneratorConfig(n=3, m=4, theta_max=3, omega_max=2)


@pytest.fixture
def inst():
    return generate(7, CFG)


def test_generate_is_deterministic(inst: Instance):
    assert generate(7, CFG) == inst
    assert generate(8, CFG) != inst


def test_generated_times(inst: Instance):
    lo, hi = CFG.acquisition_range
    for i in range(inst.n):
        assert 1 <= inst.omega[i] <= CFG.omega_max
        for j in range(inst.m):
            assert 0 <= inst.theta[i, j] <= CFG.theta_max
            t = inst.t[i][j]
            assert len(t) == inst.theta[i, j]
            assert (np.diff(t) > 0).all()
            assert ((t >= lo) & (t <= hi + 1e-3)).all()
            assert len(inst.s[i][j]) == inst.omega[i]
    assert inst.gamma == 3 * CFG.horizon * CFG.m


def test_generator_config_errors():
    with pytest.raises(ConfigurationError):
        GeneratorConfig(n=0, m=1, theta_max=1, omega_max=1)
    with pytest.raises(ConfigurationError):
        GeneratorConfig(n=1, m=1, theta_max=1, omega_max=0)
    with pytest.raises(ConfigurationError):
        GeneratorConfig(n=1, m=1, theta_max=1, omega_max=1, weights=Weights(alpha=0.0))
    with pytest.raises(ConfigurationError):
        GeneratorConfig(n=1, m=1, theta_max=1, omega_max=1, window=(1.0, 0.5))
    with pytest.raises(ConfigurationError):
        GeneratorConfig(n=1, m=1, theta_max=1, omega_max=1, g11=100.0)


def test_example_instance_shape():
    inst = paper_example_instance()
    layout = VariableLayout.from_instance(inst)
    assert (inst.n, inst.m) == (2, 3)
    assert layout.nx == 8
    assert layout.ny == 9
    assert inst.theta[:, 2].tolist() == [0, 1]
    assert paper_example_instance() == inst


def test_layout_is_a_bijection(inst: Instance):
    layout = VariableLayout.from_instance(inst)
    assert sorted(layout.x_index.values()) == list(range(layout.nx))
    assert sorted(layout.y_index.values()) == list(range(layout.ny))
    assert layout.ny == sum(inst.m * int(w) for w in inst.omega)
    columns = np.concatenate([layout.agent_columns(i) for i in range(inst.n)])
    assert sorted(columns.tolist()) == list(range(layout.nz))
    for (i, j, k) in layout.x_index:
        assert layout.agent_columns(i)[layout.local_x(i, j, k)] == layout.z_x(i, j, k)
    for (i, j, r) in layout.y_index:
        assert layout.agent_columns(i)[layout.local_y(i, j, r)] == layout.z_y(i, j, r)


def test_json_round_trip(inst: Instance, tmp_path):
    path = tmp_path / "instance.json"
    save(inst, path, {"seed": 7})
    assert load(path) == inst
    assert json.loads(path.read_text())["seed"] == 7


@pytest.mark.parametrize("field", INSTANCE_FIELDS)
def test_missing_field(field: str):
    data = paper_example_instance().to_dict()
    del data[field]
    with pytest.raises(SchemaError) as e:
        Instance.from_dict(data)
    assert e.value.field == field


def test_schema_errors(tmp_path):
    data = paper_example_instance().to_dict()
    data["q"][0][1] = "much"
    with pytest.raises(SchemaError, match="q"):
        Instance.from_dict(data)
    data = paper_example_instance().to_dict()
    data["n"] = 2.5
    with pytest.raises(SchemaError, match="n"):
        Instance.from_dict(data)
    path = tmp_path / "broken.json"
    path.write_text("{ not json")
    with pytest.raises(SchemaError):
        load(path)


def test_validation_names_the_field():
    with pytest.raises(ValidationError, match="theta"):
        Instance(n=1, m=1, theta=[[1, 1]], omega=[1], t=[[[1.0]]], s=[[[2.0]]], p=[[[0.0]]], d=[[1.0]],
                 q=[[10.0]], q_max=[100.0], data_rate=100.0, alpha=1.0, beta=1.0, gamma=1.0, horizon=24.0)
    with pytest.raises(ValidationError, match="t\\[0\\]\\[0\\]"):
        micro_instance([[2]], [1], [[[2.0, 1.0]]], [[[3.0]]])
    with pytest.raises(ValidationError, match="s\\[0\\]\\[0\\]"):
        micro_instance([[1]], [1], [[[1.0]]], [[[30.0]]])
    with pytest.raises(ValidationError, match="DR"):
        micro_instance([[1]], [1], [[[1.0]]], [[[2.0]]], data_rate=0.0)
    with pytest.raises(ValidationError, match="gamma"):
        micro_instance([[1]], [1], [[[1.0]]], [[[2.0]]], gamma=-1.0)
    with pytest.raises(ValidationError, match="qM"):
        micro_instance([[1]], [1], [[[1.0]]], [[[2.0]]], q_max=[0.0])


def test_zero_gamma_is_allowed():
    inst = micro_instance([[1]], [1], [[[1.0]]], [[[2.0]]], gamma=0.0)
    assert inst.gamma == 0.0


def test_instance_is_immutable(inst: Instance):
    with pytest.raises(ValueError):
        inst.q[0, 0] = 1.0
    with pytest.raises(ValueError):
        inst.theta[0, 0] = 5
