import numpy as np
import pytest

from resguard.plant import (
    Column,
    CsvParseError,
    Dataset,
    InstabilityError,
    Nonlinearity,
    PlantConfig,
    Role,
    desk_config,
    load_csv,
    paper_scale_config,
    save_csv,
    simulate,
    split_sequential,
)


def test_zero_coupling_fixed_point():
    cfg = PlantConfig(
        n_sensors=2,
        coupling=np.zeros((2, 2)),
        noise_std=0.0,
        nonlinearity=Nonlinearity.NONE,
        setpoints=np.array([1.0, 1.0]),
        seed=0,
    )
    data = simulate(cfg, 10)
    assert data.n_rows == 10
    assert np.allclose(data.values[2:, :2], 1.0)


def test_simulate_deterministic():
    cfg = desk_config(seed=123)
    a = simulate(cfg, 60)
    b = simulate(cfg, 60)
    assert a.equals(b)


def test_simulate_different_seed_differs():
    a = simulate(desk_config(seed=1), 40)
    b = simulate(desk_config(seed=2), 40)
    assert not np.array_equal(a.values, b.values)


def test_instability_error():
    # Radius check is skipped off the pure-linear path, so an expanding map
    # must be caught at runtime.
    cfg = PlantConfig(
        n_sensors=2,
        coupling=2.0 * np.eye(2),
        noise_std=1.0,
        nonlinearity=Nonlinearity.TANH,
        nonlinear_channels=(),
        seed=0,
    )
    with pytest.raises(InstabilityError):
        simulate(cfg, 200)


def test_unstable_coupling_rejected_upfront():
    with pytest.raises(ValueError, match="spectral radius"):
        PlantConfig(n_sensors=2, coupling=1.5 * np.eye(2), nonlinearity=Nonlinearity.NONE)


def test_simulate_requires_two_steps():
    with pytest.raises(ValueError):
        simulate(desk_config(), 1)


def test_dataset_invariants():
    cols = (Column("a", Role.CRITICAL), Column("b", Role.CONTROL))
    with pytest.raises(ValueError):
        Dataset(cols, np.array([[1.0, 2.0]]))  # one row
    with pytest.raises(ValueError):
        Dataset(cols, np.array([[1.0, np.nan], [3.0, 4.0]]))
    with pytest.raises(ValueError):
        Dataset((Column("a", Role.CRITICAL), Column("a", Role.CONTROL)), np.ones((2, 2)))
    data = Dataset(cols, np.ones((3, 2)))
    assert data.critical_columns() == (0,)
    assert data.control_columns() == (1,)
    assert data.sensor_columns() == (0,)


def test_desk_and_paper_templates():
    desk = desk_config()
    assert desk.n_sensors == 8 and desk.n_controls == 2
    assert len(desk.critical_sensors) == 2
    paper = paper_scale_config()
    assert paper.n_sensors == 41 and paper.n_controls == 12
    assert len(paper.critical_sensors) == 5
    assert paper.timestep == 36.0


def test_csv_round_trip(tmp_path):
    data = simulate(desk_config(seed=5), 30)
    csv_path = tmp_path / "d.csv"
    roles_path = tmp_path / "d.roles.json"
    save_csv(data, csv_path, roles_path)
    loaded = load_csv(csv_path, roles_path)
    assert loaded.equals(data)


def test_load_csv_small(tmp_path):
    (tmp_path / "t.csv").write_text("a,b\n1,2\n3,4\n5,6\n")
    (tmp_path / "t.json").write_text(
        '{"columns": [{"name": "a", "role": "critical"}, {"name": "b", "role": "control"}],'
        ' "timestep_seconds": 2.0}'
    )
    data = load_csv(tmp_path / "t.csv", tmp_path / "t.json")
    assert data.n_rows == 3 and data.n_columns == 2
    assert data.timestep == 2.0


@pytest.mark.parametrize(
    "body,fragment",
    [
        ("a,b\n1,\n3,4\n", "blank cell"),
        ("a,b\n1,x\n3,4\n", "non-numeric"),
        ("a,b\n1\n3,4\n", "cells"),
    ],
)
def test_load_csv_parse_errors(tmp_path, body, fragment):
    (tmp_path / "t.csv").write_text(body)
    (tmp_path / "t.json").write_text(
        '{"columns": [{"name": "a", "role": "critical"}, {"name": "b", "role": "non_critical"}]}'
    )
    with pytest.raises(CsvParseError, match=fragment) as exc:
        load_csv(tmp_path / "t.csv", tmp_path / "t.json")
    assert exc.value.row == 0


def test_load_csv_unknown_role(tmp_path):
    (tmp_path / "t.csv").write_text("a\n1\n2\n")
    (tmp_path / "t.json").write_text('{"columns": [{"name": "a", "role": "bogus"}]}')
    with pytest.raises(CsvParseError, match="unknown role"):
        load_csv(tmp_path / "t.csv", tmp_path / "t.json")


def test_split_sequential_examples():
    data = simulate(desk_config(seed=0), 10)
    train, test = split_sequential(data, 0.8)
    assert train.n_rows == 8 and test.n_rows == 2
    assert np.array_equal(np.vstack([train.values, test.values]), data.values)

    data4 = Dataset(data.columns, data.values[:4])
    a, b = split_sequential(data4, 0.5)
    assert a.n_rows == 2 and b.n_rows == 2

    data3 = Dataset(data.columns, data.values[:3])
    with pytest.raises(ValueError):
        split_sequential(data3, 0.95)
    with pytest.raises(ValueError):
        split_sequential(data4, 1.2)
