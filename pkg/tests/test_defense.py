import numpy as np
import pytest

from _helpers import constant_bank, random_linear_setup
from resguard.attack import AttackInstance
from resguard.defense import (
    DefenseConfig,
    ImpactReport,
    impact,
    resilient_thresholds,
    total_false_alarms,
)
from resguard.detector import (
    ThresholdConfig,
    alarms,
    calibrate_baseline,
    fp_curve,
    train_bank,
)
from resguard.oracle import oracle_attack_enumerate
from resguard.plant import Column, Dataset, Role, desk_config, simulate


def _rows_dataset(rows):
    rows = np.asarray(rows, dtype=float)
    cols = tuple(Column(f"s{i}", Role.NON_CRITICAL) for i in range(rows.shape[1]))
    return Dataset(cols, rows)


def test_impact_zero_budget():
    bank, tau = constant_bank(3, (0, 1), values=(0.0, 0.0), taus=(5.0, 5.0))
    inst = AttackInstance(
        y=np.zeros(3), sensor_columns=(0, 1, 2), critical=(0, 1), budget=0
    )
    report = impact(bank, tau, np.zeros((3, 3)), inst)
    assert report.per_sensor == {0: 0.0, 1: 0.0}
    assert report.worst[1] == 0.0


def test_impact_single_row_detector_free_target():
    # The only detector watches sensor 1; target 0 is limited purely by eta.
    bank, tau = constant_bank(3, (1,), values=(0.0,), taus=(50.0,))
    inst = AttackInstance(
        y=np.zeros(3), sensor_columns=(0, 1, 2), critical=(0,), budget=1, eta=2.0
    )
    report = impact(bank, tau, np.zeros((1, 3)), inst)
    assert report.per_sensor[0] == pytest.approx(2.0, abs=1e-7)
    assert report.horizon == 1


def test_impact_matches_per_row_oracle():
    rng = np.random.default_rng(88)
    bank, tau, inst = random_linear_setup(rng, d=5, budget=2, n_critical=2)
    rows = np.vstack([inst.y + rng.normal(0.0, 0.2, inst.y.size) for _ in range(10)])
    report = impact(bank, tau, rows, inst)
    for s in inst.critical:
        per_row = []
        for t in range(rows.shape[0]):
            row_inst = AttackInstance(
                y=rows[t],
                sensor_columns=inst.sensor_columns,
                critical=(s,),
                budget=inst.budget,
                eta=inst.eta,
                attackable=inst.attackable,
                direction=inst.direction,
                box_lo=np.minimum(inst.box_lo, rows[t]),
                box_hi=np.maximum(inst.box_hi, rows[t]),
            )
            obj = oracle_attack_enumerate(bank, tau, row_inst, s)
            per_row.append(abs(obj - rows[t, s]))
        assert report.per_sensor[s] == pytest.approx(float(np.mean(per_row)), abs=1e-6)


def test_impact_report_worst_is_argmax():
    report = ImpactReport({3: 1.0, 5: 4.0, 7: 4.0}, (0, 0.0), 2)
    assert report.worst == (5, 4.0)  # ties break to the smaller sensor id


def test_total_false_alarms():
    bank, _ = constant_bank(2, (0,), values=(0.0,), taus=(0.5,))
    data = _rows_dataset([[0.1, 0.0], [0.9, 0.0]])
    assert total_false_alarms(bank, ThresholdConfig({0: 0.5}), data) == 1
    assert total_false_alarms(bank, ThresholdConfig({0: 1e9}), data) == 0
    # Cross-module identity with the alarm lists.
    tau = ThresholdConfig({0: 0.05})
    assert total_false_alarms(bank, tau, data) == sum(
        len(v) for v in alarms(bank, data, tau).values()
    )


def _crafted_two_sensor_setup():
    """Detectors on s0, s1 with constant zero predictors; impacts (5, 1)."""
    bank, _ = constant_bank(3, (0, 1), values=(0.0, 0.0), taus=(5.0, 5.0))
    tau = ThresholdConfig({0: 5.0, 1: 5.0})
    # Residuals are |value|; sensor 0 has one just under its threshold, and
    # sensor 1 has one clean outlier above it.
    clean = _rows_dataset(
        [
            [4.9, 6.0, 0.0],
            [0.1, 0.1, 0.0],
            [0.2, 0.3, 0.0],
            [0.3, 0.2, 0.0],
        ]
    )
    inst = AttackInstance(
        y=np.zeros(3),
        sensor_columns=(0, 1, 2),
        critical=(0, 1),
        budget=2,
        eta=np.array([5.0, 1.0, 1.0]),
    )
    return bank, tau, clean, inst


def test_resilient_first_iteration_direction():
    bank, tau, clean, inst = _crafted_two_sensor_setup()
    curves = fp_curve(bank, clean)
    cfg = DefenseConfig(gamma=0.0, epsilon=0.3, n_max=2, horizon=1)
    outcome = resilient_thresholds(bank, tau, curves, np.zeros((1, 3)), clean, inst, cfg)
    first = outcome.history[1]["tau"]
    assert first[0] < 5.0  # worst-hit sensor lowered
    assert first[1] > 5.0  # least-hit sensor raised to pay back alarms
    assert outcome.final_fa <= outcome.baseline_fa
    assert outcome.final_worst < outcome.baseline_worst
    assert outcome.improved


def test_resilient_zero_budget_returns_baseline():
    bank, tau, clean, inst = _crafted_two_sensor_setup()
    inst0 = AttackInstance(
        y=inst.y,
        sensor_columns=inst.sensor_columns,
        critical=inst.critical,
        budget=0,
        eta=inst.eta,
    )
    curves = fp_curve(bank, clean)
    cfg = DefenseConfig(gamma=0.0, epsilon=0.3, n_max=3, horizon=1)
    outcome = resilient_thresholds(bank, tau, curves, np.zeros((1, 3)), clean, inst0, cfg)
    assert not outcome.improved
    assert outcome.thresholds.tau == tau.tau


def test_resilient_single_critical_sensor():
    bank, _ = constant_bank(3, (0,), values=(0.0,), taus=(5.0,))
    tau = ThresholdConfig({0: 5.0})
    clean = _rows_dataset([[0.1, 0.0, 0.0], [0.4, 0.0, 0.0], [0.2, 0.0, 0.0]])
    inst = AttackInstance(
        y=np.zeros(3), sensor_columns=(0, 1, 2), critical=(0,), budget=1, eta=50.0
    )
    curves = fp_curve(bank, clean)
    cfg = DefenseConfig(gamma=0.0, epsilon=1.0, n_max=5, horizon=1)
    outcome = resilient_thresholds(bank, tau, curves, np.zeros((1, 3)), clean, inst, cfg)
    # No residuals near the threshold, so lowering adds no alarms and the
    # impact shrinks with tau.
    assert outcome.final_worst < outcome.baseline_worst
    assert outcome.final_fa <= outcome.baseline_fa
    assert all(v >= 0 for v in outcome.thresholds.tau.values())


def test_resilient_guarantees_on_simulated_plant():
    data = simulate(desk_config(seed=6, critical_sensors=(0, 1, 2)), 900)
    bank = train_bank(data, family="linear")
    curves = fp_curve(bank, data)
    tau = calibrate_baseline(curves, target_period_steps=60.0, n_detectors=3)
    from resguard.attack import instance_from_dataset

    inst = instance_from_dataset(data, data.n_rows - 1, budget=2)
    cfg = DefenseConfig(gamma=0.0, epsilon=0.15, n_max=4, horizon=3)
    outcome = resilient_thresholds(
        bank, tau, curves, data.values[-3:], data, inst, cfg
    )
    assert outcome.final_fa <= outcome.baseline_fa + cfg.gamma
    assert outcome.final_worst <= outcome.baseline_worst + 1e-9
    assert total_false_alarms(bank, outcome.thresholds, data) <= outcome.baseline_fa


def test_defense_config_validation():
    with pytest.raises(ValueError):
        DefenseConfig(gamma=-1.0)
    with pytest.raises(ValueError):
        DefenseConfig(epsilon=0.0)
