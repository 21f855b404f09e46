import math

import numpy as np
import pytest

from _helpers import assert_result_invariants, constant_bank, random_linear_setup
from resguard.attack import (
    Alg1Config,
    AttackInstance,
    Direction,
    attack_linear,
    attack_nn,
    build_attack_milp,
    instance_from_dataset,
    run_attack,
)
from resguard.detector import DetectorEntry, PredictorBank, ThresholdConfig, residuals
from resguard.lp_milp import Status, solve_milp
from resguard.models import LinearModel, NeuralModel
from resguard.oracle import oracle_attack_enumerate, oracle_attack_grid
from resguard.plant import desk_config, simulate


def _identity_pair_bank(mutual: bool):
    """s0's detector reads s1 with weight 1; optionally also the reverse."""
    detectors = {0: DetectorEntry(LinearModel(np.array([1.0]), 0.0), 0, np.array([1]))}
    sensors = (0,)
    if mutual:
        detectors[1] = DetectorEntry(LinearModel(np.array([1.0]), 0.0), 1, np.array([0]))
        sensors = (0, 1)
    return PredictorBank(detectors, sensors)


def _pair_instance(budget):
    return AttackInstance(y=np.zeros(2), sensor_columns=(0, 1), critical=(0,), budget=budget)


def test_milp_single_detector_budget_one():
    bank = _identity_pair_bank(mutual=False)
    tau = ThresholdConfig({0: 1.0})
    sol = solve_milp(build_attack_milp(bank, tau, _pair_instance(1), 0))
    assert sol.status == Status.OPTIMAL
    assert sol.objective == pytest.approx(-1.0, abs=1e-7)  # delta on the target


def test_milp_single_detector_budget_two_box_bound():
    # With both sensors attacked the co-sensor rides its box to -10 and the
    # stealth corridor would allow -11, but the target's own box (the same
    # eta-substitute rule for every sensor) binds first at -10.
    bank = _identity_pair_bank(mutual=False)
    tau = ThresholdConfig({0: 1.0})
    inst = _pair_instance(2)
    assert inst.box_lo[0] == -10.0
    sol = solve_milp(build_attack_milp(bank, tau, inst, 0))
    assert sol.objective == pytest.approx(-10.0, abs=1e-6)
    assert sol.objective == pytest.approx(oracle_attack_enumerate(bank, tau, inst, 0), abs=1e-6)


def test_milp_mutual_detectors_match_oracle():
    bank = _identity_pair_bank(mutual=True)
    tau = ThresholdConfig({0: 1.0, 1: 1.0})
    expected = {1: -1.0, 2: -10.0}
    for budget, value in expected.items():
        inst = _pair_instance(budget)
        result = attack_linear(bank, tau, inst)
        assert result.objective == pytest.approx(value, abs=1e-6)
        assert result.objective == pytest.approx(
            oracle_attack_enumerate(bank, tau, inst, 0), abs=1e-6
        )
        assert result.feasible
        assert_result_invariants(result, inst)


def test_milp_validation_errors():
    bank = _identity_pair_bank(mutual=False)
    tau = ThresholdConfig({0: 1.0})
    with pytest.raises(ValueError):
        build_attack_milp(bank, tau, _pair_instance(1), 1)  # not critical
    nn = NeuralModel(((np.array([[1.0]]), np.array([0.0])),))
    nn_bank = PredictorBank({0: DetectorEntry(nn, 0, np.array([1]))}, (0,))
    with pytest.raises(TypeError):
        build_attack_milp(nn_bank, tau, _pair_instance(1), 0)


def test_attack_instance_validation():
    with pytest.raises(ValueError):
        AttackInstance(y=np.zeros(2), sensor_columns=(0, 1), critical=(0,), budget=3)
    with pytest.raises(ValueError):
        AttackInstance(y=np.zeros(2), sensor_columns=(0,), critical=(1,), budget=0)
    with pytest.raises(ValueError):
        AttackInstance(y=np.zeros(2), sensor_columns=(0, 1), critical=(0,), budget=1, eta=-1.0)


def test_attack_linear_eta_bound_only():
    # Target 0 carries no detector; the only detector is constant so the
    # budget-1 attack on the target is limited purely by eta.
    bank, tau = constant_bank(3, (1,), values=(5.0,), taus=(10.0,))
    inst = AttackInstance(
        y=np.array([4.0, 5.0, 1.0]),
        sensor_columns=(0, 1, 2),
        critical=(0,),
        budget=1,
        eta=2.0,
    )
    result = attack_linear(bank, tau, inst)
    assert result.objective == pytest.approx(2.0, abs=1e-7)
    assert_result_invariants(result, inst)


def test_attack_linear_zero_budget():
    bank, tau = constant_bank(3, (1,), values=(5.0,), taus=(10.0,))
    inst = AttackInstance(
        y=np.array([4.0, 5.0, 1.0]), sensor_columns=(0, 1, 2), critical=(0, 1), budget=0
    )
    result = attack_linear(bank, tau, inst)
    assert result.objective == 4.0  # best clean critical value under minimize
    assert result.n_attacked == 0
    assert result.feasible


def test_attack_linear_matches_oracle_randomized():
    rng = np.random.default_rng(314)
    for _ in range(50):
        bank, tau, inst = random_linear_setup(rng)
        result = attack_linear(bank, tau, inst)
        oracle = min(
            (oracle_attack_enumerate(bank, tau, inst, t) for t in inst.critical),
        )
        assert result.objective == pytest.approx(oracle, abs=1e-6)
        assert result.feasible
        assert_result_invariants(result, inst)


def test_attack_linear_budget_monotone():
    rng = np.random.default_rng(99)
    for _ in range(10):
        bank, tau, inst = random_linear_setup(rng, d=6, budget=0)
        prev = math.inf
        for b in range(0, 5):
            inst_b = AttackInstance(
                y=inst.y,
                sensor_columns=inst.sensor_columns,
                critical=inst.critical,
                budget=b,
                eta=inst.eta,
                attackable=inst.attackable,
                direction=inst.direction,
                box_lo=inst.box_lo,
                box_hi=inst.box_hi,
            )
            obj = attack_linear(bank, tau, inst_b).objective
            assert obj <= prev + 1e-9
            prev = obj


def test_attack_linear_threshold_monotone():
    rng = np.random.default_rng(55)
    for _ in range(10):
        bank, tau, inst = random_linear_setup(rng, d=5, budget=2)
        base = attack_linear(bank, tau, inst).objective
        wider = ThresholdConfig({s: t + 0.7 for s, t in tau.tau.items()})
        assert attack_linear(bank, wider, inst).objective <= base + 1e-9


def test_attack_linear_unconstrained_limit_hits_box():
    # Large thresholds and infinite eta: the attacker rides the target to
    # its box bound.
    d = 4
    detectors = {
        s: DetectorEntry(LinearModel(np.full(d - 1, 0.3), 0.0), s, np.array([j for j in range(d) if j != s]))
        for s in range(d)
    }
    bank = PredictorBank(detectors, tuple(range(d)))
    tau = ThresholdConfig({s: 1e7 for s in range(d)})
    inst = AttackInstance(y=np.zeros(d), sensor_columns=tuple(range(d)), critical=(0,), budget=d)
    result = attack_linear(bank, tau, inst)
    assert result.objective == pytest.approx(inst.box_lo[0], abs=1e-6)


def test_attack_maximize_direction():
    bank = _identity_pair_bank(mutual=False)
    tau = ThresholdConfig({0: 1.0})
    inst = AttackInstance(
        y=np.zeros(2), sensor_columns=(0, 1), critical=(0,), budget=1, direction=Direction.MAXIMIZE
    )
    result = attack_linear(bank, tau, inst)
    assert result.objective == pytest.approx(1.0, abs=1e-7)


def test_trust_region_limits_step():
    bank = _identity_pair_bank(mutual=False)
    tau = ThresholdConfig({0: 1e6})
    inst = _pair_instance(2)
    sol = solve_milp(build_attack_milp(bank, tau, inst, 0, trust_radius=0.25, center=inst.y))
    assert sol.status == Status.OPTIMAL
    y_tilde = sol.x[:2]
    assert np.all(np.abs(y_tilde - inst.y) <= 0.25 + 1e-9)


def test_attack_infeasible_clean_point():
    # Threshold below the clean residual and nothing attackable enough to fix
    # it: solver reports the honest no-op with feasible=False.
    bank, _ = constant_bank(2, (0,), values=(5.0,), taus=(0.0,))
    tau = ThresholdConfig({0: 0.1})
    inst = AttackInstance(
        y=np.array([0.0, 0.0]),
        sensor_columns=(0, 1),
        critical=(0,),
        budget=0,
        eta=0.0,
    )
    result = attack_linear(bank, tau, inst)
    assert not result.feasible
    assert result.n_attacked == 0
    assert result.solver_status == "infeasible"


def test_attack_nn_constant_predictors_reach_bound():
    nn = NeuralModel(((np.zeros((3, 1)), np.zeros(3)), (np.zeros((1, 3)), np.array([0.0]))))
    bank = PredictorBank({1: DetectorEntry(nn, 1, np.array([0]))}, (1,))
    tau = ThresholdConfig({1: 100.0})
    inst = AttackInstance(
        y=np.zeros(2), sensor_columns=(0, 1), critical=(0,), budget=1, eta=2.0
    )
    cfg = Alg1Config(epsilon0=5.0, epsilon_min=5.0 / 2**10, n_max=20)
    result = attack_nn(bank, tau, inst, cfg)
    assert result.objective == pytest.approx(-2.0, abs=1e-7)
    assert result.feasible
    # Each restart converges in an accepted step plus the convergence probe.
    assert result.iterations <= 8


def test_attack_nn_equals_linear_on_wrapped_models():
    rng = np.random.default_rng(77)
    for _ in range(8):
        bank, tau, inst = random_linear_setup(rng, d=5, budget=2)
        wrapped = {}
        for s, entry in bank.detectors.items():
            model: LinearModel = entry.model
            layers = ((model.w[None, :].copy(), np.array([model.b])),)
            wrapped[s] = DetectorEntry(NeuralModel(layers), s, entry.feature_indices)
        nn_bank = PredictorBank(wrapped, bank.detector_set)
        span = float(np.max(inst.box_hi - inst.box_lo))
        cfg = Alg1Config(epsilon0=2.0 * span, epsilon_min=2.0 * span / 2**10, n_max=50)
        lin = attack_linear(bank, tau, inst)
        it = attack_nn(nn_bank, tau, inst, cfg)
        assert it.objective == pytest.approx(lin.objective, abs=1e-6)
        assert it.feasible or not lin.feasible
        assert_result_invariants(it, inst)


def _tanh_pair_bank(rng):
    """Two sensors watching each other through one-hidden-layer tanh nets."""
    detectors = {}
    for s in (0, 1):
        w1 = rng.normal(0.0, 0.9, (3, 1))
        b1 = rng.normal(0.0, 0.2, 3)
        w2 = rng.normal(0.0, 0.9, (1, 3))
        b2 = rng.normal(0.0, 0.2, 1)
        nn = NeuralModel(((w1, b1), (w2, b2)))
        detectors[s] = DetectorEntry(nn, s, np.array([1 - s]))
    return PredictorBank(detectors, (0, 1))


def test_attack_nn_close_to_grid_oracle():
    rng = np.random.default_rng(2024)
    for trial in range(5):
        bank = _tanh_pair_bank(rng)
        y = rng.normal(0.0, 0.3, 2)
        res = residuals(bank, y)
        tau = ThresholdConfig({s: res[s] + 0.4 for s in (0, 1)})
        inst = AttackInstance(
            y=y, sensor_columns=(0, 1), critical=(0,), budget=2, eta=2.0
        )
        cfg = Alg1Config(epsilon0=0.5, epsilon_min=0.5 / 2**12, n_max=50)
        result = attack_nn(bank, tau, inst, cfg)
        assert result.feasible
        grid = oracle_attack_grid(bank, tau, inst, 0, step=0.01)
        assert grid is not None
        assert result.objective <= grid + 0.02
        assert_result_invariants(result, inst)


def test_instance_from_dataset_boxes():
    data = simulate(desk_config(seed=1), 120)
    inst = instance_from_dataset(data, 5, budget=2, eta=1.5)
    assert inst.critical == data.critical_columns()
    assert set(inst.attackable) == set(data.sensor_columns())
    lo = data.values.min(axis=0)
    hi = data.values.max(axis=0)
    span = np.maximum(hi - lo, 1.0)
    assert np.allclose(inst.box_lo, np.minimum(lo - 10 * span, inst.y))
    assert np.allclose(inst.box_hi, np.maximum(hi + 10 * span, inst.y))


def test_run_attack_dispatch():
    bank = _identity_pair_bank(mutual=False)
    tau = ThresholdConfig({0: 1.0})
    inst = _pair_instance(1)
    assert run_attack(bank, tau, inst).objective == pytest.approx(-1.0, abs=1e-7)
    nn = NeuralModel(((np.array([[1.0]]), np.array([0.0])),))
    nn_bank = PredictorBank({0: DetectorEntry(nn, 0, np.array([1]))}, (0,))
    with pytest.raises(ValueError):
        run_attack(nn_bank, tau, inst)
