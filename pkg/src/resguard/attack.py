"""Stealthy sensor-attack synthesis against a detector bank.

The attacker perturbs up to ``budget`` sensor readings, each by at most
``eta``, so that every detector residual stays at or below its threshold,
while pushing one critical sensor's observed value as low (or high) as
possible.  For affine banks this is an exact mixed-binary program; for
neural or ensemble banks the problem is attacked iteratively: linearize
every detector at the current operating point, solve the MILP inside a
trust region, verify the candidate by exact forward propagation, and halve
the trust radius whenever the linearization lied.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .detector import PredictorBank, DetectorEntry, ThresholdConfig, residuals
from .lp_milp import (
    Constraint,
    LinearProgram,
    MILPProblem,
    MILPSolution,
    Status,
    solve_milp,
    EQ,
    LE,
)
from .models import LinearModel, predict_batch, taylor_linearize
from .plant import Dataset

STEALTH_TOL = 1e-6     # certificate slack on residual - tau
_ACCEPT_TOL = 1e-7     # acceptance check inside the iterative attack
_CLEAN_TOL = 1e-9      # perturbations below this are treated as zero


class Direction(str, Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


@dataclass(frozen=True)
class AttackInstance:
    """One timestep's attack problem.

    ``y`` is the full measurement row (sensors and controls); only columns
    in ``attackable`` may be perturbed, and control columns never qualify.
    ``eta`` limits each perturbation (``inf`` defers to the per-sensor box
    ``[box_lo, box_hi]``, which also keeps the optimization bounded).
    """

    y: np.ndarray
    sensor_columns: tuple[int, ...]
    critical: tuple[int, ...]
    budget: int
    eta: np.ndarray | float = math.inf
    attackable: frozenset[int] = frozenset()
    direction: Direction = Direction.MINIMIZE
    box_lo: np.ndarray | None = None
    box_hi: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1:
            raise ValueError("y must be a vector")
        d = y.size
        sensors = tuple(int(s) for s in self.sensor_columns)
        if not sensors or any(not 0 <= s < d for s in sensors):
            raise ValueError("sensor_columns out of range")
        critical = tuple(int(s) for s in self.critical)
        if not critical or any(s not in sensors for s in critical):
            raise ValueError("critical sensors must be sensor columns")
        attackable = frozenset(int(s) for s in self.attackable) or frozenset(sensors)
        if any(s not in sensors for s in attackable):
            raise ValueError("attackable set must contain only sensor columns")
        if self.budget < 0 or self.budget > len(attackable):
            raise ValueError(f"budget {self.budget} outside [0, {len(attackable)}]")
        eta = np.broadcast_to(np.asarray(self.eta, dtype=float), (d,)).copy()
        if np.any(eta < 0):
            raise ValueError("eta must be nonnegative")
        scale = np.maximum(1.0, np.abs(y))
        box_lo = np.asarray(self.box_lo, dtype=float) if self.box_lo is not None else y - 10.0 * scale
        box_hi = np.asarray(self.box_hi, dtype=float) if self.box_hi is not None else y + 10.0 * scale
        if box_lo.shape != y.shape or box_hi.shape != y.shape:
            raise ValueError("box bounds must match y")
        if np.any(box_lo > y) or np.any(box_hi < y):
            raise ValueError("box must contain the clean measurement")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sensor_columns", sensors)
        object.__setattr__(self, "critical", critical)
        object.__setattr__(self, "attackable", attackable)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "box_lo", box_lo)
        object.__setattr__(self, "box_hi", box_hi)

    def delta_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-column perturbation bounds: eta capped by the sensor box."""
        lo = np.maximum(-self.eta, self.box_lo - self.y)
        hi = np.minimum(self.eta, self.box_hi - self.y)
        mask = np.ones(self.y.size, dtype=bool)
        mask[list(self.attackable)] = False
        lo[mask] = 0.0
        hi[mask] = 0.0
        return lo, hi


def instance_from_dataset(
    data: Dataset,
    row: int | np.ndarray,
    budget: int,
    eta: np.ndarray | float = math.inf,
    direction: Direction = Direction.MINIMIZE,
    attackable=None,
    critical=None,
) -> AttackInstance:
    """Build an instance from a dataset row, boxing sensors by the clean
    data range widened by 10x its span."""
    y = data.row(row) if isinstance(row, (int, np.integer)) else np.asarray(row, dtype=float)
    sensors = data.sensor_columns()
    lo = data.values.min(axis=0)
    hi = data.values.max(axis=0)
    span = np.maximum(hi - lo, 1.0)
    return AttackInstance(
        y=y,
        sensor_columns=sensors,
        critical=tuple(critical) if critical is not None else data.critical_columns(),
        budget=budget,
        eta=eta,
        attackable=frozenset(attackable) if attackable is not None else frozenset(sensors),
        direction=direction,
        box_lo=np.minimum(lo - 10.0 * span, y),
        box_hi=np.maximum(hi + 10.0 * span, y),
    )


@dataclass(frozen=True)
class Alg1Config:
    """Parameters of the iterative linearize-solve-verify attack."""

    epsilon0: float
    epsilon_min: float
    n_max: int = 50
    big_m: float | None = None

    def __post_init__(self):
        if self.epsilon0 <= 0 or self.epsilon_min <= 0:
            raise ValueError("step sizes must be positive")
        if self.epsilon_min >= self.epsilon0:
            raise ValueError("epsilon_min must be below epsilon0")
        if self.n_max < 1:
            raise ValueError("n_max must be positive")
        if self.big_m is not None and self.big_m <= 0:
            raise ValueError("big_m must be positive")


def default_alg1_config(data: Dataset, n_max: int = 50) -> Alg1Config:
    """Step sizes from the clean data: epsilon0 is 10% of the mean sensor
    range, halved down to epsilon0 / 2**10."""
    sensors = list(data.sensor_columns())
    spans = data.values[:, sensors].max(axis=0) - data.values[:, sensors].min(axis=0)
    eps0 = 0.1 * float(np.mean(np.maximum(spans, 1e-6)))
    return Alg1Config(epsilon0=eps0, epsilon_min=eps0 / 2**10, n_max=n_max)


@dataclass(frozen=True)
class AttackResult:
    """Optimized attack for one instance.

    ``feasible`` certifies that every detector residual at ``y_tilde`` is
    within ``STEALTH_TOL`` of its threshold under exact forward propagation.
    """

    y_tilde: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    target: int
    objective: float
    feasible: bool
    iterations: int
    solver_status: str = "optimal"

    @property
    def n_attacked(self) -> int:
        return int(np.count_nonzero(self.delta))


def stealth_margin(bank: PredictorBank, tau: ThresholdConfig, row: np.ndarray) -> float:
    """Worst ``residual - tau`` across detectors; <= 0 means fully stealthy."""
    res = residuals(bank, row)
    return max(res[s] - tau.tau[s] for s in bank.detector_set)


def _require_affine(bank: PredictorBank) -> None:
    for s, entry in bank.detectors.items():
        if not isinstance(entry.model, LinearModel):
            raise TypeError(f"detector for column {s} is not affine")


def build_attack_milp(
    bank: PredictorBank,
    tau: ThresholdConfig,
    inst: AttackInstance,
    target: int,
    trust_radius: float | None = None,
    center: np.ndarray | None = None,
    big_m: float | None = None,
) -> MILPProblem:
    """Mixed-binary encoding of the stealthy attack on an affine bank.

    Variables are (y_tilde, delta, alpha) per sensor column.  Rows: two-sided
    stealth constraints per detector, coupling ``y_tilde = y + delta``,
    two-sided activation ``|delta| <= M alpha`` (both signs, otherwise
    negative perturbations would not consume budget), and the budget row.
    A finite trust region tightens the ``y_tilde`` boxes around ``center``.
    """
    _require_affine(bank)
    if target not in inst.critical:
        raise ValueError(f"target {target} is not a critical sensor")
    for s in bank.detector_set:
        if s not in tau.tau:
            raise ValueError(f"no threshold for detector {s}")

    sensors = inst.sensor_columns
    pos = {s: i for i, s in enumerate(sensors)}
    d = len(sensors)
    y = inst.y

    dlo, dhi = inst.delta_bounds()
    ylo = y + dlo
    yhi = y + dhi
    if trust_radius is not None and math.isfinite(trust_radius):
        c = inst.y if center is None else np.asarray(center, dtype=float)
        ylo = np.maximum(ylo, c - trust_radius)
        yhi = np.minimum(yhi, c + trust_radius)
        dlo = np.maximum(dlo, ylo - y)
        dhi = np.minimum(dhi, yhi - y)

    n = 3 * d  # [y_tilde | delta | alpha]
    lower = np.zeros(n)
    upper = np.zeros(n)
    for s in sensors:
        i = pos[s]
        lower[i], upper[i] = ylo[s], yhi[s]
        lower[d + i], upper[d + i] = dlo[s], dhi[s]
        if s in inst.attackable:
            upper[2 * d + i] = 1.0

    constraints: list[Constraint] = []
    for s in bank.detector_set:
        entry = bank.detectors[s]
        model: LinearModel = entry.model
        row_hi = np.zeros(n)
        row_hi[pos[s]] = 1.0
        const = model.b
        for w_j, f in zip(model.w, entry.feature_indices):
            f = int(f)
            if f in pos:
                row_hi[pos[f]] -= w_j
            else:
                const += w_j * y[f]
        t = tau.tau[s]
        constraints.append(Constraint(row_hi, LE, t + const))
        constraints.append(Constraint(-row_hi, LE, t - const))

    for s in sensors:
        i = pos[s]
        row = np.zeros(n)
        row[i] = 1.0
        row[d + i] = -1.0
        constraints.append(Constraint(row, EQ, y[s]))

    for s in sorted(inst.attackable):
        i = pos[s]
        # M must dominate the perturbation box or alpha would clip delta;
        # a caller-supplied big_m can only raise it.
        m_s = max(abs(dlo[s]), abs(dhi[s]))
        if big_m is not None:
            m_s = max(m_s, big_m)
        row = np.zeros(n)
        row[d + i] = 1.0
        row[2 * d + i] = -m_s
        constraints.append(Constraint(row, LE, 0.0))
        row = np.zeros(n)
        row[d + i] = -1.0
        row[2 * d + i] = -m_s
        constraints.append(Constraint(row, LE, 0.0))

    budget_row = np.zeros(n)
    for s in inst.attackable:
        budget_row[2 * d + pos[s]] = 1.0
    constraints.append(Constraint(budget_row, LE, float(inst.budget)))

    objective = np.zeros(n)
    objective[d + pos[target]] = 1.0 if inst.direction == Direction.MINIMIZE else -1.0
    lp = LinearProgram(objective, tuple(constraints), lower, upper)
    binaries = frozenset(2 * d + pos[s] for s in inst.attackable)
    return MILPProblem(lp, binaries)


def _extract_result(
    bank: PredictorBank,
    tau: ThresholdConfig,
    inst: AttackInstance,
    target: int,
    sol: MILPSolution,
) -> AttackResult:
    sensors = inst.sensor_columns
    d = len(sensors)
    y_tilde = inst.y.copy()
    for i, s in enumerate(sensors):
        y_tilde[s] = sol.x[i]
    delta = y_tilde - inst.y
    delta[np.abs(delta) < _CLEAN_TOL] = 0.0
    # Clamp solver slop back inside the perturbation bounds.
    dlo, dhi = inst.delta_bounds()
    delta = np.clip(delta, dlo, dhi)
    y_tilde = inst.y + delta
    margin = stealth_margin(bank, tau, y_tilde)
    status = "optimal" if sol.status == Status.OPTIMAL else sol.status.value
    return AttackResult(
        y_tilde=y_tilde,
        delta=delta,
        alpha=delta != 0.0,
        target=target,
        objective=float(y_tilde[target]),
        feasible=margin <= STEALTH_TOL,
        iterations=sol.nodes_explored,
        solver_status=status,
    )


def _noop_result(bank: PredictorBank, tau: ThresholdConfig, inst: AttackInstance, status: str) -> AttackResult:
    sign = 1.0 if inst.direction == Direction.MINIMIZE else -1.0
    target = min(inst.critical, key=lambda s: sign * inst.y[s])
    margin = stealth_margin(bank, tau, inst.y)
    return AttackResult(
        y_tilde=inst.y.copy(),
        delta=np.zeros_like(inst.y),
        alpha=np.zeros(inst.y.size, dtype=bool),
        target=target,
        objective=float(inst.y[target]),
        feasible=margin <= STEALTH_TOL,
        iterations=0,
        solver_status=status,
    )


def _better(direction: Direction, a: float, b: float) -> bool:
    return a < b if direction == Direction.MINIMIZE else a > b


def attack_linear(bank: PredictorBank, tau: ThresholdConfig, inst: AttackInstance) -> AttackResult:
    """Exact attack on an affine bank: solve the MILP for every critical
    target and keep the best objective in the chosen direction."""
    _require_affine(bank)
    best: AttackResult | None = None
    total_nodes = 0
    hit_limit = False
    for target in inst.critical:
        prob = build_attack_milp(bank, tau, inst, target)
        sol = solve_milp(prob)
        total_nodes += sol.nodes_explored
        if sol.status == Status.ITERATION_LIMIT:
            hit_limit = True
            if sol.x is None:
                continue
        elif sol.status != Status.OPTIMAL:
            continue
        result = _extract_result(bank, tau, inst, target, sol)
        if best is None or _better(inst.direction, result.objective, best.objective):
            best = result
    if best is None:
        noop = _noop_result(bank, tau, inst, "infeasible")
        return replace(noop, iterations=total_nodes)
    status = "iteration_limit" if hit_limit else best.solver_status
    return replace(best, iterations=total_nodes, solver_status=status)


def _linearized_bank(bank: PredictorBank, row: np.ndarray) -> PredictorBank:
    detectors = {}
    for s, entry in bank.detectors.items():
        w, b = taylor_linearize(entry.model, row[entry.feature_indices])
        detectors[s] = DetectorEntry(LinearModel(w, b), s, entry.feature_indices)
    return PredictorBank(detectors, bank.detector_set, bank.column_names)


def _probe_seeds(
    bank: PredictorBank,
    tau: ThresholdConfig,
    inst: AttackInstance,
    target: int,
    max_supports: int = 8,
    max_support_size: int = 3,
) -> list[np.ndarray]:
    """Verified-feasible starting points from a coarse lattice over the
    perturbation box.

    Local linearization cannot see disconnected branches of a nonlinear
    stealth set, so the descent loop is restarted from the best lattice
    points that pass exact forward propagation.  Deterministic and cheap:
    a few hundred candidate rows at most.
    """
    dlo, dhi = inst.delta_bounds()
    attackable = sorted(inst.attackable)
    supports = []
    for size in range(min(inst.budget, max_support_size), 0, -1):
        for comb in itertools.combinations(attackable, size):
            supports.append(comb)
            if len(supports) >= max_supports:
                break
        if len(supports) >= max_supports:
            break

    rows = []
    for support in supports:
        per_axis = {1: 33, 2: 65}.get(len(support), 7)
        axes = []
        for s in support:
            pts = np.unique(np.concatenate([np.linspace(dlo[s], dhi[s], per_axis), [0.0]]))
            axes.append(pts[(pts >= dlo[s] - 1e-12) & (pts <= dhi[s] + 1e-12)])
        for combo in itertools.product(*axes):
            row = inst.y.copy()
            for s, d in zip(support, combo):
                row[s] += d
            rows.append(row)
    if not rows:
        return []

    matrix = np.asarray(rows)
    margins = np.full(matrix.shape[0], -np.inf)
    for s in bank.detector_set:
        entry = bank.detectors[s]
        preds = predict_batch(entry.model, matrix[:, entry.feature_indices])
        margins = np.maximum(margins, np.abs(preds - matrix[:, s]) - tau.tau[s])
    feasible = matrix[margins <= _ACCEPT_TOL]

    sign = 1.0 if inst.direction == Direction.MINIMIZE else -1.0
    order = np.argsort(sign * feasible[:, target], kind="stable") if feasible.size else []
    seeds: list[np.ndarray] = []
    for i in order:
        if len(seeds) >= 3:
            break
        row = feasible[i]
        if all(np.max(np.abs(row - s)) > 1e-9 for s in seeds) and np.max(np.abs(row - inst.y)) > 1e-9:
            seeds.append(row)
    return seeds


def attack_nn(
    bank: PredictorBank,
    tau: ThresholdConfig,
    inst: AttackInstance,
    cfg: Alg1Config,
) -> AttackResult:
    """Iterative attack on a nonlinear bank.

    Per target: linearize all detectors at the current point, solve the
    trust-region MILP, verify the candidate against the true models, halve
    the radius on violation, and reset it after every accepted step.  A
    descent stops after ``n_max`` MILP solves, when the radius falls below
    ``epsilon_min``, or when the objective stops improving.

    Two robustness measures sit on top of that skeleton.  Step halving
    alone strangles on curved detector boundaries (a tangent step of size
    ``eps`` violates by curvature * eps**2 however small eps gets), so each
    detector carries an adaptive backoff: its linearized threshold is
    tightened by the violation observed at rejected candidates and relaxed
    after accepted ones.  And because linearization is blind to other
    branches of a nonconvex stealth set, the descent restarts from a couple
    of coarse verified-feasible probe points.  Accepted iterates are always
    verified against the true models, so the objective never worsens along
    a descent.
    """

    def descend(target: int, seed: np.ndarray) -> tuple[np.ndarray, int]:
        current = seed.copy()
        cur_obj = float(current[target])
        eps = cfg.epsilon0
        backoff = {s: 0.0 for s in bank.detector_set}
        iters = 0
        while iters < cfg.n_max and eps >= cfg.epsilon_min:
            iters += 1
            lin_bank = _linearized_bank(bank, current)
            tau_eff = ThresholdConfig(
                {s: max(tau.tau[s] - backoff[s], 0.0) for s in bank.detector_set}
            )
            prob = build_attack_milp(
                lin_bank, tau_eff, inst, target, trust_radius=eps, center=current, big_m=cfg.big_m
            )
            sol = solve_milp(prob)
            if sol.status != Status.OPTIMAL or sol.x is None:
                # Possibly over-tightened; relax and shrink the region.
                eps /= 2.0
                backoff = {s: 0.5 * v for s, v in backoff.items()}
                continue
            cand = _extract_result(bank, tau, inst, target, sol)
            viol = {s: r - tau.tau[s] for s, r in residuals(bank, cand.y_tilde).items()}
            if max(viol.values()) <= _ACCEPT_TOL:
                improvement = (
                    cur_obj - cand.objective
                    if inst.direction == Direction.MINIMIZE
                    else cand.objective - cur_obj
                )
                if improvement < 1e-9:
                    if max(backoff.values()) <= 1e-9:
                        break  # converged against the true boundaries
                    backoff = {s: 0.25 * v for s, v in backoff.items()}
                    continue
                current = cand.y_tilde
                cur_obj = cand.objective
                eps = cfg.epsilon0
                backoff = {s: 0.5 * v for s, v in backoff.items()}
            else:
                for s, v in viol.items():
                    if v > 0:
                        backoff[s] += 1.5 * v + 1e-12
                eps /= 2.0
        return current, iters

    best: AttackResult | None = None
    for target in inst.critical:
        seeds = [inst.y] + _probe_seeds(bank, tau, inst, target)
        final_point: np.ndarray | None = None
        total_iters = 0
        for seed in seeds:
            point, iters = descend(target, seed)
            total_iters += iters
            if stealth_margin(bank, tau, point) <= STEALTH_TOL:
                if final_point is None or _better(
                    inst.direction, float(point[target]), float(final_point[target])
                ):
                    final_point = point
        if final_point is None:
            final_point = inst.y  # nothing stealthy found; honest no-op
        delta = final_point - inst.y
        delta[np.abs(delta) < _CLEAN_TOL] = 0.0
        final = AttackResult(
            y_tilde=inst.y + delta,
            delta=delta,
            alpha=delta != 0.0,
            target=target,
            objective=float(inst.y[target] + delta[target]),
            feasible=stealth_margin(bank, tau, inst.y + delta) <= STEALTH_TOL,
            iterations=total_iters,
            solver_status="optimal",
        )
        if best is None or _better(inst.direction, final.objective, best.objective):
            best = final
    assert best is not None  # critical is nonempty by construction
    return best


def run_attack(
    bank: PredictorBank,
    tau: ThresholdConfig,
    inst: AttackInstance,
    cfg: Alg1Config | None = None,
) -> AttackResult:
    """Dispatch on the bank family: exact MILP for affine banks, iterative
    linearization otherwise (``cfg`` required for nonlinear banks)."""
    if bank.is_affine():
        return attack_linear(bank, tau, inst)
    if cfg is None:
        raise ValueError("Alg1Config required for a nonlinear bank")
    return attack_nn(bank, tau, inst, cfg)


def result_to_json(inst: AttackInstance, result: AttackResult, bank: PredictorBank | None = None) -> dict:
    """Attack report entry: instance echo plus the optimized attack."""
    name = (lambda s: bank.name_of(s)) if bank else str
    return {
        "instance": {
            "y": inst.y.tolist(),
            "critical": [name(s) for s in inst.critical],
            "budget": inst.budget,
            "direction": inst.direction.value,
            "attackable": sorted(name(s) for s in inst.attackable),
        },
        "target": name(result.target),
        "objective": result.objective,
        "delta": result.delta.tolist(),
        "attacked": [name(int(s)) for s in np.nonzero(result.delta)[0]],
        "feasible": result.feasible,
        "iterations": result.iterations,
        "solver_status": result.solver_status,
    }
