"""Defender side: attack-impact metrics and resilient threshold selection.

The defender moves first by fixing thresholds; the attacker best-responds
with a stealthy attack per timestep.  ``resilient_thresholds`` walks the
threshold vector downhill on worst-case impact: lower the thresholds of the
sensors the attack hurts most, then raise the least-impacted sensors'
thresholds just enough to pay back the false alarms added, and only accept
candidates that keep the clean-window false-alarm count within ``gamma`` of
the baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .attack import Alg1Config, AttackInstance, AttackResult, run_attack
from .detector import FPCurve, PredictorBank, ThresholdConfig, alarms, fp_inverse
from .plant import Dataset

_TIE_TOL = 1e-12


@dataclass(frozen=True)
class ImpactReport:
    """Mean per-sensor attack deviation |y_tilde - y| over a horizon."""

    per_sensor: Mapping[int, float]
    worst: tuple[int, float]
    horizon: int

    def __post_init__(self):
        per = {int(k): float(v) for k, v in self.per_sensor.items()}
        if not per:
            raise ValueError("impact report needs at least one sensor")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        worst_sensor = min(per, key=lambda s: (-per[s], s))
        object.__setattr__(self, "per_sensor", per)
        object.__setattr__(self, "worst", (worst_sensor, per[worst_sensor]))


@dataclass(frozen=True)
class DefenseConfig:
    """Resilient search parameters: false-alarm slack ``gamma``, threshold
    step ``epsilon``, iteration cap, and the attack horizon in rows."""

    gamma: float = 0.0
    epsilon: float = 0.1
    n_max: int = 10
    horizon: int = 5

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.n_max < 1 or self.horizon < 1:
            raise ValueError("n_max and horizon must be positive")


def _trajectory_values(trajectory) -> np.ndarray:
    rows = trajectory.values if isinstance(trajectory, Dataset) else np.asarray(trajectory, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("trajectory must have at least one row")
    return rows


def _attack_rows(
    bank: PredictorBank,
    tau: ThresholdConfig,
    rows: np.ndarray,
    inst_template: AttackInstance,
    target: int,
    alg1: Alg1Config | None,
) -> list[AttackResult]:
    results = []
    for t in range(rows.shape[0]):
        row = rows[t]
        inst = replace(
            inst_template,
            y=row,
            critical=(target,),
            box_lo=np.minimum(inst_template.box_lo, row),
            box_hi=np.maximum(inst_template.box_hi, row),
        )
        try:
            results.append(run_attack(bank, tau, inst, alg1))
        except Exception as exc:
            raise RuntimeError(f"attack failed at row {t}, target {target}: {exc}") from exc
    return results


def impact(
    bank: PredictorBank,
    tau: ThresholdConfig,
    trajectory,
    inst_template: AttackInstance,
    alg1: Alg1Config | None = None,
) -> ImpactReport:
    """Per-critical-sensor impact: mean |y_tilde_s - y_s| of the optimal
    single-target stealthy attack over the trajectory rows.

    ``trajectory`` is a :class:`Dataset` or a plain row matrix.
    """
    rows = _trajectory_values(trajectory)
    per = {}
    for s in inst_template.critical:
        results = _attack_rows(bank, tau, rows, inst_template, s, alg1)
        per[s] = float(np.mean([abs(r.y_tilde[s] - rows[t, s]) for t, r in enumerate(results)]))
    return ImpactReport(per, (0, 0.0), rows.shape[0])


def total_false_alarms(bank: PredictorBank, tau: ThresholdConfig, clean: Dataset) -> int:
    """FA(tau): alarms summed over all detectors and rows of a clean window."""
    return sum(len(rows) for rows in alarms(bank, clean, tau).values())


def _fa_from_curves(curves: Mapping[int, FPCurve], tau: ThresholdConfig) -> int:
    return sum(curves[s].count_above(tau.tau[s]) for s in curves)


@dataclass(frozen=True)
class DefenseOutcome:
    """Result of the resilient search; ``improved`` is False when the
    baseline was returned unchanged."""

    thresholds: ThresholdConfig
    improved: bool
    baseline_worst: float
    final_worst: float
    baseline_fa: int
    final_fa: int
    history: tuple[dict, ...]


def resilient_thresholds(
    bank: PredictorBank,
    tau_baseline: ThresholdConfig,
    curves: Mapping[int, FPCurve],
    trajectory: Dataset,
    clean: Dataset,
    inst_template: AttackInstance,
    cfg: DefenseConfig,
    alg1: Alg1Config | None = None,
) -> DefenseOutcome:
    """Iterative threshold tuning against the optimal stealthy attacker.

    Each iteration evaluates the candidate thresholds by re-solving the
    attack over the horizon.  A candidate is accepted when its worst-case
    impact does not exceed the previous one and its clean-window false
    alarms stay within ``gamma`` of the baseline; otherwise the step size is
    halved.  The next candidate lowers thresholds on the worst-hit sensors
    and raises the least-hit ones through their empirical curves to pay
    back exactly the alarms the lowering added.  Returns the best strictly
    improving accepted thresholds, or the baseline when none improved
    (guaranteeing the returned worst impact and false-alarm count never
    exceed the baseline's).
    """
    horizon = _trajectory_values(trajectory)[: cfg.horizon]
    missing = [s for s in bank.detector_set if s not in curves]
    if missing:
        raise ValueError(f"curves missing for detectors {missing}")

    fa_base = _fa_from_curves(curves, tau_baseline)
    report = impact(bank, tau_baseline, horizon, inst_template, alg1)
    worst_prev = report.worst[1]
    baseline_worst = worst_prev

    best_tau = tau_baseline
    best_worst = baseline_worst
    best_fa = fa_base
    improved = False
    eps = cfg.epsilon
    tau_acc = tau_baseline
    history = [
        {
            "iteration": 0,
            "tau": dict(tau_baseline.tau),
            "worst_impact": baseline_worst,
            "worst_sensor": report.worst[0],
            "fa": fa_base,
            "accepted": True,
            "epsilon": eps,
        }
    ]

    def next_candidate(tau_from: ThresholdConfig, rep: ImpactReport, step: float) -> ThresholdConfig:
        impacts = rep.per_sensor
        top = max(impacts.values())
        a_star = {s for s, v in impacts.items() if v >= top - _TIE_TOL}
        updates = {}
        for s in a_star:
            if s in tau_from.tau:
                updates[s] = max(0.0, tau_from.tau[s] - step)
        lowered = tau_from.with_values(updates)
        delta_fp = _fa_from_curves(curves, lowered) - _fa_from_curves(curves, tau_from)
        # Pay the added alarms back by raising thresholds of the least-hit
        # sensors.  Assignment is greedy in impact order because a sensor can
        # only surrender the clean alarms it still has; when the least-hit
        # sensor's stock covers everything this reduces to raising it alone.
        payers = sorted(
            (
                s
                for s in impacts
                if s not in a_star and s in curves and s in tau_from.tau
            ),
            key=lambda s: (impacts[s], s),
        )
        deficit = float(delta_fp)
        for s in payers:
            if deficit <= 0:
                break
            stock = curves[s].count_above(tau_from.tau[s])
            pay = min(float(stock), deficit)
            if pay <= 0:
                continue
            # Raise only: the payback step must not loosen impact for free.
            updates[s] = max(tau_from.tau[s], fp_inverse(curves[s], stock - pay))
            deficit -= pay
        return tau_from.with_values(updates)

    tau_cand = next_candidate(tau_acc, report, eps)
    for it in range(1, cfg.n_max + 1):
        rep = impact(bank, tau_cand, horizon, inst_template, alg1)
        worst = rep.worst[1]
        fa_cand = _fa_from_curves(curves, tau_cand)
        fa_ok = fa_cand <= fa_base + cfg.gamma
        accepted = fa_ok and worst <= worst_prev + _TIE_TOL
        if accepted:
            tau_acc = tau_cand
            if worst < best_worst - _TIE_TOL:
                best_tau, best_worst, best_fa = tau_cand, worst, fa_cand
                improved = True
        else:
            eps /= 2.0
        if fa_ok:
            # Candidates over the alarm budget are not legitimate defender
            # moves, so they must not lower the impact benchmark.
            worst_prev = worst
        history.append(
            {
                "iteration": it,
                "tau": dict(tau_cand.tau),
                "worst_impact": worst,
                "worst_sensor": rep.worst[0],
                "fa": fa_cand,
                "accepted": accepted,
                "epsilon": eps,
            }
        )
        tau_cand = next_candidate(tau_acc, rep, eps)

    return DefenseOutcome(
        thresholds=best_tau,
        improved=improved,
        baseline_worst=baseline_worst,
        final_worst=best_worst,
        baseline_fa=fa_base,
        final_fa=best_fa,
        history=tuple(history),
    )
