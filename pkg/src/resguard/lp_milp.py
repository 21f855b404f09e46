"""Self-contained dense LP and mixed-binary solver.

``solve_lp`` runs a two-phase tableau simplex on problems with finite
variable bounds (bounds are folded in as explicit rows after shifting each
variable to its lower bound).  Dantzig pricing is used until a run of
degenerate pivots, after which Bland's rule takes over to rule out cycling.
``solve_milp`` wraps it in branch-and-bound over the binary variables with
best-bound node selection and most-fractional branching.

Sizes here are a few hundred variables at most, so everything is dense.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

LE, EQ, GE = "<=", "=", ">="

_PIVOT_TOL = 1e-10
_RCOST_TOL = 1e-9
_FEAS_TOL = 1e-7
_INT_TOL = 1e-6
_BOUND_TOL = 1e-9  # incumbent pruning tolerance in branch-and-bound


class Status(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"  # reserved: cannot occur with finite bounds
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class Constraint:
    coeffs: np.ndarray
    sense: str
    rhs: float

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim != 1:
            raise ValueError("constraint coefficients must be a vector")
        if self.sense not in (LE, EQ, GE):
            raise ValueError(f"unknown sense {self.sense!r}")
        if not (np.all(np.isfinite(coeffs)) and math.isfinite(self.rhs)):
            raise ValueError("constraint data must be finite")
        object.__setattr__(self, "coeffs", coeffs)


@dataclass(frozen=True)
class LinearProgram:
    """Minimize ``objective . x`` subject to rows and finite box bounds."""

    objective: np.ndarray
    constraints: tuple[Constraint, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float)
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if c.ndim != 1 or lo.shape != c.shape or hi.shape != c.shape:
            raise ValueError("objective and bounds must be vectors of equal length")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("objective and bounds must be finite")
        if np.any(lo > hi + 1e-12):
            raise ValueError("lower bound exceeds upper bound")
        for con in self.constraints:
            if con.coeffs.size != c.size:
                raise ValueError("constraint length does not match variable count")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", np.maximum(hi, lo))
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def n_vars(self) -> int:
        return self.objective.size

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "LinearProgram":
        return LinearProgram(self.objective, self.constraints, lower, upper)


@dataclass(frozen=True)
class MILPProblem:
    lp: LinearProgram
    binary_vars: frozenset[int]

    def __post_init__(self):
        binaries = frozenset(int(b) for b in self.binary_vars)
        for b in binaries:
            if not 0 <= b < self.lp.n_vars:
                raise ValueError(f"binary index {b} out of range")
            if self.lp.lower[b] < -1e-9 or self.lp.upper[b] > 1 + 1e-9:
                raise ValueError(f"binary variable {b} must have bounds within [0, 1]")
        object.__setattr__(self, "binary_vars", binaries)


@dataclass
class MILPSolution:
    status: Status
    x: np.ndarray | None
    objective: float
    nodes_explored: int = 0


class _Tableau:
    """Dense simplex tableau with an attached reduced-cost row."""

    def __init__(self, A: np.ndarray, b: np.ndarray, senses: list[str]):
        m, n = A.shape
        # Normalize to nonnegative rhs.
        A = A.copy()
        b = b.copy()
        senses = list(senses)
        for i in range(m):
            if b[i] < 0:
                A[i] = -A[i]
                b[i] = -b[i]
                if senses[i] == LE:
                    senses[i] = GE
                elif senses[i] == GE:
                    senses[i] = LE

        slack_cols, art_cols = [], []
        extra = []
        basis = [-1] * m
        col = n
        for i, sense in enumerate(senses):
            if sense == LE:
                e = np.zeros(m)
                e[i] = 1.0
                extra.append(e)
                slack_cols.append(col)
                basis[i] = col
                col += 1
            elif sense == GE:
                e = np.zeros(m)
                e[i] = -1.0
                extra.append(e)
                slack_cols.append(col)
                col += 1
            # EQ adds no slack
        for i, sense in enumerate(senses):
            if basis[i] == -1:  # GE or EQ rows need an artificial
                e = np.zeros(m)
                e[i] = 1.0
                extra.append(e)
                art_cols.append(col)
                basis[i] = col
                col += 1

        body = np.hstack([A] + ([np.column_stack(extra)] if extra else []))
        self.T = np.column_stack([body, b])
        self.m, self.n_struct = m, n
        self.n_cols = body.shape[1]
        self.slack_cols = slack_cols
        self.art_cols = set(art_cols)
        self.basis = basis

    def pivot(self, row: int, col: int) -> None:
        T = self.T
        T[row] = T[row] / T[row, col]
        factors = T[:, col].copy()
        factors[row] = 0.0
        T -= np.outer(factors, T[row])
        self.basis[row] = col

    def solution(self) -> np.ndarray:
        x = np.zeros(self.n_cols)
        for i, j in enumerate(self.basis):
            x[j] = self.T[i, -1]
        return x


def _run_simplex(tab: _Tableau, cost: np.ndarray, allowed: np.ndarray, max_iter: int, it_used: int):
    """Minimize ``cost . x`` over the tableau; returns (status, iterations used).

    ``allowed`` masks which columns may enter the basis.  The reduced-cost
    row is maintained by pivoting.
    """
    T = tab.T
    # Reduced costs: c_j - c_B . B^-1 A_j for the current basis.
    z = np.append(cost, 0.0).astype(float)
    for i, j in enumerate(tab.basis):
        if z[j] != 0.0:
            z = z - z[j] * T[i]
    bland = False
    stall = 0
    stall_limit = 3 * (tab.n_cols + 1)
    while True:
        if it_used >= max_iter:
            return Status.ITERATION_LIMIT, it_used, z
        red = z[:-1]
        candidates = np.nonzero(allowed & (red < -_RCOST_TOL))[0]
        if candidates.size == 0:
            return Status.OPTIMAL, it_used, z
        if bland:
            col = int(candidates[0])
        else:
            col = int(candidates[np.argmin(red[candidates])])
        ratios = np.full(tab.m, np.inf)
        colvals = T[:, col]
        pos = colvals > _PIVOT_TOL
        ratios[pos] = T[pos, -1] / colvals[pos]
        if not np.any(pos):
            # Unbounded direction; impossible with boxed variables unless the
            # caller dropped a bound row. Report as iteration-limit-free optimal
            # failure via infeasible-style signal.
            return Status.UNBOUNDED, it_used, z
        best = np.min(ratios)
        tie_rows = np.nonzero(ratios <= best + 1e-12)[0]
        row = int(min(tie_rows, key=lambda i: tab.basis[i]))
        before = z[-1]
        tab.pivot(row, col)
        z = z - z[col] * T[row]
        it_used += 1
        # The row tracks the negated objective, so improvement raises z[-1].
        if z[-1] <= before + 1e-12:
            stall += 1
            if stall > stall_limit:
                bland = True
        else:
            stall = 0
            bland = False


def solve_lp(lp: LinearProgram, max_iterations: int | None = None) -> MILPSolution:
    """Two-phase simplex over the boxed polytope; returns a vertex on success."""
    n = lp.n_vars
    lo, hi = lp.lower, lp.upper
    span = hi - lo

    rows, senses, rhs = [], [], []
    for con in lp.constraints:
        rows.append(con.coeffs)
        senses.append(con.sense)
        rhs.append(con.rhs - float(con.coeffs @ lo))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows.append(e)
        senses.append(LE)
        rhs.append(span[j])

    A = np.vstack(rows)
    b = np.asarray(rhs, dtype=float)
    tab = _Tableau(A, b, senses)
    if max_iterations is None:
        max_iterations = 10 * (n + len(lp.constraints)) ** 2 + 100
    it_used = 0

    if tab.art_cols:
        phase1 = np.zeros(tab.n_cols)
        for j in tab.art_cols:
            phase1[j] = 1.0
        allowed = np.ones(tab.n_cols, dtype=bool)
        status, it_used, z = _run_simplex(tab, phase1, allowed, max_iterations, it_used)
        if status == Status.ITERATION_LIMIT:
            return MILPSolution(Status.ITERATION_LIMIT, None, math.inf, 0)
        # Phase-1 objective is -z[-1] (the row carries the negated value).
        if -z[-1] > _FEAS_TOL:
            return MILPSolution(Status.INFEASIBLE, None, math.inf, 0)
        # Drive leftover artificials out of the basis.
        for i in range(tab.m):
            if tab.basis[i] in tab.art_cols:
                row_entries = tab.T[i, : tab.n_cols]
                pivot_col = -1
                for j in range(tab.n_cols):
                    if j not in tab.art_cols and abs(row_entries[j]) > _PIVOT_TOL:
                        pivot_col = j
                        break
                if pivot_col >= 0:
                    tab.pivot(i, pivot_col)
                # else: the row is redundant; the artificial stays basic at 0.

    cost = np.zeros(tab.n_cols)
    cost[:n] = lp.objective
    allowed = np.ones(tab.n_cols, dtype=bool)
    for j in tab.art_cols:
        allowed[j] = False
    status, it_used, _ = _run_simplex(tab, cost, allowed, max_iterations, it_used)
    if status == Status.ITERATION_LIMIT:
        return MILPSolution(Status.ITERATION_LIMIT, None, math.inf, 0)
    if status == Status.UNBOUNDED:
        return MILPSolution(Status.UNBOUNDED, None, -math.inf, 0)

    z_vals = tab.solution()
    x = np.clip(z_vals[:n] + lo, lo, hi)
    return MILPSolution(Status.OPTIMAL, x, float(lp.objective @ x), 0)


def _most_fractional(x: np.ndarray, binaries: list[int]) -> tuple[int, float]:
    best, best_frac = -1, -1.0
    for j in binaries:
        frac = abs(x[j] - round(x[j]))
        if frac > best_frac + 1e-15:
            best, best_frac = j, frac
    return best, best_frac


def solve_milp(problem: MILPProblem, node_cap: int | None = None) -> MILPSolution:
    """Branch-and-bound over the binaries, exact to the LP layer's tolerance.

    Nodes are explored best-bound first; branching picks the most-fractional
    binary.  Hitting the node cap returns ``ITERATION_LIMIT`` with the best
    incumbent attached.
    """
    lp = problem.lp
    binaries = sorted(problem.binary_vars)
    if not binaries:
        sol = solve_lp(lp)
        sol.nodes_explored = 1
        return sol
    if node_cap is None:
        node_cap = 2 ** min(len(binaries), 40) + 1000

    nodes_explored = 0
    counter = 0
    heap: list = []
    incumbent: np.ndarray | None = None
    inc_obj = math.inf
    hit_limit = False

    root = solve_lp(lp)
    nodes_explored += 1
    if root.status == Status.ITERATION_LIMIT:
        return MILPSolution(Status.ITERATION_LIMIT, None, math.inf, nodes_explored)
    if root.status == Status.OPTIMAL:
        heapq.heappush(heap, (root.objective, counter, lp.lower, lp.upper, root.x))

    while heap:
        bound, _, lo, hi, x = heapq.heappop(heap)
        if bound >= inc_obj - _BOUND_TOL:
            break  # best-bound order: nothing left can improve
        j, frac = _most_fractional(x, binaries)
        if frac <= _INT_TOL:
            obj = float(lp.objective @ x)
            if obj < inc_obj:
                incumbent, inc_obj = x, obj
            continue
        for val in (0.0, 1.0):
            if nodes_explored >= node_cap:
                hit_limit = True
                break
            child_lo, child_hi = lo.copy(), hi.copy()
            child_lo[j] = child_hi[j] = val
            child = solve_lp(lp.with_bounds(child_lo, child_hi))
            nodes_explored += 1
            if child.status == Status.ITERATION_LIMIT:
                hit_limit = True
                break
            if child.status != Status.OPTIMAL:
                continue
            if child.objective < inc_obj - _BOUND_TOL:
                counter += 1
                heapq.heappush(heap, (child.objective, counter, child_lo, child_hi, child.x))
        if hit_limit:
            break

    if hit_limit:
        return MILPSolution(Status.ITERATION_LIMIT, incumbent, inc_obj, nodes_explored)
    if incumbent is None:
        return MILPSolution(Status.INFEASIBLE, None, math.inf, nodes_explored)
    return MILPSolution(Status.OPTIMAL, incumbent, inc_obj, nodes_explored)


def check_solution(problem: MILPProblem | LinearProgram, x: np.ndarray, tol: float = _FEAS_TOL) -> float:
    """Worst constraint violation of ``x`` against the raw problem data."""
    lp = problem.lp if isinstance(problem, MILPProblem) else problem
    worst = 0.0
    worst = max(worst, float(np.max(lp.lower - x, initial=0.0)))
    worst = max(worst, float(np.max(x - lp.upper, initial=0.0)))
    for con in lp.constraints:
        lhs = float(con.coeffs @ x)
        if con.sense == LE:
            worst = max(worst, lhs - con.rhs)
        elif con.sense == GE:
            worst = max(worst, con.rhs - lhs)
        else:
            worst = max(worst, abs(lhs - con.rhs))
    if isinstance(problem, MILPProblem):
        for j in problem.binary_vars:
            worst = max(worst, abs(x[j] - round(x[j])))
    return worst


def problem_to_json(problem: MILPProblem) -> dict:
    """Debug dump of a problem in a portable schema for external cross-checks."""
    lp = problem.lp
    return {
        "objective": lp.objective.tolist(),
        "rows": [c.coeffs.tolist() for c in lp.constraints],
        "senses": [c.sense for c in lp.constraints],
        "rhs": [c.rhs for c in lp.constraints],
        "lower": lp.lower.tolist(),
        "upper": lp.upper.tolist(),
        "binaries": sorted(problem.binary_vars),
    }
