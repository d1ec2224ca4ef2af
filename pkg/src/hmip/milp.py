"""Small exact MILP solver: LP relaxations, branch-and-bound, and a
brute-force enumeration oracle for testing.

Everything internal works on minimization problems; maximize inputs are
negated at the boundary and results are reported in the problem's own sense.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
LIMIT_REACHED = "limit_reached"


class DimensionMismatch(ValueError):
    pass


class NumericalFailure(RuntimeError):
    """LP backend failed; the instance should be perturbed or rescaled."""


class SearchSpaceTooLarge(ValueError):
    """Enumeration guard tripped: this oracle is test-only."""


@dataclass(frozen=True)
class MilpProblem:
    """min/max c^T v  s.t.  A v <= b,  lb <= v <= ub, v_i integer on mask."""

    objective: np.ndarray
    constraint_matrix: np.ndarray
    constraint_rhs: np.ndarray
    var_lower: np.ndarray
    var_upper: np.ndarray
    integrality: np.ndarray
    sense: str = "minimize"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float)
        a = np.asarray(self.constraint_matrix, dtype=float)
        if a.ndim != 2:
            a = a.reshape(-1, c.size)
        b = np.asarray(self.constraint_rhs, dtype=float)
        lb = np.asarray(self.var_lower, dtype=float)
        ub = np.asarray(self.var_upper, dtype=float)
        mask = np.asarray(self.integrality, dtype=bool)
        n = c.size
        if a.shape[1] != n or a.shape[0] != b.size:
            raise DimensionMismatch(
                f"matrix {a.shape} incompatible with n={n}, m={b.size}")
        if lb.size != n or ub.size != n or mask.size != n:
            raise DimensionMismatch("bound/integrality vectors must have length n")
        if np.any(lb > ub):
            raise DimensionMismatch("var_lower > var_upper on some component")
        if self.sense not in ("minimize", "maximize"):
            raise ValueError(f"unknown sense {self.sense!r}")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "constraint_matrix", a)
        object.__setattr__(self, "constraint_rhs", b)
        object.__setattr__(self, "var_lower", lb)
        object.__setattr__(self, "var_upper", ub)
        object.__setattr__(self, "integrality", mask)

    @property
    def num_vars(self) -> int:
        return self.objective.size

    def normalized(self) -> "MilpProblem":
        """Equivalent minimize-form problem (same feasible set)."""
        if self.sense == "minimize":
            return self
        return MilpProblem(
            objective=-self.objective,
            constraint_matrix=self.constraint_matrix,
            constraint_rhs=self.constraint_rhs,
            var_lower=self.var_lower,
            var_upper=self.var_upper,
            integrality=self.integrality,
            sense="minimize",
            metadata=dict(self.metadata),
        )


@dataclass(frozen=True)
class SolveConfig:
    gap_tolerance: float = 1e-4
    feasibility_tolerance: float = 1e-7
    integrality_tolerance: float = 1e-6
    time_limit: float = 100.0
    node_limit: int | None = None
    stop_after_incumbents: int | None = None

    def __post_init__(self):
        if min(self.gap_tolerance, self.feasibility_tolerance,
               self.integrality_tolerance) <= 0:
            raise ValueError("tolerances must be strictly positive")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        for lim in (self.node_limit, self.stop_after_incumbents):
            if lim is not None and lim <= 0:
                raise ValueError("limits must be positive")


@dataclass
class MilpSolution:
    status: str
    values: np.ndarray | None
    objective_value: float
    dual_bound: float
    node_count: int = 0
    wall_time: float = 0.0
    # (wall_time, objective) at each incumbent improvement.
    incumbents: list = field(default_factory=list)


def _lp_bounds(lb, ub):
    return [(l if np.isfinite(l) else None, u if np.isfinite(u) else None)
            for l, u in zip(lb, ub)]


def _raw_lp(c, a, b, lb, ub):
    res = linprog(c, A_ub=a, b_ub=b, bounds=_lp_bounds(lb, ub), method="highs")
    if res.status == 4:
        raise NumericalFailure(res.message)
    return res


def solve_lp(problem: MilpProblem, config: SolveConfig | None = None) -> MilpSolution:
    """Solve the LP relaxation (integrality ignored)."""
    config = config or SolveConfig()
    if problem.num_vars < 1:
        raise DimensionMismatch("empty problem")
    start = time.perf_counter()
    prob = problem.normalized()
    res = _raw_lp(prob.objective, prob.constraint_matrix, prob.constraint_rhs,
                  prob.var_lower, prob.var_upper)
    elapsed = time.perf_counter() - start
    sign = -1.0 if problem.sense == "maximize" else 1.0
    if res.status == 2:
        return MilpSolution(INFEASIBLE, None, math.inf * sign,
                            math.inf * sign, 1, elapsed)
    if res.status == 3:
        return MilpSolution(UNBOUNDED, None, -math.inf * sign,
                            -math.inf * sign, 1, elapsed)
    if res.status != 0:
        return MilpSolution(LIMIT_REACHED, None, math.nan, -math.inf * sign,
                            1, elapsed)
    obj = sign * float(res.fun)
    return MilpSolution(OPTIMAL, np.asarray(res.x, dtype=float), obj, obj,
                        1, elapsed)


def _most_fractional(values, int_idx, tol):
    """Index of the integer variable furthest from integrality, ties by
    lowest index. Returns None when integer-feasible."""
    frac = np.abs(values[int_idx] - np.round(values[int_idx]))
    j = int(np.argmax(frac))
    if frac[j] <= tol:
        return None
    return int(int_idx[j])


def solve_milp(problem: MilpProblem, config: SolveConfig | None = None) -> MilpSolution:
    """Branch-and-bound with most-fractional branching and best-bound node
    order. Deterministic: identical problem + config gives an identical
    solution path."""
    config = config or SolveConfig()
    prob = problem.normalized()
    sign = -1.0 if problem.sense == "maximize" else 1.0
    int_idx = np.flatnonzero(prob.integrality)
    if int_idx.size and not (np.all(np.isfinite(prob.var_lower[int_idx]))
                             and np.all(np.isfinite(prob.var_upper[int_idx]))):
        raise ValueError("integer variables must have finite bounds")

    start = time.perf_counter()
    gap = config.gap_tolerance
    itol = config.integrality_tolerance

    node_count = 0
    incumbent = None
    incumbent_obj = math.inf
    incumbents = []
    n_int_solutions = 0
    dual_bound = -math.inf
    gap_proven = None  # bound at which the optimality gap closed
    heap = []
    counter = itertools.count()
    stop_status = None

    def record_candidate(x, obj):
        nonlocal incumbent, incumbent_obj, n_int_solutions
        if obj < incumbent_obj - 1e-12:
            n_int_solutions += 1
            incumbent = np.array(x)
            # snap integer entries so downstream checks are exact
            incumbent[int_idx] = np.round(incumbent[int_idx])
            incumbent_obj = obj
            incumbents.append((time.perf_counter() - start, sign * obj))

    def try_floor_heuristic(x, lb, ub):
        """Round integer entries down; keep the point only if it stays
        feasible. Cheap incumbent source for pruning."""
        v = np.array(x)
        v[int_idx] = np.floor(v[int_idx] + itol)
        if np.any(v < lb - 1e-9) or np.any(v > ub + 1e-9):
            return
        if np.any(prob.constraint_matrix @ v > prob.constraint_rhs
                  + config.feasibility_tolerance):
            return
        record_candidate(v, float(prob.objective @ v))

    def expand(lb, ub):
        """Solve the node LP; push it, or fold integer-feasible nodes
        straight into the incumbent. Returns False on unbounded root."""
        nonlocal node_count
        node_count += 1
        res = _raw_lp(prob.objective, prob.constraint_matrix,
                      prob.constraint_rhs, lb, ub)
        if res.status == 2:
            return True
        if res.status == 3:
            return False
        x = np.asarray(res.x, dtype=float)
        bound = float(res.fun)
        if incumbent is not None and bound >= incumbent_obj - gap:
            return True
        if int_idx.size == 0 or _most_fractional(x, int_idx, itol) is None:
            record_candidate(x, bound)
            return True
        try_floor_heuristic(x, lb, ub)
        if incumbent is not None and bound >= incumbent_obj - gap:
            return True
        heapq.heappush(heap, (bound, next(counter), lb, ub, x))
        return True

    if not expand(prob.var_lower.copy(), prob.var_upper.copy()):
        return MilpSolution(UNBOUNDED, None, -math.inf * sign,
                            -math.inf * sign, node_count,
                            time.perf_counter() - start)

    while heap:
        if (config.stop_after_incumbents is not None
                and n_int_solutions >= config.stop_after_incumbents):
            stop_status = FEASIBLE
            break
        if time.perf_counter() - start > config.time_limit:
            stop_status = LIMIT_REACHED
            break
        if config.node_limit is not None and node_count >= config.node_limit:
            stop_status = LIMIT_REACHED
            break
        bound, _, lb, ub, x = heapq.heappop(heap)
        dual_bound = max(dual_bound, bound)
        if incumbent is not None and bound >= incumbent_obj - gap:
            gap_proven = bound
            heap.clear()
            break
        branch_var = _most_fractional(x, int_idx, itol)
        # integer-feasible nodes were folded at creation; re-check defensively
        if branch_var is None:
            record_candidate(x, bound)
            continue
        v = x[branch_var]
        down_ub = ub.copy()
        down_ub[branch_var] = math.floor(v + itol)
        up_lb = lb.copy()
        up_lb[branch_var] = math.ceil(v - itol)
        expand(lb, down_ub)
        expand(up_lb, ub)
        if (config.stop_after_incumbents is not None
                and n_int_solutions >= config.stop_after_incumbents):
            stop_status = FEASIBLE
            break

    elapsed = time.perf_counter() - start
    if incumbent is None:
        if stop_status == LIMIT_REACHED:
            return MilpSolution(LIMIT_REACHED, None, math.inf * sign,
                                sign * dual_bound if np.isfinite(dual_bound)
                                else -math.inf * sign,
                                node_count, elapsed, incumbents)
        return MilpSolution(INFEASIBLE, None, math.inf * sign,
                            math.inf * sign, node_count, elapsed, incumbents)
    if stop_status in (FEASIBLE, LIMIT_REACHED):
        status = FEASIBLE
        db = min(dual_bound, incumbent_obj)
        if heap:
            db = min(db, min(entry[0] for entry in heap))
    else:
        status = OPTIMAL
        # exhausting the tree proves the incumbent exactly; otherwise the
        # bound that closed the gap is the certificate
        db = incumbent_obj if gap_proven is None else min(incumbent_obj,
                                                          gap_proven)
    return MilpSolution(status, incumbent, sign * incumbent_obj, sign * db,
                        node_count, elapsed, incumbents)


_ENUM_GUARD = 2 ** 20


def enumerate_optimal(problem: MilpProblem, guard: int = _ENUM_GUARD,
                      rel_tol: float = 1e-9):
    """Brute-force oracle: every optimal point, plus the optimal value.

    Integer variables are enumerated over their (finite, small) ranges;
    continuous variables, if any, are optimized by LP per assignment.
    Returns (points, value) with points sorted lexicographically; points is
    empty when the problem is infeasible.
    """
    prob = problem.normalized()
    sign = -1.0 if problem.sense == "maximize" else 1.0
    int_idx = np.flatnonzero(prob.integrality)
    cont_idx = np.flatnonzero(~prob.integrality)
    lo = np.ceil(prob.var_lower[int_idx] - 1e-9).astype(int)
    hi = np.floor(prob.var_upper[int_idx] + 1e-9).astype(int)
    if np.any(hi < lo):
        return [], math.inf * sign
    sizes = (hi - lo + 1).astype(float)
    if sizes.size and np.prod(sizes) > guard:
        raise SearchSpaceTooLarge(
            f"{np.prod(sizes):.3g} integer assignments exceeds guard {guard}")

    a = prob.constraint_matrix
    b = prob.constraint_rhs
    c = prob.objective
    ftol = 1e-7
    best = math.inf
    candidates = []  # (objective, point)

    for combo in itertools.product(*(range(l, h + 1) for l, h in zip(lo, hi))):
        xi = np.asarray(combo, dtype=float)
        if cont_idx.size == 0:
            if np.any(a @ xi > b + ftol):
                continue
            obj = float(c @ xi)
            point = xi
        else:
            lb = prob.var_lower.copy()
            ub = prob.var_upper.copy()
            lb[int_idx] = xi
            ub[int_idx] = xi
            res = _raw_lp(c, a, b, lb, ub)
            if res.status != 0:
                continue
            obj = float(res.fun)
            point = np.asarray(res.x, dtype=float)
        if not np.isfinite(best) or obj < best - rel_tol * max(1.0, abs(best)):
            best = obj
            candidates = [(obj, point)]
        elif obj <= best + rel_tol * max(1.0, abs(best)):
            candidates.append((obj, point))
    if not candidates:
        return [], math.inf * sign
    # drop points that became stale as the minimum improved
    points = [p for o, p in candidates
              if o <= best + rel_tol * max(1.0, abs(best))]
    points.sort(key=lambda p: tuple(p))
    return points, sign * best


def enumerate_feasible(problem: MilpProblem, guard: int = 2 ** 16):
    """All feasible points of a pure-integer problem, in lexicographic
    order. Test-and-oracle use only."""
    prob = problem.normalized()
    if not np.all(prob.integrality):
        raise ValueError("enumerate_feasible requires a pure-integer problem")
    lo = np.ceil(prob.var_lower - 1e-9).astype(int)
    hi = np.floor(prob.var_upper + 1e-9).astype(int)
    if np.any(hi < lo):
        return []
    if np.prod((hi - lo + 1).astype(float)) > guard:
        raise SearchSpaceTooLarge(f"search space exceeds guard {guard}")
    a, b = prob.constraint_matrix, prob.constraint_rhs
    points = []
    for combo in itertools.product(*(range(l, h + 1) for l, h in zip(lo, hi))):
        x = np.asarray(combo, dtype=float)
        if np.all(a @ x <= b + 1e-7):
            points.append(x)
    return points


def format_lp(problem: MilpProblem) -> str:
    """Plain-text listing of a problem, one constraint per line."""
    lines = [f"{problem.sense} " + " + ".join(
        f"{ci:.6g} v{i}" for i, ci in enumerate(problem.objective))]
    for row, rhs in zip(problem.constraint_matrix, problem.constraint_rhs):
        terms = " + ".join(f"{aij:.6g} v{j}" for j, aij in enumerate(row)
                           if aij != 0.0) or "0"
        lines.append(f"  {terms} <= {rhs:.6g}")
    for i in range(problem.num_vars):
        kind = "int" if problem.integrality[i] else "cont"
        lines.append(f"  {problem.var_lower[i]:.6g} <= v{i} <= "
                     f"{problem.var_upper[i]:.6g}  [{kind}]")
    return "\n".join(lines)
