"""Baselines, regret/timing metrics, and head-to-head comparison runs.

Methods share a common record schema so aggregates (average regret R_ABS,
normalized regret R_NORM, wall times) are computed identically:

    EXACT    exact master solve (regret 0 whenever optimality is proven)
    FEAS-1   branch and bound stopped at the first incumbent
    FEAS-3   branch and bound stopped at the third incumbent
    NN       nearest-neighbor label transfer plus feasibility projection
    DP       direct regression of x_star plus the same projection
    learned  policy from a trained cost predictor (caller supplies the id)
"""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .conformal import MissingLabels
from .milp import MilpProblem, SolveConfig, solve_milp
from .mlp import Mlp
from .problems import solve_lower, solve_master
from .training import policy_point

logger = logging.getLogger(__name__)


class EmptyTrainSet(ValueError):
    pass


@dataclass
class InstanceRecord:
    theta_id: int
    x_hat: np.ndarray
    feasible: bool
    true_cost: float
    regret: float
    normalized_regret: float        # nan when the sample was skipped
    wall_time_upper: float
    wall_time_lower: float

    @property
    def wall_time_total(self) -> float:
        return self.wall_time_upper + self.wall_time_lower


@dataclass
class MethodResult:
    method_id: str
    records: list = field(default_factory=list)


@dataclass
class MethodSummary:
    method_id: str
    r_abs: float
    r_norm: float
    mean_time: float
    median_time: float
    n_instances: int
    n_norm_skipped: int


@dataclass
class ComparisonReport:
    summaries: list
    results: list

    def summary_for(self, method_id: str) -> MethodSummary:
        for s in self.summaries:
            if s.method_id == method_id:
                return s
        raise KeyError(method_id)


# ---------------------------------------------------------------------------
# prediction baselines

def project_onto_upper(family, theta, target,
                       config: SolveConfig | None = None) -> np.ndarray:
    """Nearest upper-feasible point to `target` in Euclidean norm.

    For binary x, ||x - t||^2 = sum_j x_j (1 - 2 t_j) + const, so the
    projection is a linear MILP over X(theta).
    """
    target = np.asarray(target, dtype=float)
    region = family.policy_problem_min(theta, np.zeros(family.n1))
    prob = MilpProblem(1.0 - 2.0 * target, region.constraint_matrix,
                       region.constraint_rhs, region.var_lower,
                       region.var_upper, region.integrality,
                       metadata=dict(region.metadata))
    sol = solve_milp(prob, config or SolveConfig())
    assert sol.values is not None, f"projection solve {sol.status}"
    return sol.values


def nearest_neighbor_predict(train_set, family, theta,
                             config: SolveConfig | None = None) -> np.ndarray:
    """Copy the label of the closest training parameter, then project."""
    if len(train_set) == 0:
        raise EmptyTrainSet("nearest neighbor needs a nonempty train set")
    theta = np.asarray(theta, dtype=float)
    dists = [float(np.sum((theta - s.theta) ** 2)) for s in train_set]
    anchor = train_set[int(np.argmin(dists))]
    return project_onto_upper(family, theta, anchor.x_star, config)


@dataclass(frozen=True)
class RegressionConfig:
    hidden_dims: tuple = (128,)
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0


def direct_prediction_train(train_set, family,
                            config: RegressionConfig | None = None) -> Mlp:
    """Squared-loss regression from theta to x_star."""
    if len(train_set) == 0:
        raise EmptyTrainSet("regression needs a nonempty train set")
    config = config or RegressionConfig()
    mlp = Mlp([family.p, *config.hidden_dims, family.n1], seed=config.seed)
    rng = np.random.default_rng(config.seed)
    thetas = np.array([s.theta for s in train_set])
    targets = np.array([s.x_star for s in train_set])
    n = len(train_set)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            cache = []
            pred = mlp.forward(thetas[idx], cache=cache)
            gw, gb = mlp.backward(cache, 2.0 * (pred - targets[idx]))
            mlp.apply_update([g / len(idx) for g in gw],
                             [g / len(idx) for g in gb],
                             config.learning_rate)
    return mlp


def direct_prediction_predict(mlp: Mlp, family, theta,
                              config: SolveConfig | None = None):
    return project_onto_upper(family, theta, mlp.forward(theta), config)


# ---------------------------------------------------------------------------
# evaluation drivers

def _finish_record(family, sample, x_hat, upper_time) -> InstanceRecord:
    t0 = time.perf_counter()
    _, lower, _ = solve_lower(family, sample.theta, x_hat)
    lower_time = time.perf_counter() - t0
    c, _ = family.cost_vectors(sample.theta)
    f = float(c @ x_hat) + lower
    regret = f - sample.z
    if abs(sample.z) < 1e-9:
        logger.info("skipping normalized regret for sample %d: optimal "
                    "value is zero", sample.theta_id)
        norm = float("nan")
    else:
        # |z| keeps the ordering "smaller is better" when optima are negative
        norm = regret / abs(sample.z)
    return InstanceRecord(sample.theta_id, x_hat, True, f, regret, norm,
                          upper_time, lower_time)


def evaluate_policy(method_id: str, family, test_set, upper_fn,
                    labels=None) -> MethodResult:
    """Run `upper_fn(theta) -> x_hat` over a labeled test set, timing the
    upper prediction and the sequential lower solves separately."""
    result = MethodResult(method_id)
    for s in test_set:
        if not np.isfinite(s.z):
            raise MissingLabels(f"sample {s.theta_id} has no optimal value")
        t0 = time.perf_counter()
        x_hat = upper_fn(s.theta)
        upper_time = time.perf_counter() - t0
        result.records.append(_finish_record(family, s, x_hat, upper_time))
    return result


def learned_policy_result(method_id: str, predictor, family,
                          test_set) -> MethodResult:
    return evaluate_policy(
        method_id, family, test_set,
        lambda theta: policy_point(family, theta, predictor.predict(theta)))


def exact_and_heuristic_baselines(family, test_set,
                                  solve_config: SolveConfig | None = None):
    """EXACT plus the stop-after-{1,3}-incumbent heuristics.

    Returns ([MethodResult, ...], trajectories) where trajectories maps the
    method id to (theta_id, time, incumbent objective) rows.
    """
    solve_config = solve_config or SolveConfig()
    exact = MethodResult("EXACT")
    heuristics = {1: MethodResult("FEAS-1"), 3: MethodResult("FEAS-3")}
    trajectories = {"EXACT": [], "FEAS-1": [], "FEAS-3": []}
    for s in test_set:
        t0 = time.perf_counter()
        x, _, z, _, status = solve_master(family, s.theta, solve_config)
        elapsed = time.perf_counter() - t0
        assert status == "optimal", f"exact baseline solve {status}"
        rec = _finish_record(family, s, x, elapsed)
        rec.wall_time_lower = 0.0   # the master solve already covers y
        exact.records.append(rec)
        trajectories["EXACT"].append((s.theta_id, elapsed, z))
        for k, holder in heuristics.items():
            cfg = SolveConfig(gap_tolerance=solve_config.gap_tolerance,
                              time_limit=solve_config.time_limit,
                              stop_after_incumbents=k)
            t0 = time.perf_counter()
            sol = solve_milp(family.master(s.theta), cfg)
            elapsed = time.perf_counter() - t0
            assert sol.values is not None, "heuristic found no incumbent"
            x_hat = np.round(sol.values[:family.n1])
            rec = _finish_record(family, s, x_hat, elapsed)
            rec.wall_time_lower = 0.0
            holder.records.append(rec)
            trajectories[holder.method_id].extend(
                (s.theta_id, t, obj) for t, obj in sol.incumbents)
    return [exact, heuristics[1], heuristics[3]], trajectories


def compute_metrics(results) -> ComparisonReport:
    """Aggregate per-method regret and timing; recomputable from the rows."""
    summaries = []
    for res in results:
        if not res.records:
            raise MissingLabels(f"method {res.method_id} has no records")
        regrets = [r.regret for r in res.records]
        norms = [r.normalized_regret for r in res.records
                 if np.isfinite(r.normalized_regret)]
        times = [r.wall_time_total for r in res.records]
        summaries.append(MethodSummary(
            res.method_id,
            r_abs=sum(regrets) / len(regrets),
            r_norm=sum(norms) / len(norms) if norms else float("nan"),
            mean_time=sum(times) / len(times),
            median_time=statistics.median(times),
            n_instances=len(res.records),
            n_norm_skipped=len(res.records) - len(norms)))
    return ComparisonReport(summaries, list(results))


# ---------------------------------------------------------------------------
# CSV artifacts

RESULT_HEADER = ("theta_id,feasible,true_cost,regret,normalized_regret,"
                 "wall_time_upper,wall_time_lower,wall_time_total")
TRAJECTORY_HEADER = "theta_id,time_s,incumbent_objective"
SUMMARY_HEADER = ("method,r_abs,r_norm,mean_time,median_time,"
                  "n_instances,n_norm_skipped")


def result_csv(result: MethodResult) -> str:
    rows = [RESULT_HEADER]
    for r in result.records:
        norm = f"{r.normalized_regret:.17g}" \
            if np.isfinite(r.normalized_regret) else ""
        rows.append(f"{r.theta_id},{int(r.feasible)},{r.true_cost:.17g},"
                    f"{r.regret:.17g},{norm},{r.wall_time_upper:.6f},"
                    f"{r.wall_time_lower:.6f},{r.wall_time_total:.6f}")
    return "\n".join(rows) + "\n"


def trajectory_csv(rows) -> str:
    out = [TRAJECTORY_HEADER]
    out.extend(f"{tid},{t:.6f},{obj:.17g}" for tid, t, obj in rows)
    return "\n".join(out) + "\n"


def summary_csv(report: ComparisonReport) -> str:
    rows = [SUMMARY_HEADER]
    for s in report.summaries:
        norm = f"{s.r_norm:.17g}" if np.isfinite(s.r_norm) else ""
        rows.append(f"{s.method_id},{s.r_abs:.17g},{norm},"
                    f"{s.mean_time:.6f},{s.median_time:.6f},"
                    f"{s.n_instances},{s.n_norm_skipped}")
    return "\n".join(rows) + "\n"
