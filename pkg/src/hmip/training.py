"""Stochastic subgradient training of the upper-level cost predictor.

The predictor maps theta to the minimize-convention policy objective. Each
step averages per-sample loss subgradients (chained through the network)
and applies SGD, optionally with momentum. Model selection keeps the
snapshot with the lowest evaluation regret.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import LossSpec, loss_value_and_subgradient
from .milp import SolveConfig, solve_milp
from .mlp import Mlp
from .problems import true_cost


class AllRunsFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss_spec: LossSpec
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    momentum: float = 0.0
    lr_grid: tuple = ()
    eval_every: int = 50
    max_abort_frac: float = 0.01

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("bad training hyperparameters")


@dataclass
class TrainedPredictor:
    mlp: Mlp
    config: TrainConfig
    best_eval_regret: float
    # rows of (step, train_batch_loss, eval_regret_snapshot,
    #          eval_regret_best, wall_time)
    curve: list = field(default_factory=list)

    def predict(self, theta):
        return self.mlp.forward(theta)


def policy_point(family, theta, c_min, config: SolveConfig | None = None):
    """Solve the policy MILP argmin c_min^T x over X(theta)."""
    sol = solve_milp(family.policy_problem_min(theta, c_min),
                     config or SolveConfig())
    assert sol.values is not None, f"policy solve {sol.status}"
    return sol.values


def eval_regret(mlp: Mlp, family, eval_set,
                config: SolveConfig | None = None) -> float:
    """Average regret f(x_hat) - z over a labeled set (R_ABS)."""
    total = 0.0
    for s in eval_set:
        x_hat = policy_point(family, s.theta, mlp.forward(s.theta), config)
        total += true_cost(family, s.theta, x_hat) - s.z
    return total / len(eval_set)


def train(mlp: Mlp, family, train_set, eval_set,
          config: TrainConfig) -> TrainedPredictor:
    mlp = mlp.copy()
    rng = np.random.default_rng(config.seed)
    vel_w = [np.zeros_like(w) for w in mlp.weights]
    vel_b = [np.zeros_like(b) for b in mlp.biases]
    best = mlp.copy()
    best_regret = eval_regret(mlp, family, eval_set)
    curve = [(0, float("nan"), best_regret, best_regret, 0.0)]
    start = time.perf_counter()
    aborted = 0
    step_idx = 0
    n = len(train_set)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            batch = [train_set[i] for i in order[lo:lo + config.batch_size]]
            sum_gw = [np.zeros_like(w) for w in mlp.weights]
            sum_gb = [np.zeros_like(b) for b in mlp.biases]
            batch_loss = 0.0
            used = 0
            for s in batch:
                try:
                    cache = []
                    c_hat = mlp.forward(s.theta, cache=cache)
                    ev = loss_value_and_subgradient(
                        config.loss_spec, family, s.theta, s.x_star, c_hat)
                    gw, gb = mlp.backward(cache, ev.subgradient)
                except Exception:
                    aborted += 1
                    if aborted > config.max_abort_frac * max(
                            100, step_idx * config.batch_size):
                        raise
                    continue
                batch_loss += ev.value
                for acc, g in zip(sum_gw, gw):
                    acc += g
                for acc, g in zip(sum_gb, gb):
                    acc += g
                used += 1
            if used == 0:
                continue
            step_idx += 1
            for i in range(len(vel_w)):
                vel_w[i] = config.momentum * vel_w[i] + sum_gw[i] / used
                vel_b[i] = config.momentum * vel_b[i] + sum_gb[i] / used
            mlp.apply_update(vel_w, vel_b, config.learning_rate)
            if step_idx % config.eval_every == 0:
                regret = eval_regret(mlp, family, eval_set)
                if regret < best_regret:
                    best_regret = regret
                    best = mlp.copy()
                curve.append((step_idx, batch_loss / used, regret,
                              best_regret, time.perf_counter() - start))
    regret = eval_regret(mlp, family, eval_set)
    if regret < best_regret:
        best_regret = regret
        best = mlp.copy()
    curve.append((step_idx, float("nan"), regret, best_regret,
                  time.perf_counter() - start))
    return TrainedPredictor(best, config, best_regret, curve)


def grid_search(mlp_template: Mlp, family, train_set, eval_set,
                config: TrainConfig):
    """Train one model per learning rate on a common seed; pick the lowest
    eval regret, ties broken by the smaller rate."""
    grid = sorted(config.lr_grid) or [config.learning_rate]
    best = None
    results = []
    for lr in grid:
        run_cfg = replace(config, learning_rate=lr, lr_grid=())
        try:
            trained = train(mlp_template, family, train_set, eval_set,
                            run_cfg)
        except Exception:
            continue
        results.append((lr, trained.best_eval_regret))
        if best is None or trained.best_eval_regret < best.best_eval_regret:
            best = trained
    if best is None:
        raise AllRunsFailed("every grid point failed")
    return best, results
