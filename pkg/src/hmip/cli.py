"""Command-line pipeline: generate data, train predictors, calibrate and
emit conformal bounds, and run the baseline comparison.

All commands share one configuration (defaults < config file < flags) and a
directory layout rooted at --out:

    <out>/data/<family>/<seed>/family.txt, dataset.txt, splits.txt
    <out>/models/<family>/<seed>/model_<loss>.txt, curve_<loss>.csv
    <out>/conformal/<family>/<seed>/psi_<loss>.txt,
        calibration_<loss>_<alpha>_<convention>.txt
    <out>/eval/<family>/<seed>/results_<family>_<method>.csv,
        trajectory_<family>_<method>.csv, summary.csv, coverage.csv

Exit codes: 0 success, 1 internal error, 2 usage or missing input.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import conformal, datasets, evaluation, problems, training
from .losses import GSPO_GUARD, LossSpec
from .milp import SolveConfig
from .mlp import Mlp


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    family: str = "knapsack"
    J: int = 20
    k: int = 10
    n_clients: int = 15
    n_sites: int = 15
    p: int = 100
    seed: int = 0
    total: int = 700
    n_train: int = 500
    n_eval: int = 50
    n_calib: int = 50
    n_test: int = 100
    split_seed: int = 0
    loss: str = "asl"
    nu: float = 1.0
    omega: float = 0.0
    hidden: str = "128,128,128"
    learning_rate: float = 1e-4
    lr_grid: str = ""
    epochs: int = 3
    batch_size: int = 16
    momentum: float = 0.0
    eval_every: int = 50
    alpha: float = 0.1
    convention: str = "corrected"
    conf_learning_rate: float = 1e-4
    conf_epochs: int = 200
    time_limit: float = 100.0
    out: str = "runs"
    jobs: int = 1

    def hidden_dims(self):
        return tuple(int(v) for v in self.hidden.split(",") if v.strip())

    def family_dims(self):
        if self.family == "knapsack":
            return {"J": self.J, "k": self.k, "p": self.p}
        return {"n_clients": self.n_clients, "n_sites": self.n_sites,
                "p": self.p}


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    default = getattr(RunConfig(), key)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config(path: str | None, overrides: dict) -> RunConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {p}")
        for line in p.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"bad config line: {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in _FIELDS:
                raise UsageError(f"unknown config key: {key!r}")
            values[key] = _coerce(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# paths and shared loading

def _data_dir(cfg):
    return Path(cfg.out) / "data" / cfg.family / str(cfg.seed)


def _model_dir(cfg):
    return Path(cfg.out) / "models" / cfg.family / str(cfg.seed)


def _conf_dir(cfg):
    return Path(cfg.out) / "conformal" / cfg.family / str(cfg.seed)


def _eval_dir(cfg):
    return Path(cfg.out) / "eval" / cfg.family / str(cfg.seed)


def _require(path: Path) -> Path:
    if not path.exists():
        raise UsageError(f"missing input: {path}")
    return path


def _build_family(cfg):
    try:
        return problems.generate_family(cfg.family, cfg.family_dims(),
                                        cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc))


def _load_splits(cfg):
    data_dir = _data_dir(cfg)
    dataset = datasets.dataset_from_text(
        _require(data_dir / "dataset.txt").read_text())
    by_id = {s.theta_id: s for s in dataset.samples}
    parts = []
    for line in _require(data_dir / "splits.txt").read_text().splitlines():
        name, _, ids = line.partition(" ")
        if name in ("train", "eval", "calib", "test"):
            parts.append(datasets.Dataset(
                dataset.family_kind, dataset.seed,
                [by_id[int(i)] for i in ids.split()]))
    if len(parts) != 4:
        raise UsageError(f"malformed splits file in {data_dir}")
    return dataset, parts


def _loss_spec(cfg) -> LossSpec:
    family = _build_family(cfg)
    if cfg.loss == "gspo" and 2 ** family.n1 > GSPO_GUARD:
        raise UsageError(
            f"loss 'gspo' enumerates all 2^{family.n1} upper assignments, "
            f"above the guard of 2^16; use a smaller family or another loss")
    return LossSpec(cfg.loss, nu=cfg.nu, omega_weight=cfg.omega)


def _load_predictor(cfg, loss=None):
    loss = loss or cfg.loss
    path = _require(_model_dir(cfg) / f"model_{loss}.txt")
    return Mlp.from_text(path.read_text())


class _MlpPredictor:
    def __init__(self, mlp):
        self.mlp = mlp

    def predict(self, theta):
        return self.mlp.forward(theta)


# ---------------------------------------------------------------------------
# commands

def cmd_generate(cfg: RunConfig) -> int:
    family = _build_family(cfg)
    spec = datasets.SplitSpec(cfg.n_train, cfg.n_eval, cfg.n_calib,
                              cfg.n_test, seed=cfg.split_seed)
    if spec.total > cfg.total:
        raise UsageError(f"split sizes sum to {spec.total} > total "
                         f"{cfg.total}")
    dataset = datasets.generate_dataset(
        family, cfg.total, cfg.seed,
        SolveConfig(time_limit=cfg.time_limit))
    parts = datasets.split_dataset(dataset, spec)
    data_dir = _data_dir(cfg)
    data_dir.mkdir(parents=True, exist_ok=True)
    (data_dir / "family.txt").write_text(problems.family_to_text(family))
    (data_dir / "dataset.txt").write_text(datasets.dataset_to_text(dataset))
    lines = [f"split_seed {cfg.split_seed}"]
    for name, part in zip(("train", "eval", "calib", "test"), parts):
        lines.append(name + " " + " ".join(str(s.theta_id)
                                           for s in part.samples))
    (data_dir / "splits.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(dataset)} samples to {data_dir}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    family = _build_family(cfg)
    spec = _loss_spec(cfg)
    _, (train_set, eval_set, _, _) = _load_splits(cfg)
    grid = tuple(float(v) for v in cfg.lr_grid.split(",") if v.strip())
    train_cfg = training.TrainConfig(
        spec, learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
        epochs=cfg.epochs, seed=cfg.seed, momentum=cfg.momentum,
        lr_grid=grid, eval_every=cfg.eval_every)
    template = Mlp([family.p, *cfg.hidden_dims(), family.n1], seed=cfg.seed)
    if grid:
        trained, results = training.grid_search(
            template, family, train_set.samples, eval_set.samples, train_cfg)
        print("grid search:", " ".join(f"{lr:g}:{r:.4f}"
                                       for lr, r in results))
    else:
        trained = training.train(template, family, train_set.samples,
                                 eval_set.samples, train_cfg)
    print(f"selected learning rate {trained.config.learning_rate:g}, "
          f"eval regret {trained.best_eval_regret:.6f}")
    model_dir = _model_dir(cfg)
    model_dir.mkdir(parents=True, exist_ok=True)
    (model_dir / f"model_{cfg.loss}.txt").write_text(trained.mlp.to_text())
    rows = ["step,train_loss,eval_regret,best_eval_regret,wall_time"]
    rows += [f"{s},{tl:.17g},{r:.17g},{b:.17g},{t:.6f}"
             for s, tl, r, b, t in trained.curve]
    (model_dir / f"curve_{cfg.loss}.csv").write_text("\n".join(rows) + "\n")
    return 0


def _calibration_path(cfg):
    return _conf_dir(cfg) / (f"calibration_{cfg.loss}_{cfg.alpha:g}_"
                             f"{cfg.convention}.txt")


def cmd_calibrate(cfg: RunConfig) -> int:
    family = _build_family(cfg)
    predictor = _MlpPredictor(_load_predictor(cfg))
    _, (_, eval_set, calib_set, _) = _load_splits(cfg)
    psi = Mlp([conformal.feature_dim(family), *cfg.hidden_dims(), 1],
              seed=cfg.seed)
    psi = conformal.train_conformal(
        psi, family, eval_set.samples, predictor,
        conformal.ConformalTrainConfig(learning_rate=cfg.conf_learning_rate,
                                       epochs=cfg.conf_epochs,
                                       seed=cfg.seed))
    model = conformal.ConformalModel(psi, alpha=cfg.alpha,
                                     convention=cfg.convention)
    q, target = conformal.calibrate(model, family, calib_set.samples,
                                    predictor)
    conf_dir = _conf_dir(cfg)
    conf_dir.mkdir(parents=True, exist_ok=True)
    (conf_dir / f"psi_{cfg.loss}.txt").write_text(psi.to_text())
    _calibration_path(cfg).write_text(conformal.calibration_to_text(model))
    print(f"q_alpha {q:.6g}, coverage_target {target:.6g}")
    return 0


def _load_conformal(cfg):
    psi = Mlp.from_text(
        _require(_conf_dir(cfg) / f"psi_{cfg.loss}.txt").read_text())
    return conformal.calibration_from_text(
        _require(_calibration_path(cfg)).read_text(), psi)


def cmd_bound(cfg: RunConfig, theta_file: str) -> int:
    family = _build_family(cfg)
    predictor = _MlpPredictor(_load_predictor(cfg))
    model = _load_conformal(cfg)
    certs = []
    for i, line in enumerate(_require(Path(theta_file))
                             .read_text().splitlines()):
        if not line.strip():
            continue
        theta = np.array([float(v) for v in line.split()])
        certs.append(conformal.online_bound(model, family, theta, predictor,
                                            theta_id=i))
    sys.stdout.write(conformal.certificates_to_csv(certs))
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    family = _build_family(cfg)
    _, (train_set, eval_set, calib_set, test_set) = _load_splits(cfg)
    results = []
    trajectories = {}

    results.append(evaluation.evaluate_policy(
        "NN", family, test_set.samples,
        lambda th: evaluation.nearest_neighbor_predict(
            train_set.samples, family, th)))
    dp_net = evaluation.direct_prediction_train(
        train_set.samples, family,
        evaluation.RegressionConfig(hidden_dims=cfg.hidden_dims(),
                                    seed=cfg.seed))
    results.append(evaluation.evaluate_policy(
        "DP", family, test_set.samples,
        lambda th: evaluation.direct_prediction_predict(dp_net, family, th)))
    base, trajectories = evaluation.exact_and_heuristic_baselines(
        family, test_set.samples, SolveConfig(time_limit=cfg.time_limit))
    results.extend(base)
    for loss in ("asl", "z", "fy", "gspo"):
        path = _model_dir(cfg) / f"model_{loss}.txt"
        if path.exists():
            predictor = _MlpPredictor(Mlp.from_text(path.read_text()))
            results.append(evaluation.learned_policy_result(
                loss.upper(), predictor, family, test_set.samples))
    report = evaluation.compute_metrics(results)

    eval_dir = _eval_dir(cfg)
    eval_dir.mkdir(parents=True, exist_ok=True)
    for res in results:
        (eval_dir / f"results_{cfg.family}_{res.method_id}.csv").write_text(
            evaluation.result_csv(res))
    for method, rows in trajectories.items():
        (eval_dir / f"trajectory_{cfg.family}_{method}.csv").write_text(
            evaluation.trajectory_csv(rows))
    (eval_dir / "summary.csv").write_text(evaluation.summary_csv(report))

    cov_rows = ["loss,alpha,convention,q_alpha,coverage_target,"
                "r_rel_plus,r_rel_minus,r_percent,empirical_coverage"]
    cal_path = _calibration_path(cfg)
    if cal_path.exists():
        predictor = _MlpPredictor(_load_predictor(cfg))
        model = _load_conformal(cfg)
        plus, minus, pct, cov = conformal.coverage_eval(
            model, family, test_set.samples, predictor)
        cov_rows.append(f"{cfg.loss},{cfg.alpha:g},{cfg.convention},"
                        f"{model.q_alpha:.17g},{model.coverage_target:.17g},"
                        f"{plus:.17g},{minus:.17g},{pct:.17g},{cov:.17g}")
    (eval_dir / "coverage.csv").write_text("\n".join(cov_rows) + "\n")
    print(f"wrote evaluation artifacts to {eval_dir}")
    return 0


def cmd_report(cfg: RunConfig) -> int:
    eval_dir = _eval_dir(cfg)
    summary = _require(eval_dir / "summary.csv").read_text().splitlines()
    header = summary[0].split(",")
    print(f"{'method':<8} {'r_abs':>12} {'r_norm':>12} {'mean_t':>10} "
          f"{'median_t':>10}")
    for row in summary[1:]:
        vals = dict(zip(header, row.split(",")))
        print(f"{vals['method']:<8} {float(vals['r_abs']):>12.6f} "
              f"{float(vals['r_norm'] or 'nan'):>12.6f} "
              f"{float(vals['mean_time']):>10.4f} "
              f"{float(vals['median_time']):>10.4f}")
    cov_path = eval_dir / "coverage.csv"
    if cov_path.exists():
        lines = cov_path.read_text().splitlines()
        if len(lines) > 1:
            print("\nconformal coverage:")
            for key, val in zip(lines[0].split(","), lines[1].split(",")):
                print(f"  {key}: {val}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(parser):
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--family", choices=("knapsack", "facility"))
    parser.add_argument("--loss", choices=("z", "asl", "fy", "gspo"))
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--convention", choices=("corrected", "paper"))
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--J", type=int)
    parser.add_argument("--k", type=int)
    parser.add_argument("--n-clients", dest="n_clients", type=int)
    parser.add_argument("--n-sites", dest="n_sites", type=int)
    parser.add_argument("--p", type=int)
    parser.add_argument("--total", type=int)
    parser.add_argument("--n-train", dest="n_train", type=int)
    parser.add_argument("--n-eval", dest="n_eval", type=int)
    parser.add_argument("--n-calib", dest="n_calib", type=int)
    parser.add_argument("--n-test", dest="n_test", type=int)
    parser.add_argument("--split-seed", dest="split_seed", type=int)
    parser.add_argument("--nu", type=float)
    parser.add_argument("--omega", type=float)
    parser.add_argument("--hidden")
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--lr-grid", dest="lr_grid")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--time-limit", dest="time_limit", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmip",
        description="hierarchical MIP learning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "calibrate", "bound", "evaluate",
                 "report"):
        p = sub.add_parser(name)
        _add_common(p)
        if name == "bound":
            p.add_argument("theta_file",
                           help="text file with one theta per line")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    ns = vars(args)
    overrides = {k: ns.get(k) for k in _FIELDS}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "calibrate":
            return cmd_calibrate(cfg)
        if args.command == "bound":
            return cmd_bound(cfg, args.theta_file)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "report":
            return cmd_report(cfg)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal failure
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
