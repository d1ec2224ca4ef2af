"""Learning hierarchical decompositions of parametric mixed-integer
programs: a small exact MILP solver, two parametric problem families,
convex surrogate losses with exact subgradients, an SGD-trained cost
predictor, conformal lower bounds, and baseline evaluation."""

from .milp import (MilpProblem, MilpSolution, SolveConfig, solve_lp,
                   solve_milp, enumerate_optimal, enumerate_feasible)
from .problems import (KnapsackFamily, FacilityFamily, generate_family,
                       solve_master, true_cost, relaxation_bound,
                       family_to_text, family_from_text)
from .losses import LossSpec, LossEval, loss_value_and_subgradient
from .mlp import Mlp
from .datasets import (LabeledSample, Dataset, SplitSpec, DESK_SPLIT,
                       generate_dataset, split_dataset,
                       dataset_to_text, dataset_from_text)
from .training import TrainConfig, TrainedPredictor, train, grid_search
from .conformal import (ConformalModel, ConformalTrainConfig,
                        BoundCertificate, train_conformal, calibrate,
                        online_bound, coverage_eval)
from .evaluation import (MethodResult, ComparisonReport, compute_metrics,
                         nearest_neighbor_predict, direct_prediction_train,
                         direct_prediction_predict,
                         exact_and_heuristic_baselines)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
