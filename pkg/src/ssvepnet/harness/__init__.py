"""Cross-validation harness, experiment designs, reports and the CLI."""
from .experiment import DESIGNS, GridResult, dataset_digest, grid_search, run_experiment
from .folds import FoldPlan, SplitError, check_disjoint, holdout_split, kfold_split
from .methods import MethodSpec, fit, parse_method_name
from .report import ConfusionMatrix, ExperimentReport, emit_report

__all__ = [
    "DESIGNS", "ConfusionMatrix", "ExperimentReport", "FoldPlan", "GridResult", "MethodSpec",
    "SplitError", "check_disjoint", "dataset_digest", "emit_report", "fit", "grid_search",
    "holdout_split", "kfold_split", "parse_method_name", "run_experiment",
]
