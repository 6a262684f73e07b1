"""Configuration, experiment protocols, logs and the command line."""
from .config import ConfigError, ExperimentConfig, load_schema, read_values
from .experiments import (ABLATION_CELLS, CellResult, ResultSummary, build_cost, build_env,
                          constraint_ratio, run_ablation_matrix, run_cell, run_generalization, train_ilqg)
from .logs import MalformedLog, load_policy, plot_export, save_policy, std_phase_pattern
from .selfcheck import CheckResult, lqr_self_check

__all__ = [
    "ConfigError", "ExperimentConfig", "load_schema", "read_values",
    "ABLATION_CELLS", "CellResult", "ResultSummary", "build_cost", "build_env", "constraint_ratio",
    "run_ablation_matrix", "run_cell", "run_generalization", "train_ilqg",
    "MalformedLog", "load_policy", "plot_export", "save_policy", "std_phase_pattern",
    "CheckResult", "lqr_self_check",
]
