"""Maximum-entropy iLQG over fitted time-varying linear-Gaussian dynamics."""
from .backward import BackwardResult, NotPositiveDefinite, backward_pass, backward_pass_adaptive
from .cost import CostExpansion, CostSpec, QuadraticCost, trajectory_cost
from .fit import InsufficientData, fit_dynamics
from .optimize import OptimizationAborted, TrainingLog, initial_policy, optimize
from .rollout import InsertionSystem, LinearSystem, RolloutDiverged, active_actions, forward_pass
from .types import IlqgConfig, LinearGaussianDynamics, LinearGaussianPolicy, Trajectory

__all__ = [
    "BackwardResult", "NotPositiveDefinite", "backward_pass", "backward_pass_adaptive",
    "CostExpansion", "CostSpec", "QuadraticCost", "trajectory_cost",
    "InsufficientData", "fit_dynamics",
    "OptimizationAborted", "TrainingLog", "initial_policy", "optimize",
    "InsertionSystem", "LinearSystem", "RolloutDiverged", "active_actions", "forward_pass",
    "IlqgConfig", "LinearGaussianDynamics", "LinearGaussianPolicy", "Trajectory",
]
