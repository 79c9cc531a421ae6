"""Constrained model-based RL toolkit.

Learns unknown dynamics (neural-network ensemble) and an unknown indicator
constraint (gradient-boosted trees) from interaction data, then plans with
model predictive control using the robust cross-entropy method, with
penalized-CEM and random-shooting baselines, on a built-in 2D
goal-navigation environment.
"""

__version__ = "0.1.0"

from .agent import AgentConfig, RunRecord, collect_random, train_and_rollout
from .data import Transition
from .dynamics import (
    EnsembleDynamicsModel,
    MlpRegressor,
    TrainConfig,
    fit_ensemble,
    gradient_check,
)
from .env import GoalNavEnv, StepResult, WorldConfig, make_reward_fn, true_reward
from .gbdt import DualBuffer, GbdtConfig, GbdtModel, fit_classifier, fit_gbdt, ingest
from .planner import (
    CandidateEvaluation,
    PlanDistribution,
    PlannerConfig,
    cem_penalty_solve,
    evaluate_trajectory,
    make_trajectory_evaluator,
    random_solve,
    rce_solve,
    warm_start,
)

__all__ = [
    "AgentConfig",
    "CandidateEvaluation",
    "DualBuffer",
    "EnsembleDynamicsModel",
    "GbdtConfig",
    "GbdtModel",
    "GoalNavEnv",
    "MlpRegressor",
    "PlanDistribution",
    "PlannerConfig",
    "RunRecord",
    "StepResult",
    "TrainConfig",
    "Transition",
    "WorldConfig",
    "cem_penalty_solve",
    "collect_random",
    "evaluate_trajectory",
    "fit_classifier",
    "fit_ensemble",
    "fit_gbdt",
    "gradient_check",
    "ingest",
    "make_reward_fn",
    "make_trajectory_evaluator",
    "random_solve",
    "rce_solve",
    "train_and_rollout",
    "true_reward",
    "warm_start",
]
