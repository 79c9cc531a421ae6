"""Task presets and the desk-scale experiment profile.

Level-1 tasks use 4 hazards and 1 vase; level-2 tasks use 8 hazards and 4
vases. Planner, dynamics, and classifier defaults are the full-scale
training hyperparameters; ``DESK_OVERRIDES`` shrinks the models and sample
counts so a complete multi-seed comparison fits a commodity-machine budget
while preserving every structural choice (horizon, discounts, ensemble
trajectory sampling, elite rules).
"""

from __future__ import annotations

from .agent import AgentConfig
from .dynamics import TrainConfig
from .env import WorldConfig
from .gbdt import GbdtConfig
from .planner import PlannerConfig

TASKS = ("point_goal1", "point_goal2", "car_goal1", "car_goal2")

METHODS = {
    "mpc_rce": "rce",
    "mpc_cem": "cem_penalty",
    "mpc_random": "random",
}


def world_config(task: str) -> WorldConfig:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {TASKS}")
    robot = "point" if task.startswith("point") else "car"
    level2 = task.endswith("2")
    return WorldConfig(
        arena_half_extent=2.5,
        n_hazards=8 if level2 else 4,
        n_vases=4 if level2 else 1,
        hazard_radius=0.3,
        vase_radius=0.2,
        goal_radius=0.3,
        robot_kind=robot,
        episode_length=400,
        k_nearest=4,
    )


def ensemble_size(task: str) -> int:
    return 5 if task.startswith("car") else 4


def agent_config(task: str, method: str) -> AgentConfig:
    """Full-scale defaults for a (task, method) pair."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    return AgentConfig(
        world=world_config(task),
        planner=PlannerConfig(mode=METHODS[method]),
        dynamics_train=TrainConfig(),
        classifier=GbdtConfig(),
        n_members=ensemble_size(task),
    )


# Desk-scale profile: reduced model sizes and sample counts (documented in the
# README); world geometry, horizon, discounts, and selection rules unchanged.
# Narrow networks cover less optimizer distance per epoch than the full-width
# default, so the profile raises the learning rate and shrinks the batch.
# Shorter episodes give the classifier more layout diversity per step, and the
# shallow, strongly-regularized trees with a looser safe:unsafe cap are what
# make it transfer across layouts from a small violation budget.
DESK_OVERRIDES = {
    "world.episode_length": "200",
    "dynamics_hidden": "48,48",
    "dynamics_train.epochs": "15",
    "dynamics_train.batch_size": "128",
    "dynamics_train.learning_rate": "0.003",
    "retrain_interval": "1000",
    "max_safe_ratio": "10.0",
    "planner.n_samples": "60",
    "planner.n_elites": "10",
    "planner.max_iters": "6",
    "planner.random_n_samples": "400",
    "classifier.n_estimators": "80",
    "classifier.max_depth": "3",
    "classifier.max_leaves": "8",
    "classifier.min_samples_leaf": "15",
}
