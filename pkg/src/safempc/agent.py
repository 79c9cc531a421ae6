"""Outer training loop: random seeding phase, periodic model refits, MPC rollout.

A run steps one environment for ``init_random_steps`` uniform-random steps,
then for ``total_steps`` planned steps. Every ``retrain_interval`` planned
steps the dynamics ensemble and the cost classifier are refit from scratch
on everything buffered so far. Each planned step solves the configured
optimizer from a warm-started distribution and applies the first action of
the returned sequence.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from . import planner as planner_mod
from .data import Transition
from .dynamics import EnsembleDynamicsModel, TrainConfig, fit_ensemble
from .env import ACTION_DIM, GoalNavEnv, WorldConfig, make_reward_fn
from .errors import DivergenceError
from .gbdt import DualBuffer, GbdtConfig, GbdtModel, fit_classifier
from .planner import PlannerConfig, warm_start

# salts for per-purpose random streams derived from the run seed
_EPISODE_SALT = 11
_RANDOM_POLICY_SALT = 23
_MODEL_SALT = 37
_PLANNER_SALT = 53


def _derive_seed(*entropy) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


@dataclass
class AgentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    dynamics_train: TrainConfig = field(default_factory=TrainConfig)
    classifier: GbdtConfig = field(default_factory=GbdtConfig)
    init_random_steps: int = 5000
    retrain_interval: int = 400
    total_steps: int = 10000
    n_members: int = 4
    dynamics_hidden: tuple = (1024, 1024, 1024)
    max_safe_ratio: float = 3.0
    safe_capacity: Optional[int] = None
    unsafe_capacity: Optional[int] = None

    def __post_init__(self):
        if self.init_random_steps < 1:
            raise ValueError("init_random_steps must be >= 1")
        if self.retrain_interval < 1:
            raise ValueError("retrain_interval must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.n_members < 1:
            raise ValueError("n_members must be >= 1")


@dataclass
class EpisodeRecord:
    episode: int
    steps_so_far: int
    reward: float
    cost: int
    cumulative_cost: int
    wall_clock: float


@dataclass
class RunRecord:
    seed: int
    config: dict
    episodes: list[EpisodeRecord] = field(default_factory=list)
    total_steps: int = 0
    total_violations: int = 0

    @property
    def episodic_rewards(self) -> np.ndarray:
        return np.array([e.reward for e in self.episodes])

    @property
    def episodic_costs(self) -> np.ndarray:
        return np.array([e.cost for e in self.episodes])


class _EpisodeTracker:
    """Accumulates per-episode reward/cost rows across phase boundaries."""

    def __init__(self, record: RunRecord):
        self.record = record
        self.reward = 0.0
        self.cost = 0
        self.steps_in_episode = 0
        self.started = time.perf_counter()

    def add_step(self, reward: float, cost: int):
        self.reward += reward
        self.cost += cost
        self.steps_in_episode += 1
        self.record.total_steps += 1
        self.record.total_violations += cost

    def close_episode(self):
        if self.steps_in_episode == 0:
            return
        now = time.perf_counter()
        self.record.episodes.append(EpisodeRecord(
            episode=len(self.record.episodes),
            steps_so_far=self.record.total_steps,
            reward=self.reward,
            cost=self.cost,
            cumulative_cost=self.record.total_violations,
            wall_clock=now - self.started,
        ))
        self.reward = 0.0
        self.cost = 0
        self.steps_in_episode = 0
        self.started = now


def collect_random(env: GoalNavEnv, n: int, seed: int,
                   on_step: Optional[Callable] = None,
                   on_reset: Optional[Callable[[int], None]] = None) -> list[Transition]:
    """Step ``n`` uniform-random actions across as many episodes as needed.

    The environment must already be reset; episodes roll over automatically
    with seeds derived from ``seed``. ``on_step`` (if given) receives
    ``(obs, action, result)`` after every step, letting callers record
    rewards or episode boundaries without re-running the policy.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    policy_rng = np.random.default_rng([seed, _RANDOM_POLICY_SALT])
    episode_rng = np.random.default_rng([seed, _EPISODE_SALT])
    obs = env.observe()
    transitions = []
    for _ in range(n):
        action = policy_rng.uniform(-1.0, 1.0, size=ACTION_DIM)
        result = env.step(action)
        transitions.append(Transition(obs, action, result.next_observation,
                                      result.cost, reset=result.goal_reached))
        if on_step is not None:
            on_step(obs, action, result)
        obs = result.next_observation
        if result.done:
            episode_seed = int(episode_rng.integers(2 ** 31))
            obs = env.reset(episode_seed)
            if on_reset is not None:
                on_reset(episode_seed)
    return transitions


@dataclass
class Models:
    dynamics: EnsembleDynamicsModel
    cost: GbdtModel
    version: int = 0


def train_and_rollout(cfg: AgentConfig, env: GoalNavEnv, seed: int,
                      trace_sink: Optional[Callable[[int, Sequence], None]] = None,
                      step_hook: Optional[Callable] = None,
                      reset_hook: Optional[Callable[[int], None]] = None,
                      checkpoint_hook: Optional[Callable[[int, "Models"], None]] = None,
                      ) -> RunRecord:
    """Run one complete training rollout and return its record.

    ``trace_sink(step, trace_rows)`` receives planner convergence traces,
    ``step_hook(obs, action, result)`` every environment step,
    ``reset_hook(seed)`` every episode reset, and
    ``checkpoint_hook(planned_step, models)`` after every model refit.
    """
    record = RunRecord(seed=seed, config=_config_snapshot(cfg, seed))
    tracker = _EpisodeTracker(record)
    # distinct stream from collect_random's episode seeds to avoid layout aliasing
    episode_rng = np.random.default_rng([seed, _EPISODE_SALT, 2])

    def reset_env(reset_seed: int) -> np.ndarray:
        first = env.reset(reset_seed)
        if reset_hook is not None:
            reset_hook(reset_seed)
        return first

    reset_env(seed)
    dynamics_buffer: list[Transition] = []
    cost_buffer = DualBuffer(cfg.safe_capacity, cfg.unsafe_capacity, cfg.max_safe_ratio)

    def record_step(obs, action, result):
        tracker.add_step(result.reward, result.cost)
        cost_buffer.ingest(result.next_observation, result.cost)
        if step_hook is not None:
            step_hook(obs, action, result)
        if result.done:
            tracker.close_episode()

    def keep_transition(tr: Transition):
        if not tr.reset:
            dynamics_buffer.append(tr)

    # phase 1: uniform-random exploration
    for tr in collect_random(env, cfg.init_random_steps, seed,
                             on_step=record_step, on_reset=reset_hook):
        keep_transition(tr)

    # phase 2: plan / act / ingest, refitting models on schedule
    reward_fn = make_reward_fn(cfg.world)
    models: Optional[Models] = None
    prev_plan: Optional[np.ndarray] = None
    obs = env.observe()
    for planned_step in range(cfg.total_steps):
        if planned_step % cfg.retrain_interval == 0:
            models = _refit_models(cfg, dynamics_buffer, cost_buffer, seed,
                                   version=(models.version + 1 if models else 1),
                                   at_step=planned_step)
            if checkpoint_hook is not None:
                checkpoint_hook(planned_step, models)
        evaluator = planner_mod.make_trajectory_evaluator(
            models.dynamics, models.cost, reward_fn, obs,
            gamma=cfg.planner.gamma, beta=cfg.planner.beta,
        )
        trace: Optional[list] = [] if trace_sink is not None else None
        solver_seed = np.random.SeedSequence([seed, _PLANNER_SALT, planned_step])
        try:
            plan = planner_mod.solve(cfg.planner, warm_start(prev_plan, cfg.planner),
                                     evaluator, solver_seed, trace)
        except Exception as exc:
            raise RuntimeError(f"planner failed at planned step {planned_step}") from exc
        if trace_sink is not None:
            trace_sink(planned_step, trace)
        action = plan[0]
        result = env.step(action)
        record_step(obs, action, result)
        keep_transition(Transition(obs, action, result.next_observation,
                                   result.cost, reset=result.goal_reached))
        obs = result.next_observation
        prev_plan = plan
        if result.done:
            obs = reset_env(int(episode_rng.integers(2 ** 31)))
            prev_plan = None  # fresh layout, cold-start the next plan
    tracker.close_episode()  # flush a partial trailing episode, if any
    return record


def _refit_models(cfg: AgentConfig, dynamics_buffer, cost_buffer, seed, version, at_step):
    env_cfg = cfg.world
    dynamics = EnsembleDynamicsModel(
        env_cfg.observation_dim, ACTION_DIM, cfg.n_members,
        hidden=cfg.dynamics_hidden, seed=seed,
    )
    try:
        fit_ensemble(dynamics, dynamics_buffer, cfg.dynamics_train,
                     seed=_derive_seed(seed, _MODEL_SALT, version))
    except DivergenceError as exc:
        raise DivergenceError(f"dynamics refit at planned step {at_step}: {exc}") from exc
    cost_model = fit_classifier(
        cfg.classifier, cost_buffer, seed=_derive_seed(seed, _MODEL_SALT, version, 1),
    )
    return Models(dynamics=dynamics, cost=cost_model, version=version)


def _config_snapshot(cfg: AgentConfig, seed: int) -> dict:
    snap = asdict(cfg)
    snap["dynamics_hidden"] = list(cfg.dynamics_hidden)
    snap["run_seed"] = seed
    return snap
