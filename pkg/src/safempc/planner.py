"""Sampling-based MPC optimizers over action sequences.

All three modes score candidate sequences with the same trajectory-sampling
evaluator: one particle per ensemble member, each advanced only through its
own member, with the reward discounted by ``gamma`` and averaged over
members, and the cost discounted by ``beta`` and taken as the worst member
at each step. A sequence is feasible iff its accumulated cost is exactly
zero.

* ``rce_solve`` refits the sampling distribution on the feasible set when
  one exists, falling back to the lowest-cost samples otherwise.
* ``cem_penalty_solve`` refits on the top scorers of reward - penalty*cost.
* ``random_solve`` is single-shot uniform shooting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .env import goal_distance
from .errors import ConfigurationError, PropagationError

REFIT_VAR_FLOOR = 1e-6

MODES = ("rce", "cem_penalty", "random")

# evaluator: (n, horizon, action_dim) sequences -> (rewards (n,), costs (n,))
Evaluator = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass
class PlannerConfig:
    mode: str = "rce"
    n_samples: int = 500
    n_elites: int = 12
    horizon: int = 8
    gamma: float = 0.98
    beta: float = 0.4
    penalty: float = 1e4
    max_iters: int = 8
    var_stop_epsilon: float = 0.01
    init_variance: float = 0.25
    random_n_samples: int = 5000
    action_dim: int = 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown planner mode {self.mode!r}")
        if self.n_samples < 1 or self.random_n_samples < 1:
            raise ConfigurationError("sample counts must be >= 1")
        if self.n_elites < 1 or self.n_elites > self.n_samples:
            raise ConfigurationError("need 1 <= n_elites <= n_samples")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if not (0.0 < self.gamma <= 1.0) or not (0.0 < self.beta <= 1.0):
            raise ConfigurationError("gamma and beta must be in (0, 1]")
        if self.penalty < 0:
            raise ConfigurationError("penalty must be >= 0")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.init_variance <= 0:
            raise ConfigurationError("init_variance must be > 0")

    @property
    def flat_dim(self) -> int:
        return self.horizon * self.action_dim


@dataclass
class PlanDistribution:
    """Factorized Gaussian over flattened action sequences."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.variance = np.asarray(self.variance, dtype=np.float64)
        if self.mean.shape != self.variance.shape:
            raise ConfigurationError("mean and variance must have the same shape")
        if np.any(self.variance <= 0):
            raise ConfigurationError("variance must be > 0 elementwise")


@dataclass
class CandidateEvaluation:
    sequence: np.ndarray
    reward: float
    cost: float

    @property
    def feasible(self) -> bool:
        return self.cost == 0.0


@dataclass
class TraceRow:
    iteration: int
    n_feasible: int
    best_reward: float
    best_cost: float
    variance_sum: float

    def as_line(self) -> str:
        return (
            f"iter={self.iteration} feasible={self.n_feasible} "
            f"best_reward={self.best_reward!r} best_cost={self.best_cost!r} "
            f"var_sum={self.variance_sum!r}"
        )


# -- trajectory evaluation ----------------------------------------------------


def make_trajectory_evaluator(dynamics, cost_model, reward_fn, s0: np.ndarray,
                              gamma: float = 0.98, beta: float = 0.4) -> Evaluator:
    """Bind models and an initial state into a batch sequence evaluator.

    ``dynamics`` needs ``n_members`` and ``predict_all_members(states, actions)``
    with states (B, n, obs) and actions (n, act); ``cost_model`` needs
    ``predict_batch`` returning hard {0,1} labels. When ``reward_fn`` carries a
    ``goal_radius`` attribute (see ``make_reward_fn``) goal distances are
    cached between steps instead of recomputed from both state arrays; the
    arithmetic is identical.
    """
    s0 = np.asarray(s0, dtype=np.float64)
    n_members = dynamics.n_members
    goal_radius = getattr(reward_fn, "goal_radius", None)

    def raise_located(states, t):
        bad = np.argwhere(~np.isfinite(states).all(axis=2))
        b, i = int(bad[0][0]), int(bad[0][1])
        raise PropagationError(
            f"non-finite particle state at step {t}, member {b} (sample {i})"
        )

    def evaluate(sequences: np.ndarray):
        seqs = np.asarray(sequences, dtype=np.float64)
        n, horizon = seqs.shape[0], seqs.shape[1]
        states = np.broadcast_to(s0, (n_members, n, s0.shape[-1])).copy()
        rewards = np.zeros(n)
        costs = np.zeros(n)
        d_prev = goal_distance(states) if goal_radius is not None else None
        for t in range(horizon):
            nxt = dynamics.predict_all_members(states, seqs[:, t, :])
            if not np.isfinite(nxt.sum()):
                raise_located(nxt, t)
            if goal_radius is not None:
                d_next = goal_distance(nxt)
                step_rewards = (d_prev - d_next) + (d_next <= goal_radius)
                d_prev = d_next
            else:
                step_rewards = reward_fn(states, nxt)
            rewards += (gamma ** t) * step_rewards.mean(axis=0)
            labels = cost_model.predict_batch(nxt.reshape(n_members * n, -1))
            costs += (beta ** t) * labels.reshape(n_members, n).max(axis=0)
            states = nxt
        return rewards, costs

    return evaluate


def evaluate_trajectory(dynamics, cost_model, reward_fn, s0, sequence,
                        gamma: float = 0.98, beta: float = 0.4) -> tuple[float, float]:
    """Score a single action sequence; see ``make_trajectory_evaluator``."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2:
        raise ConfigurationError("sequence must be (horizon, action_dim)")
    evaluator = make_trajectory_evaluator(dynamics, cost_model, reward_fn, s0, gamma, beta)
    rewards, costs = evaluator(seq[None])
    return float(rewards[0]), float(costs[0])


# -- elite selection and refit -------------------------------------------------


def select_elites_rce(rewards: np.ndarray, costs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the elite set: feasible-by-reward when possible, else lowest-cost.

    With a nonempty feasible set, returns its min(k, |feasible|) highest-reward
    members; otherwise the k lowest-cost candidates, ties broken by higher
    reward, then lower sample index (all sorts stable).
    """
    feasible = np.flatnonzero(costs == 0.0)
    if len(feasible):
        order = np.lexsort((-rewards[feasible],))
        return feasible[order][: min(k, len(feasible))]
    order = np.lexsort((-rewards, costs))
    return order[:k]


def select_elites_penalty(rewards: np.ndarray, costs: np.ndarray, k: int,
                          penalty: float) -> np.ndarray:
    """Indices of the k highest reward - penalty*cost scorers (stable ties)."""
    scores = rewards - penalty * costs
    return np.lexsort((-scores,))[:k]


def refit_distribution(elites: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximum-likelihood refit: empirical mean and floored population variance."""
    mean = elites.mean(axis=0)
    dev = elites - mean
    variance = np.maximum(np.mean(dev * dev, axis=0), REFIT_VAR_FLOOR)
    return mean, variance


def warm_start(prev: Optional[np.ndarray], cfg: PlannerConfig) -> PlanDistribution:
    """Shift the previous solution left one action (zero-filled tail), reset variance."""
    dim = cfg.flat_dim
    if prev is None:
        mean = np.zeros(dim)
    else:
        flat = np.asarray(prev, dtype=np.float64).reshape(-1)
        if flat.size != dim:
            raise ConfigurationError(f"previous sequence has {flat.size} != {dim} entries")
        mean = np.concatenate([flat[cfg.action_dim:], np.zeros(cfg.action_dim)])
    return PlanDistribution(mean, np.full(dim, cfg.init_variance))


# -- solvers --------------------------------------------------------------------


def _sample_population(rng, mean, variance, n):
    draws = rng.standard_normal((n, mean.size))
    return np.clip(mean + np.sqrt(variance) * draws, -1.0, 1.0)


def _iterate(cfg: PlannerConfig, init: PlanDistribution, evaluator: Evaluator,
             seed, select, trace: Optional[list]):
    """Shared sample/evaluate/refit loop; returns the final elite triple."""
    rng = np.random.default_rng(seed)
    mean = init.mean.copy()
    variance = init.variance.copy()
    elite_seqs = elite_rewards = elite_costs = None
    for iteration in range(cfg.max_iters):
        population = _sample_population(rng, mean, variance, cfg.n_samples)
        rewards, costs = evaluator(population.reshape(cfg.n_samples, cfg.horizon, cfg.action_dim))
        elite_idx = select(rewards, costs)
        elite_seqs = population[elite_idx]
        elite_rewards = rewards[elite_idx]
        elite_costs = costs[elite_idx]
        mean, variance = refit_distribution(elite_seqs)
        if trace is not None:
            trace.append(TraceRow(
                iteration=iteration,
                n_feasible=int(np.sum(costs == 0.0)),
                best_reward=float(elite_rewards.max()),
                best_cost=float(elite_costs.min()),
                variance_sum=float(variance.sum()),
            ))
        if variance.sum() < cfg.var_stop_epsilon:
            break
    return elite_seqs, elite_rewards, elite_costs


def rce_solve(cfg: PlannerConfig, init: PlanDistribution, evaluator: Evaluator,
              seed, trace: Optional[list] = None) -> np.ndarray:
    """Feasible-set cross-entropy optimization; returns the best (horizon, action_dim) plan.

    The returned sequence is the highest-reward member of the final elite
    set, preferring feasible members whenever any exist.
    """
    if cfg.mode != "rce":
        raise ConfigurationError(f"rce_solve called with mode {cfg.mode!r}")
    seqs, rewards, costs = _iterate(
        cfg, init, evaluator, seed,
        lambda r, c: select_elites_rce(r, c, cfg.n_elites), trace,
    )
    feasible = np.flatnonzero(costs == 0.0)
    pool = feasible if len(feasible) else np.arange(len(seqs))
    best = pool[int(np.lexsort((-rewards[pool],))[0])]
    return seqs[best].reshape(cfg.horizon, cfg.action_dim)


def cem_penalty_solve(cfg: PlannerConfig, init: PlanDistribution, evaluator: Evaluator,
                      seed, trace: Optional[list] = None) -> np.ndarray:
    """Penalized cross-entropy optimization; returns the best-scoring plan."""
    if cfg.mode != "cem_penalty":
        raise ConfigurationError(f"cem_penalty_solve called with mode {cfg.mode!r}")
    seqs, rewards, costs = _iterate(
        cfg, init, evaluator, seed,
        lambda r, c: select_elites_penalty(r, c, cfg.n_elites, cfg.penalty), trace,
    )
    scores = rewards - cfg.penalty * costs
    best = int(np.lexsort((-scores,))[0])
    return seqs[best].reshape(cfg.horizon, cfg.action_dim)


def random_solve(cfg: PlannerConfig, evaluator: Evaluator, seed) -> np.ndarray:
    """Uniform shooting: best of ``random_n_samples`` by reward - penalty*cost."""
    if cfg.mode != "random":
        raise ConfigurationError(f"random_solve called with mode {cfg.mode!r}")
    rng = np.random.default_rng(seed)
    population = rng.uniform(-1.0, 1.0, size=(cfg.random_n_samples, cfg.flat_dim))
    rewards, costs = evaluator(population.reshape(-1, cfg.horizon, cfg.action_dim))
    scores = rewards - cfg.penalty * costs
    best = int(np.argmax(scores))
    return population[best].reshape(cfg.horizon, cfg.action_dim)


def solve(cfg: PlannerConfig, init: Optional[PlanDistribution], evaluator: Evaluator,
          seed, trace: Optional[list] = None) -> np.ndarray:
    """Mode dispatch used by the agent loop."""
    if cfg.mode == "rce":
        return rce_solve(cfg, init if init is not None else warm_start(None, cfg), evaluator, seed, trace)
    if cfg.mode == "cem_penalty":
        return cem_penalty_solve(cfg, init if init is not None else warm_start(None, cfg), evaluator, seed, trace)
    return random_solve(cfg, evaluator, seed)
