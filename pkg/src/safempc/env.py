"""Deterministic 2D goal-navigation environment with hazards and vases.

A point or car robot navigates a square arena toward a goal circle while
avoiding circular hazard areas and static vases. Entering a hazard (or
touching a vase) emits a binary cost indicator of 1 for that step; the
episode never terminates early on cost. Reaching the goal pays a +1 bonus
on top of a dense distance-progress term, and the goal is relocated.

Observations are flat vectors of relative coordinates:

    [velocity (2), goal offset (2),
     K nearest hazard offsets (2K, ascending distance),
     K nearest vase offsets (2K, ascending distance)]

For the car robot all offsets are rotated into the robot frame and the
velocity slot holds ``(speed, 0)``; the point robot uses world-frame
offsets and ``(vx, vy)``. Unused perception slots are filled with a
sentinel offset of magnitude ``2 * arena_half_extent``.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, asdict
from typing import Callable, Optional, TextIO

import numpy as np

from .errors import ConfigurationError, ShapeError

DT = 0.1
ROBOT_RADIUS = 0.1
ACTION_DIM = 2
_PLACEMENT_ATTEMPTS = 200


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if a == -math.pi else a


@dataclass(frozen=True)
class WorldConfig:
    arena_half_extent: float = 2.5
    n_hazards: int = 4
    n_vases: int = 1
    hazard_radius: float = 0.3
    vase_radius: float = 0.2
    goal_radius: float = 0.3
    robot_kind: str = "point"  # "point" or "car"
    episode_length: int = 400
    k_nearest: int = 4
    seed: int = 0
    max_speed: float = 1.0

    def __post_init__(self):
        if self.robot_kind not in ("point", "car"):
            raise ConfigurationError(f"unknown robot_kind {self.robot_kind!r}")
        for name in ("arena_half_extent", "hazard_radius", "vase_radius", "goal_radius", "max_speed"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.n_hazards < 0 or self.n_vases < 0:
            raise ConfigurationError("object counts must be >= 0")
        if self.episode_length < 1:
            raise ConfigurationError("episode_length must be >= 1")
        if self.k_nearest < 0:
            raise ConfigurationError("k_nearest must be >= 0")

    @property
    def observation_dim(self) -> int:
        return 4 + 4 * self.k_nearest

    @property
    def sentinel_offset(self) -> np.ndarray:
        return np.array([2.0 * self.arena_half_extent, 0.0])


# Goal offset always occupies observation slots 2:4 regardless of k_nearest.
GOAL_OFFSET_SLICE = slice(2, 4)


def hazard_block_slice(cfg: WorldConfig) -> slice:
    return slice(4, 4 + 2 * cfg.k_nearest)


def vase_block_slice(cfg: WorldConfig) -> slice:
    return slice(4 + 2 * cfg.k_nearest, 4 + 4 * cfg.k_nearest)


@dataclass
class StepResult:
    next_observation: np.ndarray
    reward: float
    cost: int
    goal_reached: bool
    done: bool


def goal_distance(obs: np.ndarray) -> np.ndarray:
    """Norm of the goal-offset fields; vectorized over leading axes."""
    g = obs[..., GOAL_OFFSET_SLICE]
    return np.sqrt(np.einsum("...i,...i->...", g, g))


def true_reward(prev_obs: np.ndarray, next_obs: np.ndarray, goal_radius: float):
    """Reward implied by a pair of observations: distance progress plus goal bonus.

    Computed purely from the goal-offset fields, so it applies equally to
    real and model-predicted observations. Vectorized over leading axes.
    """
    prev_obs = np.asarray(prev_obs, dtype=np.float64)
    next_obs = np.asarray(next_obs, dtype=np.float64)
    if prev_obs.shape[-1] != next_obs.shape[-1]:
        raise ShapeError(
            f"observation lengths differ: {prev_obs.shape[-1]} vs {next_obs.shape[-1]}"
        )
    if prev_obs.shape[-1] < 4:
        raise ShapeError("observation too short to contain a goal offset")
    d_prev = goal_distance(prev_obs)
    d_next = goal_distance(next_obs)
    reward = (d_prev - d_next) + (d_next <= goal_radius)
    return float(reward) if reward.ndim == 0 else reward


def make_reward_fn(cfg: WorldConfig) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Bind ``true_reward`` to a config for use as a planner scoring function.

    The returned callable carries a ``goal_radius`` attribute so rollout code
    can recognize it and cache goal distances between steps.
    """
    radius = cfg.goal_radius

    def reward_fn(prev_obs, next_obs):
        return true_reward(prev_obs, next_obs, radius)

    reward_fn.goal_radius = radius
    return reward_fn


class GoalNavEnv:
    """Mutable single-episode environment; see module docstring for semantics."""

    def __init__(self, config: WorldConfig):
        self.config = config
        self._rng: Optional[np.random.Generator] = None
        self._steps = 0
        self._ready = False
        self._pos = np.zeros(2)
        self._vel = np.zeros(2)  # point only
        self._speed = 0.0  # car only
        self._heading = 0.0  # car only
        self._goal = np.zeros(2)
        self._hazards = np.zeros((0, 2))
        self._vases = np.zeros((0, 2))

    # -- layout ------------------------------------------------------------

    def _sample_position(self, margin: float, clearances) -> np.ndarray:
        """Rejection-sample a point inside the arena honoring (centers, min_dist) pairs."""
        a = self.config.arena_half_extent
        lo, hi = -a + margin, a - margin
        if lo > hi:
            raise ConfigurationError("arena too small for object radius")
        for _ in range(_PLACEMENT_ATTEMPTS):
            p = self._rng.uniform(lo, hi, size=2)
            ok = True
            for centers, min_dist in clearances:
                if len(centers) and np.min(np.linalg.norm(centers - p, axis=1)) < min_dist:
                    ok = False
                    break
            if ok:
                return p
        raise ConfigurationError(
            "placement failed after "
            f"{_PLACEMENT_ATTEMPTS} attempts; arena too crowded"
        )

    def _goal_clearances(self):
        cfg = self.config
        return [
            (self._hazards, cfg.goal_radius + cfg.hazard_radius + ROBOT_RADIUS),
            (self._vases, cfg.goal_radius + cfg.vase_radius + ROBOT_RADIUS),
        ]

    def _sample_goal(self, away_from_robot: bool) -> np.ndarray:
        clearances = self._goal_clearances()
        if away_from_robot:
            clearances.append((self._pos[None, :], self.config.goal_radius + ROBOT_RADIUS))
        return self._sample_position(self.config.goal_radius, clearances)

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        """Place all objects from the seeded generator and return the initial observation."""
        cfg = self.config
        if seed is None:
            seed = cfg.seed
        self._rng = np.random.default_rng(seed)
        self._hazards = np.array(
            [self._sample_position(cfg.hazard_radius, []) for _ in range(cfg.n_hazards)]
        ).reshape(cfg.n_hazards, 2)
        self._vases = np.array(
            [self._sample_position(cfg.vase_radius, []) for _ in range(cfg.n_vases)]
        ).reshape(cfg.n_vases, 2)
        self._goal = self._sample_goal(away_from_robot=False)
        self._pos = self._sample_position(
            ROBOT_RADIUS,
            [
                (self._hazards, cfg.hazard_radius + ROBOT_RADIUS),
                (self._vases, cfg.vase_radius + 2 * ROBOT_RADIUS),
                (self._goal[None, :], cfg.goal_radius + ROBOT_RADIUS),
            ],
        )
        self._vel = np.zeros(2)
        self._speed = 0.0
        self._heading = 0.0
        self._steps = 0
        self._ready = True
        return self._observe()

    # -- dynamics ----------------------------------------------------------

    def _goal_distance(self) -> float:
        return float(np.linalg.norm(self._goal - self._pos))

    def cost_at(self, position: np.ndarray) -> int:
        """Indicator cost of a robot center position under the current layout."""
        cfg = self.config
        if len(self._hazards):
            if np.min(np.linalg.norm(self._hazards - position, axis=1)) <= cfg.hazard_radius:
                return 1
        if len(self._vases):
            if np.min(np.linalg.norm(self._vases - position, axis=1)) <= cfg.vase_radius + ROBOT_RADIUS:
                return 1
        return 0

    def step(self, action) -> StepResult:
        if not self._ready:
            raise RuntimeError("step() called before reset()")
        if self._steps >= self.config.episode_length:
            raise RuntimeError("episode finished; call reset()")
        cfg = self.config
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(-1), -1.0, 1.0)
        if a.shape != (ACTION_DIM,):
            raise ShapeError(f"action must have {ACTION_DIM} components")
        half = cfg.arena_half_extent

        d_before = self._goal_distance()
        if cfg.robot_kind == "point":
            self._vel = np.clip(self._vel + a * DT, -cfg.max_speed, cfg.max_speed)
            self._pos = np.clip(self._pos + self._vel * DT, -half, half)
        else:
            self._speed = float(np.clip(self._speed + a[0] * DT, -cfg.max_speed, cfg.max_speed))
            self._heading = wrap_angle(self._heading + a[1] * DT)
            direction = np.array([math.cos(self._heading), math.sin(self._heading)])
            self._pos = np.clip(self._pos + self._speed * DT * direction, -half, half)
        d_after = self._goal_distance()

        goal_reached = d_after <= cfg.goal_radius
        reward = (d_before - d_after) + (1.0 if goal_reached else 0.0)
        cost = self.cost_at(self._pos)
        if goal_reached:
            self._goal = self._sample_goal(away_from_robot=True)
        self._steps += 1
        done = self._steps >= cfg.episode_length
        return StepResult(self._observe(), reward, cost, goal_reached, done)

    # -- observation -------------------------------------------------------

    def _rotation(self) -> np.ndarray:
        if self.config.robot_kind == "point":
            return np.eye(2)
        c, s = math.cos(-self._heading), math.sin(-self._heading)
        return np.array([[c, -s], [s, c]])

    def _object_block(self, centers: np.ndarray, rot: np.ndarray) -> np.ndarray:
        cfg = self.config
        block = np.tile(cfg.sentinel_offset, (cfg.k_nearest, 1))
        if len(centers):
            offsets = (centers - self._pos) @ rot.T
            dists = np.linalg.norm(offsets, axis=1)
            order = np.argsort(dists, kind="stable")[: cfg.k_nearest]
            block[: len(order)] = offsets[order]
        return block.reshape(-1)

    def _observe(self) -> np.ndarray:
        cfg = self.config
        rot = self._rotation()
        vel = self._vel if cfg.robot_kind == "point" else np.array([self._speed, 0.0])
        goal_off = rot @ (self._goal - self._pos)
        return np.concatenate(
            [vel, goal_off, self._object_block(self._hazards, rot), self._object_block(self._vases, rot)]
        )

    def observe(self) -> np.ndarray:
        if not self._ready:
            raise RuntimeError("observe() called before reset()")
        return self._observe()

    # -- introspection (read-only copies, used by tests and dumps) ----------

    @property
    def robot_position(self) -> np.ndarray:
        return self._pos.copy()

    @property
    def goal_position(self) -> np.ndarray:
        return self._goal.copy()

    @property
    def hazard_positions(self) -> np.ndarray:
        return self._hazards.copy()

    @property
    def vase_positions(self) -> np.ndarray:
        return self._vases.copy()

    @property
    def steps_taken(self) -> int:
        return self._steps

    def robot_state_fields(self) -> list[float]:
        if self.config.robot_kind == "point":
            return [self._pos[0], self._pos[1], self._vel[0], self._vel[1]]
        return [self._pos[0], self._pos[1], self._heading, self._speed]


# -- trajectory dump / replay ----------------------------------------------


class TrajectoryWriter:
    """Line-oriented text dump of a rollout for replay and debugging.

    Format: a header with the world config, then per episode a ``reset``
    line carrying the episode seed and a ``layout`` line, then one line per
    step: ``step index, robot state, action, reward, cost``.
    """

    def __init__(self, sink: TextIO, config: WorldConfig):
        self._sink = sink
        self._step_index = 0
        sink.write("safempc-trajectory v1\n")
        sink.write("config " + json.dumps(asdict(config)) + "\n")

    def record_reset(self, env: GoalNavEnv, seed: int):
        self._step_index = 0
        self._sink.write(f"reset {seed}\n")
        layout = {
            "robot": env.robot_position.tolist(),
            "goal": env.goal_position.tolist(),
            "hazards": env.hazard_positions.tolist(),
            "vases": env.vase_positions.tolist(),
        }
        self._sink.write("layout " + json.dumps(layout) + "\n")

    def record_step(self, env: GoalNavEnv, action, result: StepResult):
        fields = [self._step_index]
        fields += env.robot_state_fields()
        fields += [float(action[0]), float(action[1]), result.reward, result.cost]
        self._sink.write(" ".join(repr(v) for v in fields) + "\n")
        self._step_index += 1


def replay_trajectory(path: str) -> dict:
    """Re-run a trajectory dump and verify logged rewards/costs reproduce exactly.

    Returns a summary dict with step/episode counts and a list of mismatch
    descriptions (empty when the dump replays bit-for-bit).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "safempc-trajectory v1":
        raise ValueError(f"{path}: not a trajectory dump")
    if len(lines) < 2 or not lines[1].startswith("config "):
        raise ValueError(f"{path}: missing config header")
    cfg = WorldConfig(**json.loads(lines[1][len("config "):]))
    env = GoalNavEnv(cfg)
    steps = 0
    episodes = 0
    mismatches: list[str] = []
    for lineno, line in enumerate(lines[2:], start=3):
        if line.startswith("reset "):
            episodes += 1
            env.reset(int(line.split()[1]))
        elif line.startswith("layout "):
            continue
        else:
            parts = line.split()
            if len(parts) < 5:
                raise ValueError(f"{path}:{lineno}: malformed step line")
            action = [float(parts[-4]), float(parts[-3])]
            logged_reward = float(parts[-2])
            logged_cost = int(float(parts[-1]))
            result = env.step(action)
            if result.reward != logged_reward or result.cost != logged_cost:
                mismatches.append(
                    f"line {lineno}: replay (reward={result.reward!r}, cost={result.cost})"
                    f" != logged (reward={logged_reward!r}, cost={logged_cost})"
                )
            steps += 1
    return {"steps": steps, "episodes": episodes, "mismatches": mismatches}


def open_trajectory_writer(path: str, config: WorldConfig) -> tuple[TrajectoryWriter, TextIO]:
    fh: TextIO = io.TextIOWrapper(open(path, "wb"), encoding="utf-8", newline="\n")
    return TrajectoryWriter(fh, config), fh
