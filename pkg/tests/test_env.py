import json

import numpy as np
import pytest

from safempc.env import (
    DT,
    ROBOT_RADIUS,
    GOAL_OFFSET_SLICE,
    GoalNavEnv,
    TrajectoryWriter,
    WorldConfig,
    hazard_block_slice,
    make_reward_fn,
    open_trajectory_writer,
    replay_trajectory,
    true_reward,
    vase_block_slice,
    wrap_angle,
)
from safempc.errors import ConfigurationError, ShapeError

from conftest import steer_towards


# -- reset / layout ----------------------------------------------------------


def test_no_hazards_all_slots_hold_sentinel():
    cfg = WorldConfig(n_hazards=0, seed=7)
    obs = GoalNavEnv(cfg).reset(7)
    block = obs[hazard_block_slice(cfg)].reshape(cfg.k_nearest, 2)
    for slot in block:
        assert np.array_equal(slot, cfg.sentinel_offset)


def test_reset_is_deterministic():
    cfg = WorldConfig()
    a = GoalNavEnv(cfg).reset(3)
    b = GoalNavEnv(cfg).reset(3)
    assert np.array_equal(a, b)


def test_spawn_is_cost_free_by_geometry():
    # independent geometric oracle: distances from spawn to every object
    cfg = WorldConfig()
    env = GoalNavEnv(cfg)
    env.reset(0)
    pos = env.robot_position
    hazard_d = np.linalg.norm(env.hazard_positions - pos, axis=1)
    vase_d = np.linalg.norm(env.vase_positions - pos, axis=1)
    assert (hazard_d > cfg.hazard_radius).all()
    assert (vase_d > cfg.vase_radius + ROBOT_RADIUS).all()
    assert env.cost_at(pos) == 0


def test_goal_clearance_from_all_objects():
    cfg = WorldConfig(n_hazards=8, n_vases=4)
    env = GoalNavEnv(cfg)
    for seed in range(10):
        env.reset(seed)
        goal = env.goal_position
        hd = np.linalg.norm(env.hazard_positions - goal, axis=1)
        vd = np.linalg.norm(env.vase_positions - goal, axis=1)
        assert (hd >= cfg.goal_radius + cfg.hazard_radius + ROBOT_RADIUS).all()
        assert (vd >= cfg.goal_radius + cfg.vase_radius + ROBOT_RADIUS).all()


def test_overcrowded_arena_raises_configuration_error():
    cfg = WorldConfig(arena_half_extent=0.5, n_hazards=60, hazard_radius=0.4)
    with pytest.raises(ConfigurationError):
        GoalNavEnv(cfg).reset(0)


def test_padding_rule_counts_sentinels():
    cfg = WorldConfig(n_hazards=2, k_nearest=5)
    obs = GoalNavEnv(cfg).reset(1)
    block = obs[hazard_block_slice(cfg)].reshape(cfg.k_nearest, 2)
    sentinel_rows = [np.array_equal(r, cfg.sentinel_offset) for r in block]
    assert sum(sentinel_rows) == cfg.k_nearest - cfg.n_hazards
    assert sentinel_rows == [False, False, True, True, True]


def test_observation_blocks_sorted_by_distance():
    cfg = WorldConfig(n_hazards=4, n_vases=4)
    env = GoalNavEnv(cfg)
    obs = env.reset(5)
    for block_slice in (hazard_block_slice(cfg), vase_block_slice(cfg)):
        offsets = obs[block_slice].reshape(cfg.k_nearest, 2)
        dists = np.linalg.norm(offsets, axis=1)
        assert (np.diff(dists) >= -1e-12).all()


# -- step dynamics -----------------------------------------------------------


def test_zero_action_from_rest(point_env):
    pos = point_env.robot_position
    result = point_env.step([0.0, 0.0])
    assert np.array_equal(point_env.robot_position, pos)
    assert result.reward == 0.0
    assert result.cost == 0


def test_driving_into_hazard_emits_cost(point_env):
    target = point_env.hazard_positions[0]
    results = steer_towards(point_env, target)
    assert any(r.cost == 1 for r in results)


def test_reaching_goal_pays_bonus_and_relocates(point_env):
    goal_before = point_env.goal_position
    results = steer_towards(point_env, goal_before)
    hits = [r for r in results if r.goal_reached]
    assert hits, "robot never reached the goal"
    first = hits[0]
    assert first.reward > 1.0 - 0.2  # dense term small, bonus dominates
    assert not np.array_equal(point_env.goal_position, goal_before)


def test_cost_is_pure_function_of_world_state(point_env):
    rng = np.random.default_rng(0)
    for _ in range(60):
        result = point_env.step(rng.uniform(-1, 1, 2))
        assert result.cost == point_env.cost_at(point_env.robot_position)


def test_episode_never_ends_early():
    cfg = WorldConfig(episode_length=50)
    env = GoalNavEnv(cfg)
    env.reset(2)
    rng = np.random.default_rng(2)
    dones = [env.step(rng.uniform(-1, 1, 2)).done for _ in range(50)]
    assert dones == [False] * 49 + [True]
    with pytest.raises(RuntimeError):
        env.step([0, 0])


def test_step_before_reset_is_usage_error():
    with pytest.raises(RuntimeError):
        GoalNavEnv(WorldConfig()).step([0, 0])


def test_action_clamped_and_shape_checked(point_env):
    before = point_env.robot_position
    r1 = point_env.step([5.0, 0.0])  # clamps to 1.0: velocity 0.1, moves 0.01
    moved = point_env.robot_position[0] - before[0]
    assert moved == pytest.approx(1.0 * DT * DT)
    assert r1.cost in (0, 1)
    with pytest.raises(ShapeError):
        point_env.step([0.0, 0.0, 0.0])


def test_walls_clamp_position():
    cfg = WorldConfig(n_hazards=0, n_vases=0)
    env = GoalNavEnv(cfg)
    env.reset(0)
    for _ in range(cfg.episode_length):
        res = env.step([1.0, 0.0])
        if res.done:
            break
    assert env.robot_position[0] <= cfg.arena_half_extent


def test_trajectory_determinism_full_episode():
    cfg = WorldConfig(episode_length=60)
    seqs = []
    for _ in range(2):
        env = GoalNavEnv(cfg)
        env.reset(9)
        rng = np.random.default_rng(9)
        rows = []
        for _ in range(60):
            r = env.step(rng.uniform(-1, 1, 2))
            rows.append((r.reward, r.cost, tuple(r.next_observation)))
        seqs.append(rows)
    assert seqs[0] == seqs[1]


# -- car robot ----------------------------------------------------------------


def test_wrap_angle_range():
    for a in np.linspace(-10, 10, 101):
        w = wrap_angle(a)
        assert -np.pi < w <= np.pi


def test_car_kinematics_and_frame_rotation():
    cfg = WorldConfig(robot_kind="car", n_hazards=1, n_vases=0, episode_length=300)
    env = GoalNavEnv(cfg)
    env.reset(4)
    # accelerate then turn; heading integrates the turn command
    env.step([1.0, 0.0])
    res = env.step([0.0, 1.0])
    assert getattr(env, "_heading") == pytest.approx(0.1)
    obs = res.next_observation
    # velocity slot is (speed, 0) in the robot frame
    assert obs[0] == pytest.approx(getattr(env, "_speed"))
    assert obs[1] == 0.0
    # hazard offset must be the world offset rotated into the robot frame
    theta = getattr(env, "_heading")
    rot = np.array([[np.cos(-theta), -np.sin(-theta)], [np.sin(-theta), np.cos(-theta)]])
    expected = rot @ (env.hazard_positions[0] - env.robot_position)
    got = obs[hazard_block_slice(cfg)][:2]
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)


def test_car_goal_distance_preserved_by_rotation():
    cfg = WorldConfig(robot_kind="car")
    env = GoalNavEnv(cfg)
    obs = env.reset(8)
    d_obs = np.linalg.norm(obs[GOAL_OFFSET_SLICE])
    d_world = np.linalg.norm(env.goal_position - env.robot_position)
    assert d_obs == pytest.approx(d_world, rel=1e-12)


# -- true_reward ---------------------------------------------------------------


def test_true_reward_zero_progress():
    cfg = WorldConfig()
    obs = GoalNavEnv(cfg).reset(0)
    r = true_reward(obs, obs, cfg.goal_radius)
    expected_bonus = 1.0 if np.linalg.norm(obs[GOAL_OFFSET_SLICE]) <= cfg.goal_radius else 0.0
    assert r == expected_bonus


def test_true_reward_distance_arithmetic():
    # goal offset shrinking from 2.0 to 1.5 yields dense reward 0.5
    prev = np.zeros(20)
    prev[2] = 2.0
    nxt = np.zeros(20)
    nxt[2] = 1.5
    assert true_reward(prev, nxt, 0.3) == pytest.approx(0.5)


def test_true_reward_exact_goal_hit():
    prev = np.zeros(20)
    prev[2:4] = [1.2, 0.9]  # distance 1.5
    nxt = np.zeros(20)
    assert true_reward(prev, nxt, 0.3) == pytest.approx(1.5 + 1.0)


def test_true_reward_shape_error():
    with pytest.raises(ShapeError):
        true_reward(np.zeros(20), np.zeros(12), 0.3)


def test_true_reward_matches_step_without_relocation():
    cfg = WorldConfig()
    env = GoalNavEnv(cfg)
    obs = env.reset(11)
    rng = np.random.default_rng(11)
    for _ in range(80):
        res = env.step(rng.uniform(-1, 1, 2))
        if not res.goal_reached:
            assert true_reward(obs, res.next_observation, cfg.goal_radius) == pytest.approx(
                res.reward, abs=1e-12
            )
        obs = res.next_observation


def test_dense_reward_telescopes():
    cfg = WorldConfig()
    env = GoalNavEnv(cfg)
    obs0 = env.reset(13)
    rng = np.random.default_rng(13)
    total = 0.0
    obs = obs0
    for _ in range(40):
        res = env.step(rng.uniform(-1, 1, 2) * 0.3)
        assert not res.goal_reached  # weak actions, far goal: no reset expected
        total += res.reward
        obs = res.next_observation
    d0 = np.linalg.norm(obs0[GOAL_OFFSET_SLICE])
    d1 = np.linalg.norm(obs[GOAL_OFFSET_SLICE])
    assert total == pytest.approx(d0 - d1, abs=1e-9)


def test_make_reward_fn_vectorized():
    cfg = WorldConfig()
    fn = make_reward_fn(cfg)
    prev = np.zeros((3, 5, 20))
    prev[..., 2] = 2.0
    nxt = np.zeros((3, 5, 20))
    nxt[..., 2] = 1.0
    out = fn(prev, nxt)
    assert out.shape == (3, 5)
    np.testing.assert_allclose(out, 1.0)


# -- trajectory dump / replay ----------------------------------------------------


def test_trajectory_dump_and_replay(tmp_path):
    cfg = WorldConfig(episode_length=40)
    path = str(tmp_path / "run.traj.txt")
    writer, handle = open_trajectory_writer(path, cfg)
    env = GoalNavEnv(cfg)
    env.reset(21)
    writer.record_reset(env, 21)
    rng = np.random.default_rng(21)
    for _ in range(40):
        action = rng.uniform(-1, 1, 2)
        result = env.step(action)
        writer.record_step(env, action, result)
    handle.close()
    summary = replay_trajectory(path)
    assert summary == {"steps": 40, "episodes": 1, "mismatches": []}


def test_replay_detects_tampered_reward(tmp_path):
    cfg = WorldConfig(episode_length=10)
    path = str(tmp_path / "run.traj.txt")
    writer, handle = open_trajectory_writer(path, cfg)
    env = GoalNavEnv(cfg)
    env.reset(3)
    writer.record_reset(env, 3)
    for _ in range(10):
        action = np.array([0.5, -0.2])
        writer.record_step(env, action, env.step(action))
    handle.close()
    lines = open(path).read().splitlines()
    parts = lines[-1].split()
    parts[-2] = repr(float(parts[-2]) + 1.0)
    lines[-1] = " ".join(parts)
    open(path, "w").write("\n".join(lines) + "\n")
    summary = replay_trajectory(path)
    assert len(summary["mismatches"]) == 1


def test_trajectory_header_carries_config(tmp_path):
    cfg = WorldConfig(n_hazards=2)
    path = str(tmp_path / "t.txt")
    writer, handle = open_trajectory_writer(path, cfg)
    handle.close()
    lines = open(path).read().splitlines()
    assert lines[0] == "safempc-trajectory v1"
    assert json.loads(lines[1][len("config "):])["n_hazards"] == 2
