import numpy as np
import pytest

from safempc.env import GoalNavEnv, WorldConfig


@pytest.fixture
def point_world():
    return WorldConfig(episode_length=100)


@pytest.fixture
def point_env(point_world):
    env = GoalNavEnv(point_world)
    env.reset(0)
    return env


def steer_towards(env, target, n_max=400):
    """Drive the point robot toward a world position with saturated accelerations.

    Returns the list of StepResults; stops early once within 0.05 of target.
    """
    results = []
    for _ in range(n_max):
        delta = target - env.robot_position
        if np.linalg.norm(delta) < 0.05:
            break
        desired_vel = np.clip(delta * 4.0, -1.0, 1.0)
        accel = np.clip((desired_vel - getattr(env, "_vel")) / 0.1, -1.0, 1.0)
        results.append(env.step(accel))
        if results[-1].done:
            break
    return results
