"""Replay data containers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Transition:
    """One environment step: the unit stored in replay buffers.

    ``reset`` marks a discontinuity in the observation stream (the goal was
    relocated while forming ``next_observation``), which makes the pair
    unusable as a dynamics training target.
    """

    observation: np.ndarray
    action: np.ndarray
    next_observation: np.ndarray
    cost: int
    reset: bool = False


def stack_transitions(transitions: Sequence[Transition], exclude_resets: bool = True):
    """Stack transitions into (obs, act, next_obs) float64 matrices."""
    rows = [t for t in transitions if not (exclude_resets and t.reset)]
    if not rows:
        return (np.empty((0, 0)), np.empty((0, 0)), np.empty((0, 0)))
    obs = np.stack([t.observation for t in rows]).astype(np.float64)
    act = np.stack([t.action for t in rows]).astype(np.float64)
    nxt = np.stack([t.next_observation for t in rows]).astype(np.float64)
    return obs, act, nxt
