"""Reading and aggregating harness CSV logs.

The expected schema (one row per episode, header mandatory):

    run_id,seed,method,task,episode,steps_so_far,episodic_reward,episodic_cost,cumulative_cost
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

EXPECTED_COLUMNS = (
    "run_id", "seed", "method", "task", "episode",
    "steps_so_far", "episodic_reward", "episodic_cost", "cumulative_cost",
)


class SchemaError(ValueError):
    """A CSV does not carry the harness schema."""


@dataclass
class RunLog:
    path: str
    run_id: str
    seed: int
    method: str
    task: str
    steps_so_far: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    cumulative: np.ndarray


def read_run_log(path: str) -> RunLog:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such log file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in EXPECTED_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        col = {name: header.index(name) for name in EXPECTED_COLUMNS}
        rows = [r for r in reader if r]
    if not rows:
        raise SchemaError(f"{path}: no episode rows")

    def column(name, cast):
        return [cast(r[col[name]]) for r in rows]

    return RunLog(
        path=path,
        run_id=rows[0][col["run_id"]],
        seed=int(rows[0][col["seed"]]),
        method=rows[0][col["method"]],
        task=rows[0][col["task"]],
        steps_so_far=np.array(column("steps_so_far", int)),
        rewards=np.array(column("episodic_reward", float)),
        costs=np.array(column("episodic_cost", float)),
        cumulative=np.array(column("cumulative_cost", float)),
    )


def find_run_logs(run_dirs) -> list[RunLog]:
    logs = []
    for d in run_dirs:
        if not os.path.isdir(d):
            raise FileNotFoundError(f"no such run directory: {d}")
        for name in sorted(os.listdir(d)):
            if name.endswith(".csv"):
                logs.append(read_run_log(os.path.join(d, name)))
    if not logs:
        raise SchemaError(f"no run CSVs found under {list(run_dirs)}")
    return logs


def trailing_mean(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing average over up to ``window`` most recent entries."""
    if window <= 1:
        return np.asarray(values, dtype=float)
    out = np.empty(len(values))
    csum = np.cumsum(np.concatenate([[0.0], values]))
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def violations_before(log: RunLog, boundary: int) -> float:
    """Violations within the first ``boundary`` steps; a straddling episode
    contributes its cost prorated by the fraction of its steps inside."""
    total = 0.0
    prev = 0
    for steps, cost in zip(log.steps_so_far, log.costs):
        if steps <= boundary:
            total += cost
        else:
            inside = boundary - prev
            if inside > 0:
                total += cost * (inside / (steps - prev))
            break
        prev = steps
    return total


def aggregate_curves(logs: list[RunLog], smooth: int):
    """Per-method step axis, mean and population std across seeds.

    Smoothing (trailing mean over episodes) is applied per seed before
    aggregation. Returns {method: (steps, reward_mean, reward_std,
    cost_mean, cost_std)} with series truncated to the shortest seed.
    """
    by_method: dict[str, list[RunLog]] = {}
    for log in logs:
        by_method.setdefault(log.method, []).append(log)
    out = {}
    for method, runs in sorted(by_method.items()):
        n = min(len(r.rewards) for r in runs)
        rewards = np.stack([trailing_mean(r.rewards[:n], smooth) for r in runs])
        costs = np.stack([trailing_mean(r.costs[:n], smooth) for r in runs])
        steps = runs[0].steps_so_far[:n]
        out[method] = (
            steps,
            rewards.mean(axis=0), rewards.std(axis=0),
            costs.mean(axis=0), costs.std(axis=0),
        )
    return out
