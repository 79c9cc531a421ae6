"""Figure rendering: two-panel learning curves and first-10k violation bars."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import RunLog, aggregate_curves, find_run_logs, read_run_log, violations_before

VIOLATION_WINDOW_STEPS = 10000


@dataclass
class CurveSpec:
    csv_paths: Sequence[str]
    out_path: str
    smooth: int = 5
    methods: Optional[Sequence[str]] = None
    shade: bool = True


def render_curves(spec: CurveSpec) -> str:
    """Write a two-panel figure (reward above, cost below) and return its path."""
    logs = [read_run_log(p) for p in spec.csv_paths]
    if spec.methods is not None:
        logs = [log for log in logs if log.method in set(spec.methods)]
        if not logs:
            raise ValueError(
                f"no logs left after filtering to methods {sorted(spec.methods)}"
            )
    curves = aggregate_curves(logs, spec.smooth)

    fig, (ax_reward, ax_cost) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for method, (steps, r_mean, r_std, c_mean, c_std) in curves.items():
        line, = ax_reward.plot(steps, r_mean, label=method)
        ax_cost.plot(steps, c_mean, color=line.get_color())
        if spec.shade:
            ax_reward.fill_between(steps, r_mean - r_std, r_mean + r_std,
                                   color=line.get_color(), alpha=0.2, linewidth=0)
            ax_cost.fill_between(steps, c_mean - c_std, c_mean + c_std,
                                 color=line.get_color(), alpha=0.2, linewidth=0)
    ax_reward.set_ylabel("episodic reward")
    ax_cost.set_ylabel("episodic cost")
    ax_cost.set_xlabel("environment steps")
    ax_reward.legend(loc="best", fontsize=8)
    for ax in (ax_reward, ax_cost):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(spec.out_path, dpi=120)
    plt.close(fig)
    return spec.out_path


@dataclass
class BarTable:
    """Mean first-10k violations with per-seed values, keyed (task, method)."""

    means: dict = field(default_factory=dict)
    per_seed: dict = field(default_factory=dict)


def violation_bar_table(logs: Sequence[RunLog],
                        boundary: int = VIOLATION_WINDOW_STEPS) -> BarTable:
    table = BarTable()
    groups: dict[tuple, list[RunLog]] = {}
    for log in logs:
        groups.setdefault((log.task, log.method), []).append(log)
    for key, runs in sorted(groups.items()):
        values = [violations_before(r, boundary) for r in runs]
        table.means[key] = float(np.mean(values))
        table.per_seed[key] = values
    return table


def render_violation_bars(run_dirs: Sequence[str], out_path: str,
                          boundary: int = VIOLATION_WINDOW_STEPS) -> BarTable:
    """Grouped bars of mean first-10k violations per (task, method), with the
    per-seed values scattered on top. Returns the plotted table."""
    logs = find_run_logs(run_dirs)
    short = [log for log in logs if log.steps_so_far[-1] < boundary]
    if short:
        names = ", ".join(log.path for log in short[:5])
        raise ValueError(f"logs shorter than {boundary} steps: {names}")
    table = violation_bar_table(logs, boundary)

    tasks = sorted({task for task, _ in table.means})
    methods = sorted({method for _, method in table.means})
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, method in enumerate(methods):
        xs, ys = [], []
        for i, task in enumerate(tasks):
            if (task, method) not in table.means:
                continue
            x = i + (j - (len(methods) - 1) / 2) * width
            xs.append(x)
            ys.append(table.means[(task, method)])
            seeds = table.per_seed[(task, method)]
            ax.scatter([x] * len(seeds), seeds, color="black", s=10, zorder=3)
        ax.bar(xs, ys, width=width * 0.9, label=method)
    ax.set_xticks(range(len(tasks)))
    ax.set_xticklabels(tasks)
    ax.set_ylabel(f"violations in first {boundary} steps")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return table
