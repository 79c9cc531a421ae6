"""Command-line experiment harness: multi-seed runs, aggregation, replay.

Subcommands:

* ``run``      -- execute one (task, method) experiment across seeds, writing
                  one CSV per run plus an aggregate ``summary.json``.
* ``compare``  -- recompute the summary table from run directories alone.
* ``replay``   -- re-execute trajectory dumps and verify logged rewards/costs.

CSV schema (one row per episode, header mandatory, UTF-8, LF):

    run_id,seed,method,task,episode,steps_so_far,episodic_reward,episodic_cost,cumulative_cost

Overrides use flat ``section.key=value`` strings (``planner.n_samples=500``),
accepted both from ``--set`` flags and from a ``--config`` file of one
``key=value`` per line. The output directory falls back to $SAFE_MPC_OUT.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import multiprocessing
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .agent import AgentConfig, train_and_rollout
from .env import GoalNavEnv, open_trajectory_writer, replay_trajectory
from .presets import DESK_OVERRIDES, METHODS, TASKS, agent_config
from .errors import ConfigurationError

CSV_COLUMNS = (
    "run_id", "seed", "method", "task", "episode",
    "steps_so_far", "episodic_reward", "episodic_cost", "cumulative_cost",
)
VIOLATION_WINDOW_STEPS = 10000
CONVERGENCE_WINDOW_EPISODES = 10

_SECTIONS = {
    "world": "world",
    "planner": "planner",
    "dynamics_train": "dynamics_train",
    "classifier": "classifier",
}


@dataclass
class ExperimentSpec:
    task: str
    method: str
    seeds: list[int]
    out_dir: str
    jobs: int = 1
    overrides: dict[str, str] = field(default_factory=dict)
    dump_trajectories: bool = False

    def run_id(self, seed: int) -> str:
        return f"{self.task}__{self.method}__seed{seed}"


# -- override handling ---------------------------------------------------------


def _coerce(raw: str, target_type):
    if target_type is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"cannot parse boolean from {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw
    raise ConfigurationError(f"unsupported override type {target_type}")


def apply_overrides(cfg: AgentConfig, overrides: dict[str, str]) -> AgentConfig:
    """Return a new AgentConfig with ``section.key=value`` overrides applied.

    Unknown keys are rejected with the list of valid names.
    """
    sections = {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTIONS.values()}
    top = {
        f.name: getattr(cfg, f.name)
        for f in dataclasses.fields(AgentConfig)
        if f.name not in _SECTIONS
    }
    section_types = {name: type(getattr(cfg, name)) for name in _SECTIONS.values()}
    for key, raw in overrides.items():
        if "." in key:
            section, _, fname = key.partition(".")
            if section not in sections:
                raise ConfigurationError(
                    f"unknown override section {section!r}; valid: {sorted(sections)}"
                )
            fmap = {f.name: f for f in dataclasses.fields(section_types[section])}
            if fname not in fmap:
                raise ConfigurationError(
                    f"unknown key {key!r}; valid {section}.* keys: {sorted(fmap)}"
                )
            current = sections[section][fname]
            ftype = type(current) if current is not None else float
            sections[section][fname] = _coerce(raw, ftype)
        else:
            if key not in top:
                raise ConfigurationError(
                    f"unknown override key {key!r}; valid top-level keys: {sorted(top)}"
                )
            if key == "dynamics_hidden":
                top[key] = tuple(int(v) for v in raw.split(",") if v.strip())
            elif key in ("safe_capacity", "unsafe_capacity"):
                top[key] = None if raw.strip().lower() in ("none", "") else int(raw)
            else:
                top[key] = _coerce(raw, type(top[key]))
    rebuilt = {}
    for name, section_type in section_types.items():
        rebuilt[name] = section_type(**sections[name])
    return AgentConfig(**rebuilt, **top)


def parse_config_file(path: str) -> dict[str, str]:
    overrides: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value")
            key, _, value = stripped.partition("=")
            overrides[key.strip()] = value.strip()
    return overrides


# -- execution -------------------------------------------------------------------


def _resolve_config(spec: ExperimentSpec) -> AgentConfig:
    return apply_overrides(agent_config(spec.task, spec.method), spec.overrides)


def _run_one(spec: ExperimentSpec, seed: int) -> str:
    """Execute a single seed and write its CSV (and meta); returns the CSV path."""
    cfg = _resolve_config(spec)
    run_id = spec.run_id(seed)
    env = GoalNavEnv(cfg.world)
    started = time.perf_counter()
    traj_handle = None
    step_hook = reset_hook = None
    if spec.dump_trajectories:
        traj_path = os.path.join(spec.out_dir, f"{run_id}.traj.txt")
        traj_writer, traj_handle = open_trajectory_writer(traj_path, cfg.world)

        def step_hook(obs, action, result):
            traj_writer.record_step(env, action, result)

        def reset_hook(seed_value):
            traj_writer.record_reset(env, seed_value)

    try:
        record = train_and_rollout(cfg, env, seed,
                                   step_hook=step_hook, reset_hook=reset_hook)
    finally:
        if traj_handle is not None:
            traj_handle.close()
    elapsed = time.perf_counter() - started

    csv_path = os.path.join(spec.out_dir, f"{run_id}.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for ep in record.episodes:
            row = [run_id, str(seed), spec.method, spec.task, str(ep.episode),
                   str(ep.steps_so_far), repr(ep.reward), str(ep.cost),
                   str(ep.cumulative_cost)]
            fh.write(",".join(row) + "\n")
    meta = {
        "run_id": run_id,
        "seed": seed,
        "task": spec.task,
        "method": spec.method,
        "config": record.config,
        "wall_clock_seconds": elapsed,
        "version": __version__,
    }
    with open(os.path.join(spec.out_dir, f"{run_id}.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    return csv_path


def _run_one_star(args):
    spec_dict, seed = args
    return _run_one(ExperimentSpec(**spec_dict), seed)


def run_experiment(spec: ExperimentSpec) -> "SummaryTable":
    """Run every seed of the spec, then aggregate its directory into a summary."""
    _resolve_config(spec)  # validate task/method/overrides before any work
    os.makedirs(spec.out_dir, exist_ok=True)
    if spec.jobs > 1 and len(spec.seeds) > 1:
        # cap BLAS threads in workers; small matrices gain nothing from threads
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")
        ctx = multiprocessing.get_context("spawn")
        payload = [(dataclasses.asdict(spec), seed) for seed in spec.seeds]
        with ctx.Pool(min(spec.jobs, len(spec.seeds))) as pool:
            pool.map(_run_one_star, payload)
    else:
        for seed in spec.seeds:
            _run_one(spec, seed)
    table = compare_runs([spec.out_dir])
    summary = {
        "spec": dataclasses.asdict(spec),
        "resolved_config": dataclasses.asdict(_resolve_config(spec)),
        "table": table.to_json(),
    }
    with open(os.path.join(spec.out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return table


# -- aggregation -------------------------------------------------------------------


@dataclass
class RunSeries:
    run_id: str
    seed: int
    task: str
    method: str
    steps_so_far: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    cumulative: np.ndarray

    def violations_before(self, boundary: int) -> float:
        """Cumulative violations in the first ``boundary`` steps, prorating a
        straddling episode by its fraction of steps inside the boundary."""
        total = 0.0
        prev_steps = 0
        for steps, cost in zip(self.steps_so_far, self.costs):
            if steps <= boundary:
                total += cost
            else:
                episode_len = steps - prev_steps
                inside = boundary - prev_steps
                if inside > 0:
                    total += cost * (inside / episode_len)
                break
            prev_steps = steps
        return total

    def converged_stats(self, window: int) -> tuple[float, float]:
        tail_r = self.rewards[-window:]
        tail_c = self.costs[-window:]
        return float(tail_r.mean()), float(tail_c.mean())


@dataclass
class SummaryRow:
    task: str
    method: str
    n_seeds: int
    reward_mean: float
    reward_std: float
    cost_mean: float
    cost_std: float
    violations_10k_mean: float
    violations_10k_per_seed: dict[int, float]
    total_violations_mean: float
    best: bool = False


@dataclass
class SummaryTable:
    rows: list[SummaryRow]

    def row(self, task: str, method: str) -> SummaryRow:
        for r in self.rows:
            if r.task == task and r.method == method:
                return r
        raise KeyError(f"no summary row for ({task}, {method})")

    def to_json(self) -> list[dict]:
        return [dataclasses.asdict(r) for r in self.rows]

    def to_text(self) -> str:
        header = (
            f"{'task':<14} {'method':<12} {'seeds':>5} {'reward':>18} "
            f"{'ep_cost':>16} {'viol@10k':>10} {'best':>5}"
        )
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.task:<14} {r.method:<12} {r.n_seeds:>5} "
                f"{r.reward_mean:>10.3f} ± {r.reward_std:<6.3f}"
                f"{r.cost_mean:>9.3f} ± {r.cost_std:<6.3f}"
                f"{r.violations_10k_mean:>9.2f} {'*' if r.best else '':>5}"
            )
        return "\n".join(lines)


def load_run_csv(path: str) -> RunSeries:
    """Parse one run CSV; raises on schema or row-level errors with location info."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                rows.append((
                    row[0], int(row[1]), row[2], row[3], int(row[4]),
                    int(row[5]), float(row[6]), int(row[7]), int(row[8]),
                ))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no episode rows")
    return RunSeries(
        run_id=rows[0][0],
        seed=rows[0][1],
        method=rows[0][2],
        task=rows[0][3],
        steps_so_far=np.array([r[5] for r in rows]),
        rewards=np.array([r[6] for r in rows]),
        costs=np.array([r[7] for r in rows]),
        cumulative=np.array([r[8] for r in rows]),
    )


def compare_runs(directories: Sequence[str],
                 convergence_window: int = CONVERGENCE_WINDOW_EPISODES) -> SummaryTable:
    """Aggregate run CSVs found in the given directories into a summary table."""
    series: list[RunSeries] = []
    for directory in directories:
        names = sorted(n for n in os.listdir(directory) if n.endswith(".csv"))
        for name in names:
            series.append(load_run_csv(os.path.join(directory, name)))
    if not series:
        raise ValueError(f"no run CSVs found under {list(directories)}")
    groups: dict[tuple[str, str], list[RunSeries]] = {}
    for s in series:
        groups.setdefault((s.task, s.method), []).append(s)
    rows = []
    for (task, method), runs in sorted(groups.items()):
        stats = [r.converged_stats(convergence_window) for r in runs]
        rewards = np.array([s[0] for s in stats])
        costs = np.array([s[1] for s in stats])
        v10k = {r.seed: r.violations_before(VIOLATION_WINDOW_STEPS) for r in runs}
        totals = np.array([float(r.cumulative[-1]) for r in runs])
        rows.append(SummaryRow(
            task=task,
            method=method,
            n_seeds=len(runs),
            reward_mean=float(rewards.mean()),
            reward_std=float(rewards.std()),
            cost_mean=float(costs.mean()),
            cost_std=float(costs.std()),
            violations_10k_mean=float(np.mean(list(v10k.values()))),
            violations_10k_per_seed=v10k,
            total_violations_mean=float(totals.mean()),
        ))
    # the paper's lexicographic rule: lower converged cost wins, reward breaks ties
    by_task: dict[str, list[SummaryRow]] = {}
    for row in rows:
        by_task.setdefault(row.task, []).append(row)
    for task_rows in by_task.values():
        best = min(task_rows, key=lambda r: (r.cost_mean, -r.reward_mean))
        best.best = True
    return SummaryTable(rows)


# -- entry point --------------------------------------------------------------------


def _parse_seeds(raw: str) -> list[int]:
    try:
        return [int(v) for v in raw.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigurationError(f"cannot parse seed list {raw!r}") from None


def _collect_overrides(args) -> dict[str, str]:
    overrides: dict[str, str] = {}
    if args.config:
        overrides.update(parse_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if args.desk:
        merged = dict(DESK_OVERRIDES)
        merged.update(overrides)
        overrides = merged
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safempc",
        description="Constrained model-based RL experiments on 2D goal navigation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one (task, method) experiment over seeds")
    run_p.add_argument("--task", required=True, choices=TASKS)
    run_p.add_argument("--method", required=True, choices=sorted(METHODS))
    run_p.add_argument("--seeds", default="0,1,2", help="comma-separated seed list")
    run_p.add_argument("--out", default=None, help="output directory (or $SAFE_MPC_OUT)")
    run_p.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
    run_p.add_argument("--config", default=None, help="key=value override file")
    run_p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="single override, repeatable")
    run_p.add_argument("--desk", action="store_true",
                       help="apply the desk-scale profile before other overrides")
    run_p.add_argument("--dump-traj", action="store_true",
                       help="write per-run trajectory dumps for replay")

    cmp_p = sub.add_parser("compare", help="aggregate existing run directories")
    cmp_p.add_argument("dirs", nargs="+", help="run directories containing CSVs")

    rep_p = sub.add_parser("replay", help="verify trajectory dumps reproduce exactly")
    rep_p.add_argument("files", nargs="+", help="trajectory dump files")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        out_dir = args.out or os.environ.get("SAFE_MPC_OUT")
        if not out_dir:
            print("error: no output directory (--out or $SAFE_MPC_OUT)", file=sys.stderr)
            return 2
        spec = ExperimentSpec(
            task=args.task,
            method=args.method,
            seeds=_parse_seeds(args.seeds),
            out_dir=out_dir,
            jobs=args.jobs,
            overrides=_collect_overrides(args),
            dump_trajectories=args.dump_traj,
        )
        table = run_experiment(spec)
        print(table.to_text())
        return 0
    if args.command == "compare":
        table = compare_runs(args.dirs)
        print(table.to_text())
        return 0
    if args.command == "replay":
        failures = 0
        for path in args.files:
            summary = replay_trajectory(path)
            status = "ok" if not summary["mismatches"] else "MISMATCH"
            print(f"{path}: {summary['episodes']} episodes, {summary['steps']} steps [{status}]")
            for m in summary["mismatches"][:10]:
                print(f"  {m}")
            failures += bool(summary["mismatches"])
        return 1 if failures else 0
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
