"""Secondary acceptance: figures render from the full comparison-run logs.

Reuses the cached desk-scale comparison produced by the main package's
acceptance suite when present; otherwise builds the three comparison arms
through the ``safempc`` command-line interface (the only coupling between
the two packages is the CLI and the CSV schema).
"""

import glob
import os
import subprocess
import sys

import pytest

from safempc_plots.figures import CurveSpec, render_curves, render_violation_bars

CACHE = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(
    os.path.abspath(__file__)))), ".acceptance_cache", "criterion1_desk10k")
ARMS = ("mpc_rce", "mpc_cem", "mpc_random")
SEEDS = "0,1,2"
PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def ensure_arm(arm: str) -> str:
    out_dir = os.path.join(CACHE, arm)
    expected = [os.path.join(out_dir, f"point_goal1__{arm}__seed{s}.csv")
                for s in SEEDS.split(",")]
    if not all(os.path.exists(p) for p in expected):
        cmd = [sys.executable, "-m", "safempc.cli", "run",
               "--task", "point_goal1", "--method", arm, "--seeds", SEEDS,
               "--out", out_dir, "--desk", "--set", "total_steps=10000"]
        subprocess.run(cmd, check=True, timeout=3600)
    return out_dir


@pytest.fixture(scope="module")
def comparison_dirs():
    return {arm: ensure_arm(arm) for arm in ARMS}


def test_criterion_10_curves_and_bars(tmp_path, comparison_dirs):
    csvs = []
    for d in comparison_dirs.values():
        csvs.extend(sorted(glob.glob(os.path.join(d, "*.csv"))))
    assert len(csvs) == 9

    curves_path = tmp_path / "learning_curves.png"
    render_curves(CurveSpec(csv_paths=csvs, out_path=str(curves_path)))
    assert curves_path.read_bytes()[:8] == PNG_MAGIC

    bars_path = tmp_path / "violations.png"
    table = render_violation_bars(list(comparison_dirs.values()), str(bars_path))
    assert bars_path.read_bytes()[:8] == PNG_MAGIC
    means = {method: table.means[("point_goal1", method)] for method in ARMS}
    assert means["mpc_rce"] < means["mpc_cem"]
    assert means["mpc_rce"] < means["mpc_random"]
    print(f"\nCRITERION 10: PASS (figures rendered; first-10k bars {means})")
