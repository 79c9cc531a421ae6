"""Command-line entry points for the plotting scripts."""

from __future__ import annotations

import argparse
import glob
import sys
from typing import Optional, Sequence

from .figures import CurveSpec, render_curves, render_violation_bars


def _expand(patterns: Sequence[str]) -> list[str]:
    paths = []
    for pattern in patterns:
        matches = sorted(glob.glob(pattern))
        paths.extend(matches if matches else [pattern])
    return paths


def curves_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="safempc-plot-curves",
        description="Two-panel learning curves (reward top, cost bottom) from run CSVs.",
    )
    parser.add_argument("csvs", nargs="+", help="run CSV paths or globs")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--smooth", type=int, default=5,
                        help="trailing-mean window in episodes (default 5)")
    parser.add_argument("--no-shade", action="store_true",
                        help="disable the +-1 std band")
    parser.add_argument("--methods", default=None,
                        help="comma-separated method filter")
    args = parser.parse_args(argv)
    methods = args.methods.split(",") if args.methods else None
    spec = CurveSpec(csv_paths=_expand(args.csvs), out_path=args.out,
                     smooth=args.smooth, methods=methods, shade=not args.no_shade)
    try:
        render_curves(spec)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(args.out)
    return 0


def bars_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="safempc-plot-bars",
        description="Bar chart of mean violations in the first 10k steps per task and method.",
    )
    parser.add_argument("run_dirs", nargs="+", help="run directories containing CSVs")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        render_violation_bars(args.run_dirs, args.out)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(args.out)
    return 0
