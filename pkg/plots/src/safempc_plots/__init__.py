"""Offline figure generation from safempc harness CSV logs."""

__version__ = "0.1.0"

from .figures import BarTable, CurveSpec, render_curves, render_violation_bars
from .io import RunLog, read_run_log, trailing_mean, violations_before

__all__ = [
    "BarTable",
    "CurveSpec",
    "RunLog",
    "read_run_log",
    "render_curves",
    "render_violation_bars",
    "trailing_mean",
    "violations_before",
]
