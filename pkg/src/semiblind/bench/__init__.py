"""Config-driven Monte Carlo benchmarks and the command line interface."""

from .config import ESTIMATOR_LABELS, ExperimentSpec, parse_experiment, read_config
from .experiment import SweepResult, SweepRow, emit_csv, read_csv, run_experiment

__all__ = [
    "ESTIMATOR_LABELS",
    "ExperimentSpec",
    "SweepResult",
    "SweepRow",
    "emit_csv",
    "parse_experiment",
    "read_config",
    "read_csv",
    "run_experiment",
]
