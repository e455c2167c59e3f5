"""Synthetic data, metrics, reports and the command-line interface."""

from .experiment import ConfigError, run_batch, run_experiment
from .gen import GenSpec, Truth, gen_mixture
from .metrics import clustering_accuracy, min_list_error
from .report import Report, validate_report

__all__ = [
    "ConfigError",
    "GenSpec",
    "Report",
    "Truth",
    "clustering_accuracy",
    "gen_mixture",
    "min_list_error",
    "run_batch",
    "run_experiment",
    "validate_report",
]
