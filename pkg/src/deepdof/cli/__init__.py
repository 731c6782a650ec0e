"""Experiment harness and command line."""

from .config import ExperimentConfig, TeacherSpec
from .experiments import RateResult, run_bias_variance_sweep, run_rate_sweep
from .main import main

__all__ = ["ExperimentConfig", "TeacherSpec", "RateResult", "run_rate_sweep", "run_bias_variance_sweep", "main"]
