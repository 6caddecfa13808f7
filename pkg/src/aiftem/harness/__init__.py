"""Experiment configuration, runners and CSV output."""

from .config import EXPERIMENTS, SAMPLERS, ConfigError, ExperimentConfig, load_config, preset
from .experiments import ExperimentResult, run_experiment

__all__ = [
    "EXPERIMENTS",
    "SAMPLERS",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "load_config",
    "preset",
    "run_experiment",
]
