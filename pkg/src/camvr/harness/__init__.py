"""Experiment orchestration: config, runners, reporting, CLI."""

from .config import ExperimentConfig
from .experiments import (ablate, efficiency_report, gradcheck_blocks,
                          per_turn_table, run_experiment, sweep_granularity,
                          sweep_memory)

__all__ = [
    "ExperimentConfig",
    "run_experiment",
    "ablate",
    "sweep_memory",
    "sweep_granularity",
    "per_turn_table",
    "efficiency_report",
    "gradcheck_blocks",
]
