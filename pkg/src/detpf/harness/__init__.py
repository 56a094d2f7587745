"""Experiment drivers, configuration files and CSV reports."""

from .config import ConfigError, ExperimentConfig, dumps, load, loads, resolve
from .experiments import EXPERIMENTS, ExperimentResult, derive_seed
from .report import CsvReport, read_csv

__all__ = [
    "ConfigError",
    "CsvReport",
    "EXPERIMENTS",
    "ExperimentConfig",
    "ExperimentResult",
    "derive_seed",
    "dumps",
    "load",
    "loads",
    "read_csv",
    "resolve",
]
