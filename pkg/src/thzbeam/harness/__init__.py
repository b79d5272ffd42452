"""Experiment orchestration: configuration, pipeline stages, plots, reports and the CLI."""
from .config import (LEARNED, SCHEMA_VERSION, STRATEGIES, BaselineConfig, ConfigError, DatasetConfig,
                     ExperimentConfig, SweepConfig, config_from_dict, load_config)
from .pipeline import PipelineError, gen_data, run_evaluate, run_train
from .report import load_results, render, write_report

__all__ = [
    "LEARNED", "SCHEMA_VERSION", "STRATEGIES", "BaselineConfig", "ConfigError", "DatasetConfig",
    "ExperimentConfig", "SweepConfig", "config_from_dict", "load_config", "PipelineError", "gen_data",
    "run_evaluate", "run_train", "load_results", "render", "write_report",
]
