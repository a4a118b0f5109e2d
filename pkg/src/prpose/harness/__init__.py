"""Experiment orchestration: configuration, cached pipeline stages, reports and CLI."""

from .config import ConfigError, ExperimentConfig, parse_config, show_config
from .pipeline import Pipeline, StageError, run_pipeline
from .reports import AblationGapError, ResultRow, ablation_table, read_results, throughput_report

__all__ = ["AblationGapError", "ConfigError", "ExperimentConfig", "Pipeline", "ResultRow",
           "StageError", "ablation_table", "parse_config", "read_results", "run_pipeline",
           "show_config", "throughput_report"]
