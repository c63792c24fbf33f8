"""Configuration, orchestration and file output for experiments."""
from .config import ConfigError, ExperimentConfig, load_config
from .emit import emit_metrics_csv, emit_samples, read_metrics_csv
from .experiments import ablate, compare, run_single

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "emit_metrics_csv", "emit_samples",
           "read_metrics_csv", "ablate", "compare", "run_single"]
