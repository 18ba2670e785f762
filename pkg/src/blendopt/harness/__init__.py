"""Experiment runner: configs, scenarios and the command line."""
from .config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config
from .experiments import (
    ChurnEvent,
    RunError,
    churn_scenario,
    min_stabilizing_kp,
    run,
    sweep,
)
