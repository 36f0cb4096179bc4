"""Configuration module for StimLab"""

from .config import (
    settings,
    get_settings,
    ExperimentConfig,
    LevelConfig,
    default_experiment_config,
    load_experiment_config,
    format_validation_error,
)

__all__ = [
    'settings', 'get_settings', 'ExperimentConfig', 'LevelConfig',
    'default_experiment_config', 'load_experiment_config', 'format_validation_error',
]
