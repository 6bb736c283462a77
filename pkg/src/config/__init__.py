from .base_config import BaseConfig
from .experiment_config import COMMANDS, ExperimentConfig

__all__ = [
    'BaseConfig',
    'COMMANDS',
    'ExperimentConfig',
]
