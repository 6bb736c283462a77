from .decorators import record_duration
from .logger import configure_logging, log_execution, logger

__all__ = [
    'configure_logging',
    'logger',
    'log_execution',
    'record_duration',
]
