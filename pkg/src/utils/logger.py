import functools
import sys
import time
from typing import Any, Callable, Optional

from loguru import logger

__all__ = ['logger', 'log_execution', 'configure_logging']


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """重置 loguru 的输出：stderr 按级别输出，可选的日志文件按天轮转、保留 7 天"""
    logger.remove()
    logger.add(sys.stderr, level=level.upper())
    if log_file:
        logger.add(log_file, level=level.upper(), rotation="1 day", retention="7 days")


def log_execution(func: Callable) -> Callable:
    """记录函数执行日志的装饰器"""
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        start_time = time.perf_counter()
        try:
            result = func(*args, **kwargs)
            duration = time.perf_counter() - start_time
            logger.debug(f"{func.__name__} completed in {duration:.3f}s")
            return result
        except Exception as e:
            duration = time.perf_counter() - start_time
            logger.error(f"{func.__name__} failed after {duration:.3f}s: {e}")
            raise
    return wrapper
