from functools import wraps
from time import perf_counter
from typing import Any, Callable, List, TypeVar

T = TypeVar('T')


def record_duration(sink: List[float]):
    """把每次调用的耗时（毫秒）追加到 sink 的装饰器

    Args:
        sink: 接收耗时的列表，调用方负责在需要时清空
    """
    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> T:
            start_time = perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                sink.append((perf_counter() - start_time) * 1000.0)
        return wrapper
    return decorator
