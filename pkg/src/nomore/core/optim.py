from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..exceptions import InvalidArgumentError, InvalidStateError
from .tensor import Tensor


@dataclass(frozen=True)
class SgdConfig:
    """带动量与权重衰减的 SGD 超参数"""

    learning_rate: float = 5e-2
    momentum: float = 0.9
    weight_decay: float = 1e-5

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise InvalidArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidArgumentError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise InvalidArgumentError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def without_decay(self) -> "SgdConfig":
        return SgdConfig(self.learning_rate, self.momentum, 0.0)


def sgd_step(params: Iterable[Tensor], cfg: SgdConfig) -> None:
    """v <- momentum·v + grad + weight_decay·param；param <- param - lr·v

    速度缓存保存在各参数的 momentum_buffer 上。
    """
    params = list(params)
    for p in params:
        if p.grad is None:
            raise InvalidStateError(f"parameter {p.name or p!r} has no grad")
    for p in params:
        update = p.grad + cfg.weight_decay * p.data if cfg.weight_decay else p.grad
        if p.momentum_buffer is None:
            p.momentum_buffer = np.array(update, dtype=np.float64)
        else:
            p.momentum_buffer = cfg.momentum * p.momentum_buffer + update
        p.data -= cfg.learning_rate * p.momentum_buffer
