import math
from typing import Sequence

from ..exceptions import InvalidArgumentError
from .rng import Rng
from .tensor import Tensor


def kaiming_init(rng: Rng, fan_in: int, shape: Sequence[int], requires_grad: bool = True) -> Tensor:
    """Kaiming 正态初始化：元素 i.i.d. N(0, 2/fan_in)"""
    if fan_in < 1:
        raise InvalidArgumentError(f"kaiming_init: fan_in must be >= 1, got {fan_in}")
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise InvalidArgumentError(f"kaiming_init: empty shape {list(shape)}")
    data = rng.normal(shape) * math.sqrt(2.0 / fan_in)
    return Tensor(data, requires_grad=requires_grad, role="weight")
