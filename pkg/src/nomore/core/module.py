"""Module 基类与基础层

Module 通过实例属性自动发现子模块、参数（requires_grad 的 Tensor）与缓冲区
（不求导的 Tensor，例如 BN 的 running 统计量）。
"""
from enum import Enum
from typing import Iterator, List, Tuple

import numpy as np

from .init import kaiming_init
from .ops import conv2d, linear
from .rng import Rng
from .tensor import Tensor


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class Module:
    """可训练组件基类"""

    mode: Mode = Mode.TRAIN

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def _members(self) -> Iterator[Tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    yield f"{key}.{index}", item
            else:
                yield key, value

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for key, value in self._members():
            if isinstance(value, Module):
                yield key, value

    def named_tensors(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        """按注册顺序遍历所有参数与缓冲区"""
        for key, value in self._members():
            if isinstance(value, Tensor):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_tensors(prefix + key + ".")

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self.named_tensors():
            if tensor.requires_grad:
                yield name, tensor

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def set_mode(self, mode: Mode) -> "Module":
        self.mode = mode
        for _, child in self.children():
            child.set_mode(mode)
        return self

    def train(self) -> "Module":
        return self.set_mode(Mode.TRAIN)

    def eval(self) -> "Module":
        return self.set_mode(Mode.EVAL)


class Linear(Module):
    """全连接层；zero_init=True 时权重与偏置均为 0（分类头）"""

    def __init__(self, in_features: int, out_features: int, rng: Rng, zero_init: bool = False):
        if zero_init:
            self.weight = Tensor(np.zeros((in_features, out_features)), requires_grad=True, role="weight")
        else:
            self.weight = kaiming_init(rng, in_features, (in_features, out_features))
        self.bias = Tensor(np.zeros(out_features), requires_grad=True, role="bias")

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    """无偏置二维卷积，Kaiming 初始化（fan_in = C·k·k）"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: Rng,
                 stride: int = 1, padding: int = 0):
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = kaiming_init(rng, fan_in, (out_channels, in_channels, kernel_size, kernel_size))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.stride, self.padding)


def conv3x3(in_channels: int, out_channels: int, rng: Rng, stride: int = 1) -> Conv2d:
    return Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1)
