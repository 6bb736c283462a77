import zlib
from typing import Sequence, Tuple, Union

import numpy as np

from ..exceptions import InvalidArgumentError

Shape = Union[int, Sequence[int]]


class Rng:
    """可拆分的确定性随机数源

    同一个 seed 与同样的调用序列产生逐位相同的样本流。子流通过
    SeedSequence 的 spawn_key 派生，只取决于 (seed, key)，与父流已经
    消耗了多少随机数无关，所以按 (block 序号, step) 取噪声时结果不依赖
    遍历顺序。
    """

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        seed = int(seed)
        if seed < 0 or seed >= 2 ** 64:
            raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.key = tuple(int(k) for k in key)
        self.draws = 0
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key}, draws={self.draws})"

    def substream(self, *key: int) -> "Rng":
        """派生子流，key 为任意个非负整数"""
        return Rng(self.seed, self.key + tuple(key))

    def named(self, label: str) -> "Rng":
        """按名称派生子流（名称经 crc32 映射为整数）"""
        return self.substream(zlib.crc32(label.encode("utf-8")))

    def normal(self, shape: Shape = ()) -> np.ndarray:
        """标准正态样本，float64"""
        out = self._generator.standard_normal(size=_as_shape(shape), dtype=np.float64)
        self.draws += int(np.size(out))
        return out

    def uniform(self, low: float, high: float, shape: Shape = ()) -> np.ndarray:
        out = self._generator.uniform(low, high, size=_as_shape(shape))
        self.draws += int(np.size(out))
        return out

    def choice(self, n: int, size: Shape, p: Sequence[float]) -> np.ndarray:
        out = self._generator.choice(n, size=_as_shape(size), p=np.asarray(p, dtype=np.float64))
        self.draws += int(np.size(out))
        return out

    def permutation(self, n: int) -> np.ndarray:
        out = self._generator.permutation(n)
        self.draws += n
        return out


def _as_shape(shape: Shape) -> Tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)
