"""中心差分梯度检查"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .rng import Rng
from .tensor import Tensor, backward, mul, tensor_sum


@dataclass
class GradCheckResult:
    """梯度检查结果

    relative_errors 按输入名给出 ||a - n|| / (||a|| + ||n||)，分母为 0 时记 0。
    elementwise_errors 给出逐元素 |a_i - n_i| / max(|a_i| + |n_i|, 1e-3·scale) 的最大值，
    scale 为该输入梯度的最大绝对值，单个错误元素不会被范数平均掉。
    """

    relative_errors: Dict[str, float] = field(default_factory=dict)
    elementwise_errors: Dict[str, float] = field(default_factory=dict)
    max_abs_grad: Dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4
    elementwise_tolerance: float = 1e-2

    @property
    def max_relative_error(self) -> float:
        return max(self.relative_errors.values(), default=0.0)

    @property
    def max_elementwise_error(self) -> float:
        return max(self.elementwise_errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance and self.max_elementwise_error < self.elementwise_tolerance


def elementwise_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-3 * scale)
    return float((np.abs(analytic - numeric) / denom).max())


def projection_loss(output: Tensor, rng: Rng) -> Callable[[Tensor], Tensor]:
    """返回 y -> sum(y ⊙ r)，r 为固定随机权重，避免 sum(BN(x)) 这类梯度恒为 0 的退化损失"""
    weights = Tensor(rng.normal(output.shape))
    return lambda y: tensor_sum(mul(y, weights))


def check_gradients(
    build_loss: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-6,
    tolerance: float = 1e-4,
    names: Optional[Sequence[str]] = None,
    elementwise_tolerance: float = 1e-2,
) -> GradCheckResult:
    """比较 backward 得到的梯度与中心差分

    Args:
        build_loss: 用 inputs 当前数值重新计算标量 loss 的函数
        inputs: 需要检查的张量（requires_grad=True）
        h: 差分步长
    """
    names = list(names) if names is not None else [t.name or f"input{i}" for i, t in enumerate(inputs)]
    for t in inputs:
        t.zero_grad()
    backward(build_loss())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    result = GradCheckResult(tolerance=tolerance, elementwise_tolerance=elementwise_tolerance)
    for name, t, a in zip(names, inputs, analytic):
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            plus = build_loss().item()
            flat[i] = saved - h
            minus = build_loss().item()
            flat[i] = saved
            numeric_flat[i] = (plus - minus) / (2.0 * h)
        denom = np.linalg.norm(a) + np.linalg.norm(numeric)
        result.relative_errors[name] = float(np.linalg.norm(a - numeric) / denom) if denom > 0 else 0.0
        result.elementwise_errors[name] = elementwise_error(a, numeric)
        result.max_abs_grad[name] = float(np.abs(a).max()) if a.size else 0.0
    for t in inputs:
        t.zero_grad()
    return result
