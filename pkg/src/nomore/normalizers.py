"""BatchNorm / LayerNorm / InstanceNorm 参考实现

x̂ = γ (x − μ)/√(σ² + ε) + β，三种归一化只在统计量的轴集合上不同：
BN 在 batch 与空间轴上按通道统计（训练用 batch 统计量，推理用 running
统计量）；LN 按样本在全部非 batch 轴上统计；IN 按 (样本, 通道) 在空间轴上
统计。LN/IN 与模式无关。
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from utils.logger import logger

from .core import (
    Mode,
    Module,
    Rng,
    Tensor,
    channel_affine,
    check_gradients,
    normalize_with_stats,
    projection_loss,
    standardize,
)
from .exceptions import InvalidArgumentError

logger = logger.bind(name="Normalizers")


class NormKind(str, Enum):
    BN = "bn"
    LN = "ln"
    IN = "in"


class NormalizerSpec(Module):
    """归一化层状态

    Attributes:
        kind: BN / LN / IN
        num_features: 通道数（仿射参数长度）
        eps: 分母中的 ε，允许 0（此时零方差切片报错）
        affine_scale / affine_bias: 逐通道仿射参数 γ、β
        momentum: running ← (1 − momentum)·running + momentum·batch_stat
        running_mean / running_var: BN 的全局统计量，初始为 0 / 1
    """

    def __init__(
        self,
        kind: NormKind,
        num_features: int,
        eps: float = 1e-5,
        momentum: float = 0.1,
        mode: Mode = Mode.TRAIN,
    ):
        kind = NormKind(kind)
        if num_features < 1:
            raise InvalidArgumentError(f"num_features must be >= 1, got {num_features}")
        if eps < 0:
            raise InvalidArgumentError(f"eps must be >= 0, got {eps}")
        if not 0.0 < momentum <= 1.0:
            raise InvalidArgumentError(f"momentum must be in (0, 1], got {momentum}")
        self.kind = kind
        self.num_features = num_features
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.affine_scale = Tensor(np.ones(num_features), requires_grad=True, role="affine_scale")
        self.affine_bias = Tensor(np.zeros(num_features), requires_grad=True, role="affine_bias")
        self.running_mean = Tensor(np.zeros(num_features), role="running_mean")
        self.running_var = Tensor(np.ones(num_features), role="running_var")
        self.mode = Mode(mode)

    def forward(self, x: Tensor) -> Tensor:
        return NORMALIZERS[self.kind](x, self)

    def parameter_count(self) -> int:
        return 2 * self.num_features

    def buffer_count(self) -> int:
        return 2 * self.num_features if self.kind is NormKind.BN else 0

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {
            "affine_scale": self.affine_scale.numpy(),
            "affine_bias": self.affine_bias.numpy(),
            "running_mean": self.running_mean.numpy(),
            "running_var": self.running_var.numpy(),
        }

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for key in ("affine_scale", "affine_bias", "running_mean", "running_var"):
            values = np.asarray(state[key], dtype=np.float64)
            if values.shape != (self.num_features,):
                raise InvalidArgumentError(
                    f"{key}: expected shape [{self.num_features}], got {list(values.shape)}"
                )
            getattr(self, key).data[...] = values
        if np.any(self.running_var.data < 0):
            raise InvalidArgumentError("running_var must be elementwise >= 0")


def _check_channels(x: Tensor, spec: NormalizerSpec, op: str) -> None:
    if x.ndim < 2:
        raise InvalidArgumentError(f"{op}: expected input with a batch and a feature axis, got {list(x.shape)}")
    if x.shape[1] != spec.num_features:
        raise InvalidArgumentError(
            f"{op}: input has {x.shape[1]} channels, normalizer expects {spec.num_features}"
        )


def bn_forward(x: Tensor, spec: NormalizerSpec) -> Tensor:
    """BatchNorm：按通道在 batch 与空间轴上统计"""
    _check_channels(x, spec, "bn_forward")
    if spec.mode is Mode.TRAIN:
        if x.shape[0] < 2:
            raise InvalidArgumentError(
                f"bn_forward: batch statistics need B >= 2 in train mode, got B={x.shape[0]}"
            )
        axes = (0,) + tuple(range(2, x.ndim))
        x_hat, mean, var = standardize(x, axes, spec.eps)
        count = x.size // spec.num_features
        m = spec.momentum
        # running_var 写入无偏估计
        spec.running_mean.data[...] = (1 - m) * spec.running_mean.data + m * mean.reshape(-1)
        spec.running_var.data[...] = (1 - m) * spec.running_var.data + m * var.reshape(-1) * count / (count - 1)
    else:
        x_hat = normalize_with_stats(x, spec.running_mean.data, spec.running_var.data, spec.eps)
    return channel_affine(x_hat, spec.affine_scale, spec.affine_bias)


def ln_forward(x: Tensor, spec: NormalizerSpec) -> Tensor:
    """LayerNorm：每个样本在全部非 batch 轴上统计，仿射沿通道轴"""
    _check_channels(x, spec, "ln_forward")
    x_hat, _, _ = standardize(x, tuple(range(1, x.ndim)), spec.eps)
    return channel_affine(x_hat, spec.affine_scale, spec.affine_bias)


def in_forward(x: Tensor, spec: NormalizerSpec) -> Tensor:
    """InstanceNorm：每个 (样本, 通道) 在空间轴上统计"""
    if x.ndim != 4:
        raise InvalidArgumentError(f"in_forward: expected [B,C,H,W] input, got {list(x.shape)}")
    _check_channels(x, spec, "in_forward")
    x_hat, _, _ = standardize(x, (2, 3), spec.eps)
    return channel_affine(x_hat, spec.affine_scale, spec.affine_bias)


NORMALIZERS = {
    NormKind.BN: bn_forward,
    NormKind.LN: ln_forward,
    NormKind.IN: in_forward,
}


@dataclass
class NormGradReport:
    """归一化层梯度检查报告"""

    kind: NormKind
    instances: int
    max_relative_error: float
    max_elementwise_error: float
    input_grad_max_abs: float
    passed: bool


def norm_backward_check(
    spec: NormalizerSpec,
    rng: Optional[Rng] = None,
    shape: Optional[Tuple[int, ...]] = None,
    instances: int = 20,
    tolerance: float = 1e-4,
    elementwise_tolerance: float = 1e-2,
) -> NormGradReport:
    """在随机实例上用中心差分核对归一化层的输入梯度与仿射参数梯度

    检查期间 running 统计量会被多次更新，因此在副本状态上进行并在结束后恢复。
    """
    rng = rng or Rng(0)
    if shape is None:
        shape = (4, spec.num_features, 3, 3) if spec.kind is NormKind.IN else (4, spec.num_features)
    saved = spec.state_dict()
    worst = 0.0
    worst_element = 0.0
    input_grad_max = 0.0
    try:
        for index in range(instances):
            stream = rng.substream(index)
            x = Tensor(stream.normal(shape) * 2.0 + 0.5, requires_grad=True, name="x")
            loss_of = projection_loss(Tensor(np.zeros(shape)), stream)
            result = check_gradients(
                lambda: loss_of(spec(x)),
                [x, spec.affine_scale, spec.affine_bias],
                tolerance=tolerance,
                elementwise_tolerance=elementwise_tolerance,
                names=["x", "affine_scale", "affine_bias"],
            )
            worst = max(worst, result.max_relative_error)
            worst_element = max(worst_element, result.max_elementwise_error)
            input_grad_max = max(input_grad_max, result.max_abs_grad["x"])
    finally:
        spec.load_state_dict(saved)
    passed = worst < tolerance and worst_element < elementwise_tolerance
    logger.debug(
        f"{spec.kind.value} gradient check: max rel error {worst:.3e}, "
        f"max elementwise error {worst_element:.3e} over {instances} instances"
    )
    return NormGradReport(spec.kind, instances, worst, worst_element, input_grad_max, passed)
