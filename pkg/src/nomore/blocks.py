"""残差块与 NoMore 包装

所有包装共用同一个骨架 y = identity(x) + g(f(x))，只有 g 不同：
    none      g(u) = u
    bn/ln/in  g(u) = norm(u)
    skipinit  g(u) = α·u
    nomore    g(u) = α·u + β (+ γ_noise·δ，仅训练模式)
α、β 是整块共享的标量，初始化为 0；δ 为与 f(x) 同形状的标准正态噪声，
不参与求导。
"""
from enum import Enum
from typing import Optional

from .core import (
    Linear,
    Mode,
    Module,
    Rng,
    Tensor,
    add,
    add_constant,
    avg_pool2x2,
    conv3x3,
    relu,
    scalar_add,
    scalar_mul,
    zero_pad_channels,
)
from .exceptions import InvalidArgumentError
from .normalizers import NormKind, NormalizerSpec


# 替换 BN 的 CNN/MLP 块与替换 LN/IN 的块的噪声幅度默认值
DEFAULT_GAMMA_NOISE = 0.1
DEFAULT_GAMMA_NOISE_LN = 1e-4


class Wrapper(str, Enum):
    NONE = "none"
    BATCH_NORM = "bn"
    LAYER_NORM = "ln"
    INSTANCE_NORM = "in"
    SKIP_INIT = "skipinit"
    NO_MORE = "nomore"

    @property
    def norm_kind(self) -> Optional[NormKind]:
        return _NORM_KINDS.get(self)

    @property
    def uses_scalars(self) -> bool:
        return self in (Wrapper.SKIP_INIT, Wrapper.NO_MORE)


_NORM_KINDS = {
    Wrapper.BATCH_NORM: NormKind.BN,
    Wrapper.LAYER_NORM: NormKind.LN,
    Wrapper.INSTANCE_NORM: NormKind.IN,
}

_WRAPPER_ALIASES = {
    "unnormalized": Wrapper.NONE,
    "normalized": Wrapper.BATCH_NORM,
    "batchnorm": Wrapper.BATCH_NORM,
    "layernorm": Wrapper.LAYER_NORM,
    "instancenorm": Wrapper.INSTANCE_NORM,
    "skip_init": Wrapper.SKIP_INIT,
    "no_more": Wrapper.NO_MORE,
}


def parse_wrapper(value) -> Wrapper:
    """把命令行/配置里的包装名解析为 Wrapper"""
    if isinstance(value, Wrapper):
        return value
    key = str(value).strip().lower()
    if key in _WRAPPER_ALIASES:
        return _WRAPPER_ALIASES[key]
    try:
        return Wrapper(key)
    except ValueError:
        choices = ", ".join(w.value for w in Wrapper)
        raise InvalidArgumentError(f"unknown wrapper '{value}', expected one of: {choices}") from None


def default_gamma_noise(wrapper: Wrapper) -> float:
    return DEFAULT_GAMMA_NOISE_LN if wrapper in (Wrapper.LAYER_NORM, Wrapper.INSTANCE_NORM) else DEFAULT_GAMMA_NOISE


class NoMoreParams(Module):
    """块级标量 α、β 与固定噪声幅度 γ_noise

    use_beta=False 时退化为 SkipInit（只有 α）。
    """

    def __init__(self, gamma_noise: float = 0.0, use_beta: bool = True, mode: Mode = Mode.TRAIN):
        if not gamma_noise >= 0.0:
            raise InvalidArgumentError(f"gamma_noise must be >= 0, got {gamma_noise}")
        self.alpha = Tensor(0.0, requires_grad=True, role="scalar_alpha")
        self.beta = Tensor(0.0, requires_grad=True, role="scalar_beta") if use_beta else None
        self.gamma_noise = float(gamma_noise)
        self.mode = Mode(mode)


# ---- 残差分支 f ----

class ConvBody(Module):
    """conv3x3 → relu → conv3x3；下采样块的第一层卷积步长为 2"""

    def __init__(self, in_channels: int, out_channels: int, rng: Rng, stride: int = 1):
        self.conv1 = conv3x3(in_channels, out_channels, rng.substream(0), stride=stride)
        self.conv2 = conv3x3(out_channels, out_channels, rng.substream(1))

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(relu(self.conv1(x)))


class MlpBody(Module):
    """linear → relu → linear"""

    def __init__(self, width: int, rng: Rng):
        self.fc1 = Linear(width, width, rng.substream(0))
        self.fc2 = Linear(width, width, rng.substream(1))

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class PreActBody(Module):
    """relu → linear，方差探针使用：零均值单位方差输入经过后方差保持为 1"""

    def __init__(self, width: int, rng: Rng):
        self.fc = Linear(width, width, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc(relu(x))


# ---- 前向 ----

def downsample_identity(x: Tensor) -> Tensor:
    """恒等路径下采样：2×2 平均池化后沿通道拼接等量零通道"""
    if x.ndim != 4:
        raise InvalidArgumentError(f"downsample_identity: expected [B,C,H,W], got {list(x.shape)}")
    return zero_pad_channels(avg_pool2x2(x))


def skipinit_forward(x: Tensor, block: "ResidualBlock") -> Tensor:
    """y = x + α·f(x)，与模式无关"""
    if block.wrapper is not Wrapper.SKIP_INIT:
        raise InvalidArgumentError(f"skipinit_forward: block wrapper is {block.wrapper.value}")
    return add(block.identity(x), scalar_mul(block.body(x), block.params.alpha))


def nomore_forward(x: Tensor, block: "ResidualBlock", rng: Rng) -> Tensor:
    """训练模式 y = x + α·f(x) + β + γ_noise·δ；推理模式去掉噪声项

    噪声加在 α·f(x)+β 之后、残差相加之前。
    """
    if block.wrapper is not Wrapper.NO_MORE:
        raise InvalidArgumentError(f"nomore_forward: block wrapper is {block.wrapper.value}")
    params = block.params
    out = scalar_add(scalar_mul(block.body(x), params.alpha), params.beta)
    if params.mode is Mode.TRAIN and params.gamma_noise > 0.0:
        out = add_constant(out, params.gamma_noise * rng.normal(out.shape))
    return add(block.identity(x), out)


class ResidualBlock(Module):
    """残差块

    Attributes:
        body: 残差分支 f
        wrapper: 包装方式
        params: BN/LN/IN 时为 NormalizerSpec，SkipInit/NoMore 时为 NoMoreParams
        downsample: 恒等路径是否做 2×2 池化 + 通道加倍
        block_index: 块序号，决定噪声流
    """

    def __init__(
        self,
        body: Module,
        wrapper: Wrapper,
        num_features: int,
        gamma_noise: float = 0.0,
        downsample: bool = False,
        noise_rng: Optional[Rng] = None,
        block_index: int = 0,
    ):
        wrapper = parse_wrapper(wrapper)
        self.body = body
        self.wrapper = wrapper
        self.downsample = downsample
        self.block_index = block_index
        if wrapper.norm_kind is not None:
            self.params = NormalizerSpec(wrapper.norm_kind, num_features)
        elif wrapper.uses_scalars:
            noise = gamma_noise if wrapper is Wrapper.NO_MORE else 0.0
            self.params = NoMoreParams(noise, use_beta=wrapper is Wrapper.NO_MORE)
        else:
            self.params = None
        self._noise_root = noise_rng or Rng(0)
        self.rewind_noise()

    @property
    def gamma_noise(self) -> float:
        return self.params.gamma_noise if isinstance(self.params, NoMoreParams) else 0.0

    def rewind_noise(self) -> None:
        """把噪声步数重置到 0"""
        self.noise_step = 0

    def noise_stream(self, step: int) -> Rng:
        """第 step 次训练前向的噪声流，由 (block_index, step) 决定，与调用历史无关"""
        return self._noise_root.substream(self.block_index, step)

    def identity(self, x: Tensor) -> Tensor:
        return downsample_identity(x) if self.downsample else x

    def forward(self, x: Tensor) -> Tensor:
        if self.wrapper is Wrapper.NO_MORE:
            stream = self._noise_root
            if self.params.mode is Mode.TRAIN and self.gamma_noise > 0.0:
                stream = self.noise_stream(self.noise_step)
                self.noise_step += 1
            return nomore_forward(x, self, stream)
        if self.wrapper is Wrapper.SKIP_INIT:
            return skipinit_forward(x, self)
        branch = self.body(x)
        if self.params is not None:
            branch = self.params(branch)
        return add(self.identity(x), branch)
