"""残差网络初始化时的激活方差传播

无归一化时每个残差块大约把方差翻倍（≈2^l），在分支末尾插入归一化后每块只
增加 ≈1（≈l+1），零初始化标量（SkipInit/NoMore）的网络在初始化时是恒等映射。
"""
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np

from utils.logger import log_execution, logger

from .blocks import PreActBody, ResidualBlock, Wrapper, parse_wrapper
from .core import Mode, Rng, Tensor
from .exceptions import InvalidArgumentError

logger = logger.bind(name="VarianceLab")


@dataclass(frozen=True)
class DepthProbeConfig:
    """方差探针参数

    wrapper 接受 none/unnormalized、bn/normalized、skipinit、nomore（以及 ln）。
    """

    depth: int = 8
    width: int = 128
    batch: int = 256
    trials: int = 32
    wrapper: Wrapper = Wrapper.NONE
    rng_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "wrapper", parse_wrapper(self.wrapper))
        if self.depth < 1 or self.trials < 1 or self.width < 1:
            raise InvalidArgumentError(
                f"depth, width and trials must be >= 1, got depth={self.depth}, width={self.width}, trials={self.trials}"
            )
        if self.batch < 2:
            raise InvalidArgumentError(f"batch must be >= 2, got {self.batch}")
        if self.wrapper is Wrapper.INSTANCE_NORM:
            raise InvalidArgumentError("instance norm needs spatial axes; the probe uses dense blocks")


@dataclass
class GrowthFit:
    """方差序列的增长拟合

    Attributes:
        base: 对数线性回归得到的指数底数（序列含非正值时为 nan）
        slope / intercept: 最小二乘直线
        mean_ratio: 相邻两项比值的平均
        label: exponential / linear / flat，按两种拟合在原尺度上的残差平方和选择
    """

    base: float
    slope: float
    intercept: float
    mean_ratio: float
    sse_exponential: float
    sse_linear: float
    label: str


@dataclass
class VarianceProfile:
    """各块（l = 0..depth）后的激活方差，l = 0 为输入"""

    wrapper: Wrapper
    per_block_variance: List[Tuple[int, float]]
    per_block_std: List[float]
    trials: int
    seed: int
    per_feature_variance: List[np.ndarray] = field(default_factory=list)
    residual_correlation: List[float] = field(default_factory=list)
    fit: Union[GrowthFit, None] = None

    @property
    def variances(self) -> np.ndarray:
        return np.array([v for _, v in self.per_block_variance])

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.variances)

    @property
    def ratios(self) -> np.ndarray:
        v = self.variances
        return v[1:] / v[:-1]


def _standard_input(rng: Rng, batch: int, width: int) -> np.ndarray:
    """按 (batch × features) 合并标准化，使输入的经验均值为 0、方差恰为 1"""
    x = rng.normal((batch, width))
    return (x - x.mean()) / x.std()


@log_execution
def probe_variance(cfg: DepthProbeConfig) -> VarianceProfile:
    """在未训练的 relu→linear 残差块堆叠中逐块记录激活方差，按 trials 平均

    归一化包装在训练模式下使用 batch 统计量；SkipInit/NoMore 在推理模式下
    运行（初始化时 α=β=0）。
    """
    root = Rng(cfg.rng_seed)
    mode = Mode.TRAIN if cfg.wrapper.norm_kind is not None else Mode.EVAL
    variances = np.zeros((cfg.trials, cfg.depth + 1))
    feature_vars = np.zeros((cfg.depth + 1, cfg.width))
    correlations = np.zeros((cfg.trials, cfg.depth))
    for trial in range(cfg.trials):
        rng = root.substream(trial)
        x = Tensor(_standard_input(rng.named("input"), cfg.batch, cfg.width))
        variances[trial, 0] = x.data.var()
        feature_vars[0] += x.data.var(axis=0)
        for l in range(cfg.depth):
            block = ResidualBlock(
                PreActBody(cfg.width, rng.substream(1, l)), cfg.wrapper, cfg.width, 0.0, block_index=l
            ).set_mode(mode)
            y = block(x)
            branch = y.data - x.data
            var_x, var_branch = x.data.var(), branch.var()
            cov = (y.data.var() - var_x - var_branch) / 2.0
            denom = np.sqrt(var_x * var_branch)
            correlations[trial, l] = cov / denom if denom > 0 else 0.0
            x = y.detach()
            variances[trial, l + 1] = x.data.var()
            feature_vars[l + 1] += x.data.var(axis=0)

    mean = variances.mean(axis=0)
    profile = VarianceProfile(
        wrapper=cfg.wrapper,
        per_block_variance=[(l, float(v)) for l, v in enumerate(mean)],
        per_block_std=[float(s) for s in variances.std(axis=0)],
        trials=cfg.trials,
        seed=cfg.rng_seed,
        per_feature_variance=list(feature_vars / cfg.trials),
        residual_correlation=[float(c) for c in correlations.mean(axis=0)],
    )
    profile.fit = fit_growth(profile)
    logger.info(
        f"Variance probe {cfg.wrapper.value}: depth={cfg.depth} final var {mean[-1]:.4g}, "
        f"fit {profile.fit.label} (base {profile.fit.base:.3f}, slope {profile.fit.slope:.3f})"
    )
    return profile


def fit_growth(profile: Union[VarianceProfile, Sequence[float]]) -> GrowthFit:
    """同时做对数线性回归与直线回归，用原尺度残差平方和判断增长类型"""
    values = profile.variances if isinstance(profile, VarianceProfile) else np.asarray(profile, dtype=np.float64)
    if values.ndim != 1 or values.size < 3:
        raise InvalidArgumentError(f"fit_growth needs at least 3 points, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("fit_growth: variance sequence contains non-finite values")
    steps = np.arange(values.size, dtype=np.float64)

    slope, intercept = np.polyfit(steps, values, 1)
    sse_linear = float(np.sum((values - (slope * steps + intercept)) ** 2))

    if np.all(values > 0):
        log_slope, log_intercept = np.polyfit(steps, np.log(values), 1)
        base = float(np.exp(log_slope))
        sse_exponential = float(np.sum((values - np.exp(log_intercept + log_slope * steps)) ** 2))
        mean_ratio = float(np.mean(values[1:] / values[:-1]))
    else:
        base, sse_exponential, mean_ratio = float("nan"), float("inf"), float("nan")

    scale = max(float(np.max(np.abs(values))), 1.0)
    if float(np.ptp(values)) <= 1e-9 * scale:
        label = "flat"
    elif sse_exponential < sse_linear:
        label = "exponential"
    else:
        label = "linear"
    return GrowthFit(base, float(slope), float(intercept), mean_ratio, sse_exponential, sse_linear, label)
