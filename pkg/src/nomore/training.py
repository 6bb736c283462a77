"""成对训练、逐步计时与残差块微基准

每个训练种子派生三个互不相关的子流：init（权重）、order（小批量顺序）、
noise（NoMore 噪声）。同一种子下不同包装的模型因此拥有相同的初始权重与
完全相同的小批量序列。
"""
from dataclasses import dataclass, field
from typing import Callable, Collection, Dict, List, Optional, Tuple

import numpy as np
import psutil

from utils.decorators import record_duration
from utils.logger import logger

from .blocks import ConvBody, MlpBody, ResidualBlock, Wrapper, default_gamma_noise, parse_wrapper
from .core import Mode, Rng, SgdConfig, Tensor, backward, cross_entropy, sgd_step
from .data import Dataset, DatasetSplit
from .exceptions import InvalidArgumentError
from .models import ResidualNet

logger = logger.bind(name="Training")

WARMUP_STEPS = 10
DECAYED_ROLES = frozenset({"weight"})

ModelFactory = Callable[[Rng, Rng], ResidualNet]


@dataclass(frozen=True)
class TrainSettings:
    """单次训练的超参数

    Attributes:
        steps: SGD 步数，0 表示只评估初始化模型
        batch_size: 小批量大小（每个 epoch 丢弃不满的尾批）
        label_smoothing: 交叉熵标签平滑系数
        frozen_roles: 不参与更新的参数角色，例如 scalar_alpha / scalar_beta
        eval_batch: 评估时的批大小
    """

    steps: int = 2000
    batch_size: int = 128
    sgd: SgdConfig = field(default_factory=SgdConfig)
    label_smoothing: float = 0.1
    frozen_roles: Tuple[str, ...] = ()
    eval_batch: int = 512

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise InvalidArgumentError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class RunResult:
    """一个 (包装, 种子) 训练的结果

    diverged 为 True 时 diverged_at 记录出现非有限 loss 的步，该次运行不计入均值。
    """

    wrapper: str
    seed: int
    gamma_noise: float
    epoch_losses: List[float] = field(default_factory=list)
    epoch_accuracy: List[float] = field(default_factory=list)
    final_accuracy: float = float("nan")
    step_times_ms: List[float] = field(default_factory=list)
    steps_completed: int = 0
    diverged: bool = False
    diverged_at: Optional[int] = None

    @property
    def median_step_ms(self) -> float:
        times = self.step_times_ms[WARMUP_STEPS:] if len(self.step_times_ms) > WARMUP_STEPS else self.step_times_ms
        return float(np.median(times)) if times else float("nan")


@dataclass
class RunMetrics:
    """同一包装在多个种子上的汇总"""

    wrapper: str
    gamma_noise: float
    runs: List[RunResult]
    block_ms: float = float("nan")
    speedup_ratio: float = float("nan")

    @property
    def completed(self) -> List[RunResult]:
        return [r for r in self.runs if not r.diverged]

    @property
    def diverged_seeds(self) -> List[int]:
        return [r.seed for r in self.runs if r.diverged]

    @property
    def accuracy_mean(self) -> float:
        acc = [r.final_accuracy for r in self.completed]
        return float(np.mean(acc)) if acc else float("nan")

    @property
    def accuracy_std(self) -> float:
        acc = [r.final_accuracy for r in self.completed]
        return float(np.std(acc, ddof=1)) if len(acc) > 1 else 0.0

    @property
    def median_step_ms(self) -> float:
        times = [r.median_step_ms for r in self.completed if np.isfinite(r.median_step_ms)]
        return float(np.median(times)) if times else float("nan")


def seed_streams(seed: int) -> Dict[str, Rng]:
    root = Rng(seed)
    return {name: root.named(name) for name in ("init", "order", "noise")}


def evaluate(model: ResidualNet, dataset: Dataset, batch: int = 512) -> float:
    """推理模式下的分类准确率"""
    if len(dataset) == 0:
        raise InvalidArgumentError("cannot evaluate on an empty dataset")
    model.eval()
    correct = 0
    for start in range(0, len(dataset), batch):
        logits = model(Tensor(dataset.features[start:start + batch])).data
        correct += int(np.sum(np.argmax(logits, axis=1) == dataset.labels[start:start + batch]))
    return correct / len(dataset)


def _split_parameters(model: ResidualNet, frozen: Collection[str]) -> Tuple[list, list]:
    decayed, plain = [], []
    for _, p in model.named_parameters():
        if p.role in frozen:
            continue
        (decayed if p.role in DECAYED_ROLES else plain).append(p)
    return decayed, plain


def train_model(model: ResidualNet, data: DatasetSplit, settings: TrainSettings, order_rng: Rng,
                seed: int = 0) -> RunResult:
    """按 order_rng 给出的小批量顺序训练 settings.steps 步

    权重衰减只作用于 weight 角色；frozen_roles 中的参数保持初值。
    """
    train = data.train
    batch = min(settings.batch_size, len(train))
    steps_per_epoch = len(train) // batch
    if model.wrapper is Wrapper.BATCH_NORM and batch < 2:
        raise InvalidArgumentError("batch norm training needs batch_size >= 2")
    decayed, plain = _split_parameters(model, set(settings.frozen_roles))
    plain_cfg = settings.sgd.without_decay()
    result = RunResult(model.wrapper.value, seed, float(model.architecture["gamma_noise"]))

    def sgd_update(x: np.ndarray, y: np.ndarray) -> float:
        model.train()
        model.zero_grad()
        loss = cross_entropy(model(Tensor(x)), y, settings.label_smoothing)
        value = loss.item()
        if not np.isfinite(value):
            return value
        backward(loss)
        sgd_step(decayed, settings.sgd)
        sgd_step(plain, plain_cfg)
        return value

    timed_update = record_duration(result.step_times_ms)(sgd_update)
    step = 0
    epoch = 0
    while step < settings.steps and not result.diverged:
        order = order_rng.substream(epoch).permutation(len(train))
        losses = []
        for position in range(steps_per_epoch):
            if step >= settings.steps:
                break
            indices = order[position * batch:(position + 1) * batch]
            value = timed_update(train.features[indices], train.labels[indices])
            step += 1
            if not np.isfinite(value):
                result.diverged = True
                result.diverged_at = step
                logger.warning(f"{result.wrapper} seed {seed}: loss became non-finite at step {step}, run excluded")
                break
            losses.append(value)
            logger.debug(f"{result.wrapper} seed {seed} step {step}: loss {value:.5f}")
        if losses:
            result.epoch_losses.append(float(np.mean(losses)))
        if not result.diverged:
            result.epoch_accuracy.append(evaluate(model, data.test, settings.eval_batch))
        epoch += 1

    result.steps_completed = step
    if not result.diverged:
        result.final_accuracy = (
            result.epoch_accuracy[-1] if result.epoch_accuracy else evaluate(model, data.test, settings.eval_batch)
        )
    model.eval()
    return result


def train_seed(factory: ModelFactory, data: DatasetSplit, settings: TrainSettings, seed: int) -> RunResult:
    """用种子派生的 init / noise 子流构建模型，并按 order 子流训练"""
    streams = seed_streams(seed)
    model = factory(streams["init"], streams["noise"])
    result = train_model(model, data, settings, streams["order"], seed)
    logger.info(
        f"Trained {result.wrapper} (gamma_noise={result.gamma_noise:g}) seed {seed}: "
        f"accuracy {result.final_accuracy:.4f}, median step {result.median_step_ms:.3f} ms"
    )
    return result


# ---- 微基准 ----

@dataclass
class BlockTiming:
    wrapper: str
    median_ms: float
    repeats: int
    rss_mb: Optional[float] = None


def benchmark_block(
    wrapper,
    input_shape: Tuple[int, ...],
    rng: Rng,
    repeats: int = 50,
    gamma_noise: Optional[float] = None,
    capture_memory: bool = False,
) -> BlockTiming:
    """单个残差块在训练模式下的前向耗时中位数（先做 10 次预热）

    input_shape 为 [B, width] 时使用 MLP 块，为 [B, C, H, W] 时使用卷积块。
    """
    wrapper = parse_wrapper(wrapper)
    gamma_noise = default_gamma_noise(wrapper) if gamma_noise is None else gamma_noise
    if len(input_shape) == 2:
        body = MlpBody(input_shape[1], rng.substream(0))
    elif len(input_shape) == 4:
        body = ConvBody(input_shape[1], input_shape[1], rng.substream(0))
    else:
        raise InvalidArgumentError(f"benchmark input must be [B,width] or [B,C,H,W], got {list(input_shape)}")
    block = ResidualBlock(body, wrapper, input_shape[1], gamma_noise, noise_rng=rng.named("noise"))
    block.set_mode(Mode.TRAIN)
    x = Tensor(rng.named("input").normal(input_shape))

    times: List[float] = []
    forward = record_duration(times)(block.forward)
    for _ in range(WARMUP_STEPS + repeats):
        forward(x)
    rss = psutil.Process().memory_info().rss / 2 ** 20 if capture_memory else None
    return BlockTiming(wrapper.value, float(np.median(times[WARMUP_STEPS:])), repeats, rss)
