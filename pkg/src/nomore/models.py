"""网络构建与检查点

ResidualNet 由 stem → 残差块序列 → (全局平均池化) → 零初始化线性分类头组成。
卷积网络按阶段组织，阶段之间通道加倍、空间减半；MLP 网络用于合成高斯混合数据。
"""
from collections import Counter
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import yaml

from utils.logger import logger

from .blocks import ConvBody, MlpBody, ResidualBlock, Wrapper, default_gamma_noise, parse_wrapper
from .core import Conv2d, Linear, Module, Rng, Tensor, global_avg_pool, load_tensors, relu, save_tensors
from .exceptions import FormatError, InvalidArgumentError

logger = logger.bind(name="Models")

WEIGHTS_FILE = "weights.bin"
MANIFEST_FILE = "manifest.yaml"


class ResidualNet(Module):
    """残差分类网络

    Attributes:
        architecture: 重建网络所需的全部构造参数（写入检查点清单）
        stem: 卷积或线性 stem，后接 relu
        blocks: 残差块列表
        head: 零初始化分类头，未训练时所有 logits 为 0
    """

    def __init__(self, architecture: Dict[str, Any], stem: Module, blocks: List[ResidualBlock], head: Linear):
        self.architecture = architecture
        self.stem = stem
        self.blocks = blocks
        self.head = head
        for name, tensor in self.named_tensors():
            tensor.name = name

    @property
    def wrapper(self) -> Wrapper:
        return parse_wrapper(self.architecture["wrapper"])

    @property
    def is_convolutional(self) -> bool:
        return self.architecture["kind"] == "resnet"

    def _pool(self, x: Tensor) -> Tensor:
        return global_avg_pool(x) if self.is_convolutional else x

    def features(self, x: Tensor) -> Tensor:
        """分类头之前的特征"""
        x = relu(self.stem(x))
        for block in self.blocks:
            x = block(x)
        return self._pool(x)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))

    def identity_features(self, x: Tensor) -> Tensor:
        """去掉全部残差分支后的特征：只保留 stem、恒等路径（含下采样）与池化"""
        x = relu(self.stem(x))
        for block in self.blocks:
            x = block.identity(x)
        return self._pool(x)

    def forward_identity(self, x: Tensor) -> Tensor:
        return self.head(self.identity_features(x))

    def rewind_noise(self) -> None:
        for block in self.blocks:
            block.rewind_noise()


def build_resnet(
    stages: Sequence[int],
    base_channels: int,
    wrapper: Union[Wrapper, str],
    gamma_noise: Optional[float],
    rng: Rng,
    num_classes: int = 10,
    in_channels: int = 3,
    noise_rng: Optional[Rng] = None,
) -> ResidualNet:
    """按阶段构建卷积残差网络

    第 2 个及之后阶段的第一个块做下采样：分支第一层卷积步长为 2、通道加倍，
    恒等路径做 2×2 平均池化并补零通道。权重只取决于 rng，与 wrapper 无关，
    因此不同包装的模型在同一 rng 下拥有相同的卷积权重。
    """
    stages = [int(s) for s in stages]
    if not stages or any(s < 1 for s in stages):
        raise InvalidArgumentError(f"stages must be a non-empty list of positive block counts, got {stages}")
    if base_channels < 1 or num_classes < 1 or in_channels < 1:
        raise InvalidArgumentError("base_channels, num_classes and in_channels must be positive")
    wrapper = parse_wrapper(wrapper)
    gamma_noise = default_gamma_noise(wrapper) if gamma_noise is None else float(gamma_noise)
    noise_rng = noise_rng or rng.named("noise")

    stem = Conv2d(in_channels, base_channels, 3, rng.substream(0), padding=1)
    blocks: List[ResidualBlock] = []
    channels = base_channels
    for stage_index, count in enumerate(stages):
        for position in range(count):
            downsample = stage_index > 0 and position == 0
            out_channels = channels * 2 if downsample else channels
            index = len(blocks)
            body = ConvBody(channels, out_channels, rng.substream(1, index), stride=2 if downsample else 1)
            blocks.append(ResidualBlock(body, wrapper, out_channels, gamma_noise, downsample, noise_rng, index))
            channels = out_channels
    head = Linear(channels, num_classes, rng.substream(2), zero_init=True)

    architecture = {
        "kind": "resnet",
        "stages": stages,
        "base_channels": base_channels,
        "in_channels": in_channels,
        "num_classes": num_classes,
        "wrapper": wrapper.value,
        "gamma_noise": gamma_noise,
    }
    logger.debug(f"Built resnet stages={stages} base={base_channels} wrapper={wrapper.value}")
    return ResidualNet(architecture, stem, blocks, head)


def build_residual_mlp(
    in_dim: int,
    width: int,
    depth: int,
    num_classes: int,
    wrapper: Union[Wrapper, str],
    gamma_noise: Optional[float],
    rng: Rng,
    noise_rng: Optional[Rng] = None,
) -> ResidualNet:
    """linear stem → depth 个 MLP 残差块 → 零初始化分类头

    depth=0 得到 stem + 分类头的线性探针网络。
    """
    if min(in_dim, width, num_classes) < 1 or depth < 0:
        raise InvalidArgumentError("in_dim, width and num_classes must be positive and depth >= 0")
    wrapper = parse_wrapper(wrapper)
    if wrapper is Wrapper.INSTANCE_NORM:
        raise InvalidArgumentError("instance norm needs spatial axes; not available for MLP blocks")
    gamma_noise = default_gamma_noise(wrapper) if gamma_noise is None else float(gamma_noise)
    noise_rng = noise_rng or rng.named("noise")

    stem = Linear(in_dim, width, rng.substream(0))
    blocks = [
        ResidualBlock(MlpBody(width, rng.substream(1, index)), wrapper, width, gamma_noise, False, noise_rng, index)
        for index in range(depth)
    ]
    head = Linear(width, num_classes, rng.substream(2), zero_init=True)

    architecture = {
        "kind": "mlp",
        "in_dim": in_dim,
        "width": width,
        "depth": depth,
        "num_classes": num_classes,
        "wrapper": wrapper.value,
        "gamma_noise": gamma_noise,
    }
    return ResidualNet(architecture, stem, blocks, head)


def build_from_architecture(architecture: Dict[str, Any], rng: Optional[Rng] = None) -> ResidualNet:
    rng = rng or Rng(0)
    arch = dict(architecture)
    kind = arch.pop("kind", None)
    if kind == "resnet":
        return build_resnet(
            arch["stages"], arch["base_channels"], arch["wrapper"], arch["gamma_noise"], rng,
            num_classes=arch["num_classes"], in_channels=arch["in_channels"],
        )
    if kind == "mlp":
        return build_residual_mlp(
            arch["in_dim"], arch["width"], arch["depth"], arch["num_classes"],
            arch["wrapper"], arch["gamma_noise"], rng,
        )
    raise InvalidArgumentError(f"unknown architecture kind: {kind!r}")


def parameter_audit(model: Module) -> Dict[str, int]:
    """按角色统计参数与缓冲区的元素个数"""
    counts: Counter = Counter()
    for _, tensor in model.named_tensors():
        counts[tensor.role or "unassigned"] += tensor.size
    return dict(sorted(counts.items()))


# ---- 检查点 ----

def save_checkpoint(model: ResidualNet, directory: Union[str, Path]) -> Path:
    """写出 weights.bin（张量转储，按注册顺序）与 manifest.yaml"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    named = list(model.named_tensors())
    save_tensors(directory / WEIGHTS_FILE, [t for _, t in named])
    manifest = {
        "architecture": model.architecture,
        "wrapper": model.architecture["wrapper"],
        "gamma_noise": model.architecture["gamma_noise"],
        "tensors": [{"name": name, "shape": list(t.shape), "role": t.role} for name, t in named],
    }
    with open(directory / MANIFEST_FILE, "w", encoding="utf-8") as f:
        yaml.safe_dump(manifest, f, sort_keys=False)
    logger.info(f"Saved checkpoint with {len(named)} tensors to {directory}")
    return directory


def load_checkpoint(directory: Union[str, Path]) -> ResidualNet:
    """按清单重建网络并载入权重与 running 统计量"""
    directory = Path(directory)
    with open(directory / MANIFEST_FILE, "r", encoding="utf-8") as f:
        manifest = yaml.safe_load(f)
    model = build_from_architecture(manifest["architecture"])
    entries = manifest["tensors"]
    named = list(model.named_tensors())
    if [e["name"] for e in entries] != [name for name, _ in named]:
        raise FormatError("checkpoint manifest does not match the rebuilt architecture")
    arrays = load_tensors(directory / WEIGHTS_FILE, len(entries))
    for entry, (name, tensor), values in zip(entries, named, arrays):
        if list(values.shape) != list(entry["shape"]) or values.shape != tensor.shape:
            raise FormatError(f"{name}: stored shape {list(values.shape)} does not match {list(tensor.shape)}")
        tensor.data[...] = values
    logger.info(f"Loaded checkpoint from {directory}")
    return model
