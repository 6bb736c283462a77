"""数据集：高斯混合生成、数据集文件读写、CIFAR-10 二进制加载

数据集文件（小端）：
    头部  magic "NMLD" | version u32 | n u32 | d u32 | label_count u32
    特征  n×d 个 f64，行主序
    标签  n 个 u16
"""
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from utils.logger import logger

from .core import Rng
from .exceptions import FormatError, InvalidArgumentError
from .noise_model import MixtureSpec

logger = logger.bind(name="Data")

DATASET_MAGIC = b"NMLD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIII")

CIFAR_RECORD_BYTES = 3073
CIFAR_IMAGE_SHAPE = (3, 32, 32)
CIFAR_CLASSES = 10
CIFAR_MEAN = np.array([0.4914, 0.4822, 0.4465])
CIFAR_STD = np.array([0.2470, 0.2435, 0.2616])


@dataclass
class Dataset:
    """带标签样本；features 第一维为样本，其余维为单个样本的形状"""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidArgumentError(
                f"{self.features.shape[0]} feature rows for {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidArgumentError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.features.shape[1:])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes, self.name)


@dataclass
class DatasetSplit:
    train: Dataset
    test: Dataset


def gen_mixture_dataset(spec: MixtureSpec, n_train: int, n_test: int, rng: Rng) -> DatasetSplit:
    """从混合分布抽取训练集与测试集，两者使用互不相交的随机子流"""
    if n_train < 1 or n_test < 1:
        raise InvalidArgumentError(f"dataset counts must be >= 1, got n_train={n_train}, n_test={n_test}")
    x_train, y_train = spec.sample(rng.named("train"), n_train)
    x_test, y_test = spec.sample(rng.named("test"), n_test)
    logger.debug(f"Generated mixture dataset: {n_train} train / {n_test} test, {spec.n} classes, d={spec.dim}")
    return DatasetSplit(
        Dataset(x_train, y_train, spec.n, "mixture-train"),
        Dataset(x_test, y_test, spec.n, "mixture-test"),
    )


def nearest_centroid_accuracy(train: Dataset, test: Dataset) -> float:
    """用训练集类质心对测试集做最近质心分类的准确率"""
    x_train = train.features.reshape(len(train), -1)
    x_test = test.features.reshape(len(test), -1)
    present = np.flatnonzero(train.class_counts())
    centroids = np.stack([x_train[train.labels == c].mean(axis=0) for c in present])
    distances = ((x_test[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(present[np.argmin(distances, axis=1)] == test.labels))


# ---- 数据集文件 ----

def dumps_dataset(dataset: Dataset) -> bytes:
    if dataset.num_classes > 0xFFFF:
        raise InvalidArgumentError(f"label count {dataset.num_classes} does not fit in u16 labels")
    features = dataset.features.reshape(len(dataset), -1)
    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(dataset), features.shape[1], dataset.num_classes)
    return header + features.astype("<f8").tobytes() + dataset.labels.astype("<u2").tobytes()


def save_dataset(path: Union[str, Path], dataset: Dataset) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_dataset(dataset))
    return path


def load_dataset(path: Union[str, Path], name: str = "dataset") -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"dataset header needs {_HEADER.size} bytes, file has {len(raw)}", len(raw))
    magic, version, n, d, label_count = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {magic!r}", 0)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    feature_bytes = 8 * n * d
    expected = _HEADER.size + feature_bytes + 2 * n
    if len(raw) < expected:
        raise FormatError(f"dataset truncated: expected {expected} bytes, got {len(raw)}", len(raw))
    if len(raw) > expected:
        raise FormatError("unexpected trailing bytes after labels", expected)
    features = np.frombuffer(raw, dtype="<f8", count=n * d, offset=_HEADER.size).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=_HEADER.size + feature_bytes)
    bad = np.flatnonzero(labels >= label_count)
    if bad.size:
        raise FormatError(
            f"label {int(labels[bad[0]])} out of range for {label_count} classes",
            _HEADER.size + feature_bytes + 2 * int(bad[0]),
        )
    return Dataset(features.astype(np.float64), labels.astype(np.int64), label_count, name)


# ---- CIFAR-10 ----

def _cifar_files(path: Path, split: str) -> List[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise InvalidArgumentError(f"CIFAR-10 path does not exist: {path}")
    pattern = "test_batch*.bin" if split == "test" else "data_batch_*.bin"
    files = sorted(path.glob(pattern))
    if not files:
        raise InvalidArgumentError(f"no CIFAR-10 '{pattern}' files under {path}")
    return files


def _read_cifar_records(files: List[Path]) -> np.ndarray:
    records = []
    for file in files:
        raw = np.fromfile(file, dtype=np.uint8)
        if raw.size % CIFAR_RECORD_BYTES:
            complete = raw.size // CIFAR_RECORD_BYTES * CIFAR_RECORD_BYTES
            raise FormatError(
                f"{file.name}: size {raw.size} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record",
                complete,
            )
        block = raw.reshape(-1, CIFAR_RECORD_BYTES)
        bad = np.flatnonzero(block[:, 0] >= CIFAR_CLASSES)
        if bad.size:
            raise FormatError(
                f"{file.name}: label {int(block[bad[0], 0])} out of range 0-9",
                int(bad[0]) * CIFAR_RECORD_BYTES,
            )
        records.append(block)
    return np.concatenate(records) if records else np.zeros((0, CIFAR_RECORD_BYTES), dtype=np.uint8)


def normalize_cifar(pixels: np.ndarray) -> np.ndarray:
    """uint8 [N,3,32,32] → 缩放到 [0,1] 后按通道标准化"""
    scaled = pixels.astype(np.float64) / 255.0
    return (scaled - CIFAR_MEAN[None, :, None, None]) / CIFAR_STD[None, :, None, None]


def denormalize_cifar(images: np.ndarray) -> np.ndarray:
    """normalize_cifar 的逆变换，返回 [0,255] 的浮点像素"""
    return (images * CIFAR_STD[None, :, None, None] + CIFAR_MEAN[None, :, None, None]) * 255.0


def _balanced_indices(labels: np.ndarray, per_class: int, rng: Rng) -> np.ndarray:
    chosen = []
    for c in range(CIFAR_CLASSES):
        candidates = np.flatnonzero(labels == c)
        if candidates.size < per_class:
            raise InvalidArgumentError(f"class {c} has {candidates.size} records, {per_class} requested")
        chosen.append(candidates[rng.substream(c).permutation(candidates.size)[:per_class]])
    return np.sort(np.concatenate(chosen))


def load_cifar10_binary(path: Union[str, Path], subset: int, seed: int = 0, split: str = "train") -> Dataset:
    """读取 CIFAR-10 二进制记录并按种子选出每类 subset 张的平衡子集

    Args:
        path: 单个 .bin 文件，或包含 data_batch_*.bin / test_batch.bin 的目录
        subset: 每类样本数
        seed: 子集选择种子
        split: 目录模式下读取 train 还是 test 文件
    """
    if subset < 1:
        raise InvalidArgumentError(f"subset must be >= 1 per class, got {subset}")
    records = _read_cifar_records(_cifar_files(Path(path), split))
    labels = records[:, 0].astype(np.int64)
    indices = _balanced_indices(labels, subset, Rng(seed).named(f"cifar10-{split}"))
    pixels = records[indices, 1:].reshape((-1,) + CIFAR_IMAGE_SHAPE)
    logger.info(f"Loaded {indices.size} CIFAR-10 images ({subset} per class) from {path}")
    return Dataset(normalize_cifar(pixels), labels[indices], CIFAR_CLASSES, f"cifar10-{split}")


def load_cifar10_split(path: Union[str, Path], subset: int, seed: int = 0) -> DatasetSplit:
    """训练/测试划分：目录里有 test_batch.bin 时用它（每类 subset/5 张），否则从同一批记录里留出"""
    path = Path(path)
    holdout = max(1, subset // 5)
    if path.is_dir() and any(path.glob("test_batch*.bin")):
        return DatasetSplit(
            load_cifar10_binary(path, subset, seed, "train"),
            load_cifar10_binary(path, holdout, seed, "test"),
        )
    pool = load_cifar10_binary(path, subset + holdout, seed, "train")
    test_mask = np.zeros(len(pool), dtype=bool)
    for c in range(CIFAR_CLASSES):
        test_mask[np.flatnonzero(pool.labels == c)[:holdout]] = True
    return DatasetSplit(pool.subset(np.flatnonzero(~test_mask)), pool.subset(np.flatnonzero(test_mask)))
