"""从单个样本的视角模拟 BN 噪声

固定样本 x_i 与 B−1 个同伴组成一个 batch，去均值后
    x̂_i = (B−1)/B · x_i − δ,   δ = (1/B) Σ_{j≠i} x_j
δ 的均值由同伴的类别构成决定（类间噪声），方差由各类方差决定（类内噪声）。
默认与推导一致地略去 BN 的分母；full_bn=True 时保留分母，用来度量这一简化的影响。
"""
import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats as sps

from utils.logger import logger

from .core import Rng
from .exceptions import InvalidArgumentError
from .stats import pca

logger = logger.bind(name="NoiseModel")

CHUNK_REPS = 256
MIN_SAMPLES_PER_CLASS = 10


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """n 个对角高斯分布组成的混合，x ∼ N(μ^(y), diag(σ^(y)²))，y ∼ Categorical(p)

    stds 可以是标量、长度 n 的向量（每类各向同性）或 n×d 矩阵。
    """

    means: np.ndarray
    stds: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        stds = np.asarray(self.stds, dtype=np.float64)
        if stds.ndim < 2:
            stds = np.broadcast_to(stds.reshape(-1, 1) if stds.ndim == 1 else stds, means.shape)
        stds = np.array(stds, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if means.ndim != 2 or stds.shape != means.shape:
            raise InvalidArgumentError(
                f"means {list(means.shape)} and stds {list(stds.shape)} must both be n×d"
            )
        if probs.shape[0] != means.shape[0]:
            raise InvalidArgumentError(f"{probs.shape[0]} probabilities for {means.shape[0]} distributions")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError(f"probabilities must be non-negative and sum to 1, got {probs.tolist()}")
        if not np.all(stds > 0):
            raise InvalidArgumentError("standard deviations must be > 0 elementwise")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def simplex(cls, n: int, dim: int, separation: float, std: float = 1.0,
                probs: Optional[Sequence[float]] = None) -> "MixtureSpec":
        """类均值放在坐标轴上，任意两类均值的欧氏距离为 separation·std；单类时均值为原点"""
        if n < 1 or dim < n:
            raise InvalidArgumentError(f"simplex mixture needs 1 <= n <= dim, got n={n}, dim={dim}")
        means = np.zeros((n, dim))
        if n > 1:
            means[np.arange(n), np.arange(n)] = separation * std / np.sqrt(2.0)
        probs = np.full(n, 1.0 / n) if probs is None else probs
        return cls(means, np.full((n, dim), float(std)), probs)

    def sample(self, rng: Rng, count: int) -> Tuple[np.ndarray, np.ndarray]:
        """按类别概率抽取 count 个带标签样本"""
        labels = rng.choice(self.n, count, self.probs)
        x = self.means[labels] + self.stds[labels] * rng.normal((count, self.dim))
        return x, labels

    def mixture_moments(self) -> Tuple[np.ndarray, np.ndarray]:
        """单次混合抽样的逐维均值与方差"""
        mean = self.probs @ self.means
        second = self.probs @ (self.stds ** 2 + self.means ** 2)
        return mean, second - mean ** 2


@dataclass(frozen=True)
class BatchComposition:
    """batch 的类别计数 (m_1..m_n)，包含固定样本本身，sum(counts) == batch_size"""

    counts: Tuple[int, ...]
    batch_size: Optional[int] = None

    def __post_init__(self) -> None:
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise InvalidArgumentError(f"class counts must be non-negative, got {counts}")
        total = sum(counts)
        batch_size = total if self.batch_size is None else int(self.batch_size)
        if total != batch_size:
            raise InvalidArgumentError(f"class counts {counts} sum to {total}, batch size is {batch_size}")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "batch_size", batch_size)

    def companions(self, fixed_class: int) -> np.ndarray:
        """去掉固定样本后同伴的类别计数"""
        if not 0 <= fixed_class < len(self.counts):
            raise InvalidArgumentError(f"class {fixed_class} outside composition of {len(self.counts)} classes")
        if self.counts[fixed_class] < 1:
            raise InvalidArgumentError(f"composition {self.counts} has no slot for the fixed sample's class {fixed_class}")
        counts = np.array(self.counts, dtype=np.int64)
        counts[fixed_class] -= 1
        return counts

    @property
    def digest(self) -> str:
        return hashlib.sha256(",".join(map(str, self.counts)).encode("ascii")).hexdigest()[:8]


# ---- 同伴约束 ----

@dataclass(frozen=True)
class Free:
    """同伴按混合概率自由抽取"""


@dataclass(frozen=True)
class AllFromClass:
    """全部同伴来自类别 y"""

    y: int


@dataclass(frozen=True)
class FixedComposition:
    """batch（含固定样本）的类别构成固定"""

    counts: Tuple[int, ...]


ClassConstraint = Union[Free, AllFromClass, FixedComposition]


@dataclass
class NoiseSample:
    """一次 BN 模拟的结果

    Attributes:
        fixed_index_class: 固定样本的类别 y_i
        delta: δ，x̂ = scaled_self − δ
        scaled_self: (B−1)/B·x_i
        x_hat: 固定样本经 BN 后的值
        composition: 本次 batch 的类别构成
    """

    fixed_index_class: int
    delta: np.ndarray
    scaled_self: np.ndarray
    x_hat: np.ndarray
    composition: BatchComposition


def _companion_plan(spec: MixtureSpec, batch_size: int, constraint: ClassConstraint,
                    fixed_class: int) -> Optional[np.ndarray]:
    """校验约束，返回固定的同伴标签序列（Free 时为 None）"""
    companions = batch_size - 1
    if isinstance(constraint, Free):
        return None
    if isinstance(constraint, AllFromClass):
        if not 0 <= constraint.y < spec.n:
            raise InvalidArgumentError(f"AllFromClass({constraint.y}) outside {spec.n} classes")
        if spec.probs[constraint.y] == 0:
            raise InvalidArgumentError(f"AllFromClass({constraint.y}) is infeasible: p_y = 0")
        return np.full(companions, constraint.y, dtype=np.int64)
    if isinstance(constraint, FixedComposition):
        if len(constraint.counts) != spec.n:
            raise InvalidArgumentError(f"composition has {len(constraint.counts)} counts for {spec.n} classes")
        counts = BatchComposition(constraint.counts, batch_size).companions(fixed_class)
        if np.any((counts > 0) & (spec.probs == 0)):
            raise InvalidArgumentError(f"composition {constraint.counts} draws from a class with p_y = 0")
        return np.repeat(np.arange(spec.n), counts)
    raise InvalidArgumentError(f"unknown class constraint: {constraint!r}")


def simulate_bn_sample(
    x_fixed: Optional[np.ndarray],
    spec: MixtureSpec,
    batch_size: int,
    constraint: ClassConstraint,
    rng: Rng,
    reps: int,
    fixed_class: int = 0,
    full_bn: bool = False,
    eps: float = 1e-5,
) -> List[NoiseSample]:
    """重复 reps 次：抽取 B−1 个同伴，与 x_fixed 组成 batch 做 BN，记录 δ

    每 256 次重复使用一个独立子流 rng.substream(块序号)，结果与分块方式之外的
    调用顺序无关。x_fixed 为 None 时取 fixed_class 的类均值。
    """
    if batch_size < 2:
        raise InvalidArgumentError(f"batch size must be >= 2, got {batch_size}")
    if reps < 1:
        raise InvalidArgumentError(f"reps must be >= 1, got {reps}")
    if not 0 <= fixed_class < spec.n:
        raise InvalidArgumentError(f"fixed_class {fixed_class} outside {spec.n} classes")
    x_fixed = spec.means[fixed_class] if x_fixed is None else np.asarray(x_fixed, dtype=np.float64).reshape(-1)
    if x_fixed.shape != (spec.dim,):
        raise InvalidArgumentError(f"x_fixed has length {x_fixed.shape[0]}, mixture dim is {spec.dim}")
    plan = _companion_plan(spec, batch_size, constraint, fixed_class)

    scale = (batch_size - 1) / batch_size
    scaled_self = scale * x_fixed
    classes = np.arange(spec.n)
    samples: List[NoiseSample] = []
    for chunk_index, start in enumerate(range(0, reps, CHUNK_REPS)):
        stream = rng.substream(chunk_index)
        m = min(CHUNK_REPS, reps - start)
        if plan is None:
            labels = stream.choice(spec.n, (m, batch_size - 1), spec.probs)
        else:
            labels = np.broadcast_to(plan, (m, batch_size - 1))
        companions = spec.means[labels] + spec.stds[labels] * stream.normal((m, batch_size - 1, spec.dim))
        total = companions.sum(axis=1)
        delta = total / batch_size
        if full_bn:
            mean = (x_fixed + total) / batch_size
            centered = companions - mean[:, None, :]
            var = ((centered ** 2).sum(axis=1) + (x_fixed - mean) ** 2) / batch_size
            x_hat = (x_fixed - mean) / np.sqrt(var + eps)
            delta = scaled_self - x_hat
        else:
            x_hat = scaled_self - delta
        counts = (labels[..., None] == classes).sum(axis=1)
        counts[:, fixed_class] += 1
        for row in range(m):
            samples.append(NoiseSample(
                fixed_class,
                delta[row].copy(),
                scaled_self.copy(),
                x_hat[row].copy(),
                BatchComposition(tuple(counts[row]), batch_size),
            ))
    logger.debug(f"Simulated {reps} BN batches (B={batch_size}, {type(constraint).__name__}, full_bn={full_bn})")
    return samples


def stack(samples: Sequence[NoiseSample], attribute: str = "delta") -> np.ndarray:
    """把样本的某个向量字段堆叠为 K×d 矩阵"""
    if not samples:
        raise InvalidArgumentError("no noise samples given")
    return np.stack([getattr(s, attribute) for s in samples])


# ---- 闭式解 ----

def closed_form_noise(spec: MixtureSpec, composition: BatchComposition,
                      exclude_class: int) -> Tuple[np.ndarray, np.ndarray]:
    """给定构成时 δ 的逐维均值 (1/B)Σ_{j≠i} μ^{y_j} 与方差 (1/B²)Σ_{j≠i} σ^{(y_j)2}"""
    if len(composition.counts) != spec.n:
        raise InvalidArgumentError(f"composition has {len(composition.counts)} counts for {spec.n} classes")
    companions = composition.companions(exclude_class).astype(np.float64)
    b = composition.batch_size
    return companions @ spec.means / b, companions @ spec.stds ** 2 / b ** 2


def closed_form_for(spec: MixtureSpec, batch_size: int, constraint: ClassConstraint,
                    fixed_class: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """任一约束下 δ 的闭式均值与方差；Free 时同伴独立地来自整个混合"""
    if isinstance(constraint, Free):
        mean, var = spec.mixture_moments()
        companions = batch_size - 1
        return companions * mean / batch_size, companions * var / batch_size ** 2
    if isinstance(constraint, AllFromClass):
        counts = np.zeros(spec.n, dtype=np.int64)
        counts[constraint.y] += batch_size - 1
        counts[fixed_class] += 1
        return closed_form_noise(spec, BatchComposition(tuple(counts), batch_size), fixed_class)
    return closed_form_noise(spec, BatchComposition(constraint.counts, batch_size), fixed_class)


def composition_probability(spec: MixtureSpec, composition: BatchComposition) -> float:
    """类别计数向量的多项分布概率 B!/(∏ m_y!) ∏ p_y^{m_y}"""
    if len(composition.counts) != spec.n:
        raise InvalidArgumentError(f"composition has {len(composition.counts)} counts for {spec.n} classes")
    return float(sps.multinomial.pmf(composition.counts, composition.batch_size, spec.probs))


# ---- 类内噪声 ----

def _pair_indices(k: int, pairing: str) -> Tuple[np.ndarray, np.ndarray]:
    if pairing == "disjoint":
        first = np.arange(k // 2)
        return first, first + k // 2
    if pairing != "all":
        raise InvalidArgumentError(f"unknown pairing '{pairing}', expected 'all' or 'disjoint'")
    ia, ib = np.triu_indices(k, 1)
    # 轮转定向：每个样本作为被减数与减数的次数相同
    gap = ib - ia
    forward = gap <= (k - 1) // 2
    if k % 2 == 0:
        forward |= (gap == k // 2) & (ia < k // 2)
    return np.where(forward, ia, ib), np.where(forward, ib, ia)


def extract_intra_noise(samples: Sequence[NoiseSample], pairing: str = "all",
                        require_fixed_composition: bool = True) -> np.ndarray:
    """两两相减 x̂(a) − x̂(b)，消去由构成决定的类间均值，只留零均值的类内噪声

    pairing="all" 取全部 C(K,2) 对，按轮转定向，差值之间强相关，只用于估计差值方差；
    "disjoint" 取 (i, i+⌊K/2⌋) 共 ⌊K/2⌋ 对，各差值相互独立，用于零均值检验。
    前后两半样本分布不同时，每个 disjoint 差值都带有同一偏移。

    Returns:
        差值矩阵，每行一个 d 维向量
    """
    if len(samples) < 2:
        raise InvalidArgumentError(f"need at least 2 noise samples, got {len(samples)}")
    if require_fixed_composition:
        compositions = {s.composition.counts for s in samples}
        if len(compositions) > 1:
            raise InvalidArgumentError(
                f"samples span {len(compositions)} batch compositions; intra noise needs a fixed one"
            )
    x_hat = stack(samples, "x_hat")
    first, second = _pair_indices(len(samples), pairing)
    return x_hat[first] - x_hat[second]


# ---- 分解 ----

@dataclass
class MomentComparison:
    """经验矩与闭式矩的比较，z 分数以标准误为单位"""

    empirical_mean: np.ndarray
    empirical_var: np.ndarray
    closed_mean: np.ndarray
    closed_var: np.ndarray
    reps: int

    @property
    def mean_z(self) -> np.ndarray:
        se = np.sqrt(self.closed_var / self.reps)
        return np.abs(self.empirical_mean - self.closed_mean) / se

    @property
    def var_z(self) -> np.ndarray:
        se = self.closed_var * np.sqrt(2.0 / (self.reps - 1))
        return np.abs(self.empirical_var - self.closed_var) / se

    @property
    def var_relative_error(self) -> float:
        return float(np.max(np.abs(self.empirical_var / self.closed_var - 1.0)))


def compare_moments(samples: Sequence[NoiseSample], closed: Tuple[np.ndarray, np.ndarray]) -> MomentComparison:
    deltas = stack(samples, "delta")
    if deltas.shape[0] < 2:
        raise InvalidArgumentError("need at least 2 samples to estimate a variance")
    return MomentComparison(
        deltas.mean(axis=0), deltas.var(axis=0, ddof=1), closed[0], closed[1], deltas.shape[0]
    )


@dataclass
class NoiseDecomposition:
    """按 batch 类别分组的 x̂ 的 PCA 散度分解与最近质心识别

    Attributes:
        between_scatter: Σ_c n_c ||m_c − m||²（投影空间）
        within_scatter: Σ_c Σ_z ||z − m_c||²
        identification_accuracy: 用偶数序号样本求质心、在奇数序号样本上识别 batch 类别的准确率
        degenerate: 协方差谱退化，按伪谱处理
    """

    classes: List[int]
    between_scatter: float
    within_scatter: float
    identification_accuracy: float
    explained_variance: np.ndarray
    degenerate: bool = False
    projections: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def scatter_ratio(self) -> float:
        if self.within_scatter > 0:
            return self.between_scatter / self.within_scatter
        return float("inf") if self.between_scatter > 0 else 0.0

    @property
    def chance_level(self) -> float:
        return 1.0 / len(self.classes)


def decompose_noise(samples_per_class: Mapping[int, Sequence[NoiseSample]],
                    k: Optional[int] = None) -> NoiseDecomposition:
    """对合并后的 x̂ 做 PCA，比较类间与类内散度，并检验能否从噪声判断 batch 的类别"""
    classes = sorted(samples_per_class)
    if len(classes) < 2:
        raise InvalidArgumentError(f"need at least 2 classes, got {len(classes)}")
    for y in classes:
        if len(samples_per_class[y]) < MIN_SAMPLES_PER_CLASS:
            raise InvalidArgumentError(
                f"class {y} has {len(samples_per_class[y])} samples, need >= {MIN_SAMPLES_PER_CLASS}"
            )
    groups = [stack(samples_per_class[y], "x_hat") for y in classes]
    pooled = np.concatenate(groups)
    n, d = pooled.shape
    k = min(d, max(2, n - 1)) if k is None else k
    result = pca(pooled, k)

    spectrum = result.explained_variance
    degenerate = bool(spectrum[0] <= 0 or spectrum[-1] <= 1e-12 * spectrum[0])
    if degenerate:
        logger.warning("Degenerate noise covariance; scatter computed on the pseudo-spectrum")

    projected = [result.project(g) for g in groups]
    grand = np.concatenate(projected).mean(axis=0)
    centroids = [p.mean(axis=0) for p in projected]
    between = float(sum(len(p) * np.sum((c - grand) ** 2) for p, c in zip(projected, centroids)))
    within = float(sum(np.sum((p - c) ** 2) for p, c in zip(projected, centroids)))

    train_centroids = np.stack([p[0::2].mean(axis=0) for p in projected])
    correct = 0
    total = 0
    for label, p in enumerate(projected):
        held_out = p[1::2]
        distances = ((held_out[:, None, :] - train_centroids[None, :, :]) ** 2).sum(axis=2)
        correct += int(np.sum(np.argmin(distances, axis=1) == label))
        total += held_out.shape[0]

    logger.info(f"Noise decomposition: between/within scatter {between:.4g}/{within:.4g}, "
                f"identification accuracy {correct / total:.3f}")
    return NoiseDecomposition(
        classes, between, within, correct / total, spectrum, degenerate,
        {y: p for y, p in zip(classes, projected)},
    )


# ---- 扫描与简化误差 ----

@dataclass
class BatchSweepPoint:
    batch_size: int
    empirical_var: float
    closed_var: float


def batch_size_sweep(spec: MixtureSpec, batch_sizes: Sequence[int], rng: Rng, reps: int,
                     fixed_class: int = 0) -> List[BatchSweepPoint]:
    """单一分布下 Var(δ) 随 batch 大小的变化（逐维平均）"""
    points = []
    for index, b in enumerate(batch_sizes):
        samples = simulate_bn_sample(None, spec, b, Free(), rng.substream(index), reps, fixed_class)
        _, closed_var = closed_form_for(spec, b, Free(), fixed_class)
        points.append(BatchSweepPoint(int(b), float(stack(samples).var(axis=0, ddof=1).mean()),
                                      float(closed_var.mean())))
    return points


@dataclass
class DenominatorEffect:
    """保留 BN 分母与略去分母两种模拟在同一组同伴上的差异"""

    mean_shift: float
    var_ratio: float


def denominator_effect(x_fixed: Optional[np.ndarray], spec: MixtureSpec, batch_size: int,
                       constraint: ClassConstraint, rng: Rng, reps: int,
                       fixed_class: int = 0, eps: float = 1e-5) -> DenominatorEffect:
    simple = stack(simulate_bn_sample(x_fixed, spec, batch_size, constraint, rng, reps, fixed_class))
    full = stack(simulate_bn_sample(x_fixed, spec, batch_size, constraint, rng, reps, fixed_class,
                                    full_bn=True, eps=eps))
    return DenominatorEffect(
        float(np.linalg.norm(full.mean(axis=0) - simple.mean(axis=0))),
        float(full.var(axis=0, ddof=1).mean() / simple.var(axis=0, ddof=1).mean()),
    )
