"""单样本 Hotelling T² 检验、F 分布 CDF、PCA 与检验校准工具"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, special, stats as sps

from utils.logger import logger

from .exceptions import InvalidArgumentError, NumericalSingularityError

logger = logger.bind(name="Stats")

SIGNIFICANT = 0.05
HIGHLY_SIGNIFICANT = 0.01


@dataclass(frozen=True)
class HotellingResult:
    """单样本 Hotelling T² 检验结果

    Attributes:
        t2: T² = n(x̄−μ₀)ᵀ S⁻¹ (x̄−μ₀)
        f_stat: t2·(n−d)/(d·(n−1))
        df1 / df2: F 分布自由度 d 与 n−d
        p_value: P(F ≥ f_stat)
        pseudo: 协方差奇异时是否使用了特征值截断的伪逆
    """

    t2: float
    f_stat: float
    df1: int
    df2: int
    p_value: float
    n: int
    d: int
    pseudo: bool = False

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANT

    @property
    def highly_significant(self) -> bool:
        return self.p_value < HIGHLY_SIGNIFICANT

    @property
    def decision(self) -> str:
        if self.highly_significant:
            return "highly significant"
        if self.significant:
            return "significant"
        return "not significant"


def significance_mark(p_value: float) -> str:
    if p_value < HIGHLY_SIGNIFICANT:
        return "**"
    if p_value < SIGNIFICANT:
        return "*"
    return ""


def _check_df(df1: float, df2: float) -> None:
    if not (df1 > 0 and df2 > 0):
        raise InvalidArgumentError(f"degrees of freedom must be positive, got ({df1}, {df2})")


def f_cdf(x: float, df1: float, df2: float) -> float:
    """F(df1, df2) 分布函数：I_{df1·x/(df1·x+df2)}(df1/2, df2/2)"""
    if not np.isfinite(x):
        raise InvalidArgumentError(f"f_cdf: x must be finite, got {x}")
    if x < 0:
        raise InvalidArgumentError(f"f_cdf: x must be >= 0, got {x}")
    _check_df(df1, df2)
    if x == 0:
        return 0.0
    return float(special.betainc(df1 / 2.0, df2 / 2.0, df1 * x / (df1 * x + df2)))


def f_sf(x: float, df1: float, df2: float) -> float:
    """1 − f_cdf，直接用互补的不完全 beta 计算，右尾不损失精度"""
    if not np.isfinite(x):
        raise InvalidArgumentError(f"f_sf: x must be finite, got {x}")
    if x < 0:
        raise InvalidArgumentError(f"f_sf: x must be >= 0, got {x}")
    _check_df(df1, df2)
    if x == 0:
        return 1.0
    return float(special.betainc(df2 / 2.0, df1 / 2.0, df2 / (df1 * x + df2)))


def _as_matrix(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2:
        raise InvalidArgumentError(f"expected an n×d sample matrix, got shape {list(samples.shape)}")
    return samples


def _sample_covariance(samples: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.cov(samples, rowvar=False, ddof=1))


def _pseudo_solve(cov: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """特征值下限截断到 1e-12·trace/d 后求解"""
    d = cov.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    floor = 1e-12 * float(np.trace(cov)) / d
    if floor <= 0:
        raise NumericalSingularityError("sample covariance is identically zero")
    eigvals = np.maximum(eigvals, floor)
    return eigvecs @ ((eigvecs.T @ rhs) / eigvals)


def hotelling_one_sample(samples, mu0: Optional[Sequence[float]] = None, allow_pseudo: bool = False) -> HotellingResult:
    """单样本 Hotelling T² 检验 H0: E[x] = μ₀

    Args:
        samples: n×d 样本矩阵（d=1 时可传一维数组）
        mu0: 原假设均值，默认零向量
        allow_pseudo: 协方差无法 Cholesky 分解时改用截断伪逆而不是报错
    """
    samples = _as_matrix(samples)
    n, d = samples.shape
    if n <= d:
        raise InvalidArgumentError(f"Hotelling test needs n > d, got n={n}, d={d}")
    mu0 = np.zeros(d) if mu0 is None else np.asarray(mu0, dtype=np.float64).reshape(-1)
    if mu0.shape != (d,):
        raise InvalidArgumentError(f"mu0 has length {mu0.shape[0]}, samples have d={d}")

    diff = samples.mean(axis=0) - mu0
    cov = _sample_covariance(samples)
    pseudo = False
    try:
        solved = linalg.cho_solve(linalg.cho_factor(cov), diff)
    except linalg.LinAlgError:
        if not allow_pseudo:
            raise NumericalSingularityError(
                f"sample covariance ({d}x{d}, n={n}) is singular; pass allow_pseudo=True to use a pseudo-inverse"
            ) from None
        logger.warning(f"Singular sample covariance (d={d}, n={n}), falling back to floored pseudo-inverse")
        solved = _pseudo_solve(cov, diff)
        pseudo = True

    t2 = max(float(n * diff @ solved), 0.0)
    df1, df2 = d, n - d
    f_stat = t2 * df2 / (d * (n - 1))
    return HotellingResult(t2, f_stat, df1, df2, f_sf(f_stat, df1, df2), n, d, pseudo)


@dataclass(frozen=True)
class PcaResult:
    """PCA 结果：components 为 d×k 正交列，explained_variance 降序"""

    components: np.ndarray
    explained_variance: np.ndarray
    mean: np.ndarray

    def project(self, samples) -> np.ndarray:
        return (_as_matrix(samples) - self.mean) @ self.components

    def reconstruct(self, projections) -> np.ndarray:
        return np.asarray(projections, dtype=np.float64) @ self.components.T + self.mean


def pca(samples, k: int) -> PcaResult:
    """样本协方差的前 k 个特征对（对称特征分解）

    每个主成分的符号固定为绝对值最大的分量取正，结果与求解器内部符号无关。
    """
    samples = _as_matrix(samples)
    n, d = samples.shape
    if not 1 <= k <= d:
        raise InvalidArgumentError(f"pca: k must be in [1, {d}], got {k}")
    if n < 2:
        raise InvalidArgumentError(f"pca: need at least 2 samples, got {n}")
    mean = samples.mean(axis=0)
    eigvals, eigvecs = np.linalg.eigh(_sample_covariance(samples))
    order = np.argsort(eigvals)[::-1][:k]
    components = eigvecs[:, order]
    pivots = np.argmax(np.abs(components), axis=0)
    signs = np.sign(components[pivots, np.arange(k)])
    signs[signs == 0] = 1.0
    explained = np.clip(eigvals[order], 0.0, None)
    if explained[-1] <= 1e-12 * max(explained[0], 1e-300):
        logger.debug(f"PCA spectrum is degenerate beyond component {int(np.sum(explained > 0))}")
    return PcaResult(np.ascontiguousarray(components * signs), explained, mean)


# ---- 校准 ----

def rejection_rate(p_values: Sequence[float], level: float = SIGNIFICANT) -> float:
    """p 值小于 level 的比例（原假设为真时即第一类错误率）"""
    p_values = np.asarray(p_values, dtype=np.float64)
    if p_values.size == 0:
        raise InvalidArgumentError("rejection_rate: no p-values given")
    return float(np.mean(p_values < level))


def ks_uniform_distance(p_values: Sequence[float]) -> float:
    """p 值经验分布与 U(0,1) 的 Kolmogorov–Smirnov 距离"""
    p_values = np.asarray(p_values, dtype=np.float64)
    if p_values.size == 0:
        raise InvalidArgumentError("ks_uniform_distance: no p-values given")
    return float(sps.kstest(p_values, "uniform").statistic)
