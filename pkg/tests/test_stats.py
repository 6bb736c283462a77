import numpy as np
import pytest
from scipy import stats as sps

from nomore.core import Rng
from nomore.exceptions import InvalidArgumentError, NumericalSingularityError
from nomore.stats import (
    f_cdf,
    f_sf,
    hotelling_one_sample,
    ks_uniform_distance,
    pca,
    rejection_rate,
    significance_mark,
)


@pytest.mark.unit
class TestFDistribution:
    """F 分布函数测试类"""

    @pytest.mark.parametrize("x,df1,df2", [(0.5, 1, 10), (2.0, 3, 7), (4.5, 8, 120), (0.01, 2, 2)])
    def test_matches_reference(self, x, df1, df2):
        """测试与参考实现一致"""
        assert f_cdf(x, df1, df2) == pytest.approx(sps.f.cdf(x, df1, df2), abs=1e-12)
        assert f_sf(x, df1, df2) == pytest.approx(sps.f.sf(x, df1, df2), rel=1e-9)

    def test_chi_square_limit(self):
        """测试 F(1, ∞) 退化为 χ²₁：χ²₁ 的 0.95 分位点"""
        assert f_cdf(3.8415, 1, 1e6) == pytest.approx(0.95, abs=1e-4)

    def test_boundaries(self):
        """测试 x=0 与互补性"""
        assert f_cdf(0.0, 2, 5) == 0.0
        assert f_cdf(1.0, 7, 7) == pytest.approx(0.5)
        assert f_sf(0.0, 2, 5) == 1.0
        assert f_cdf(1.3, 4, 9) + f_sf(1.3, 4, 9) == pytest.approx(1.0)

    @pytest.mark.parametrize("x,df1,df2", [(-1.0, 2, 3), (float("inf"), 2, 3), (1.0, 0, 3), (1.0, 2, -1)])
    def test_invalid(self, x, df1, df2):
        """测试非法参数"""
        with pytest.raises(InvalidArgumentError):
            f_cdf(x, df1, df2)


@pytest.mark.unit
class TestHotelling:
    """单样本 Hotelling T² 测试类"""

    def test_univariate_matches_t_test(self):
        """测试 d=1 时 T² = t² 且 p 值与双侧 t 检验一致"""
        samples = Rng(3).normal((100,)) + 0.5
        result = hotelling_one_sample(samples)
        oracle = sps.ttest_1samp(samples, 0.0)
        assert result.t2 == pytest.approx(oracle.statistic ** 2, abs=1e-10)
        assert result.p_value == pytest.approx(oracle.pvalue, abs=1e-10)
        assert (result.df1, result.df2) == (1, 99)

    def test_symmetric_pair(self):
        """测试对称的两点样本 T²=0、p=1"""
        result = hotelling_one_sample([-1.0, 1.0])
        assert result.t2 == 0.0
        assert result.p_value == 1.0

    def test_affine_invariance(self, rng):
        """测试 T² 在可逆仿射变换下不变"""
        samples = rng.normal((50, 3)) + 0.2
        transform = rng.normal((3, 3)) + 3.0 * np.eye(3)
        shift = np.array([1.0, -2.0, 0.5])
        original = hotelling_one_sample(samples)
        mapped = hotelling_one_sample(samples @ transform.T + shift, mu0=shift)
        assert mapped.t2 == pytest.approx(original.t2, rel=1e-8)

    def test_p_value_monotone_in_shift(self, rng):
        """测试均值离 μ₀ 越远 p 值越小"""
        base = rng.normal((40, 2))
        base -= base.mean(axis=0)
        p_values = [hotelling_one_sample(base + s).p_value for s in (0.0, 0.1, 0.2, 0.4, 0.8)]
        assert p_values == sorted(p_values, reverse=True)

    def test_nonzero_mu0(self):
        """测试非零原假设均值"""
        samples = Rng(4).normal((40, 3)) + 5.0
        assert hotelling_one_sample(samples, mu0=[5.0, 5.0, 5.0]).p_value > 1e-3
        assert hotelling_one_sample(samples).highly_significant

    def test_decision_labels(self):
        """测试显著性判定"""
        shifted = hotelling_one_sample(Rng(5).normal((60, 2)) + 1.0)
        assert shifted.decision == "highly significant"
        assert significance_mark(shifted.p_value) == "**"
        assert significance_mark(0.03) == "*"
        assert significance_mark(0.5) == ""

    def test_needs_more_samples_than_dimensions(self):
        """测试 n ≤ d"""
        with pytest.raises(InvalidArgumentError):
            hotelling_one_sample(np.ones((3, 3)))

    def test_mu0_length(self):
        """测试 μ₀ 维度不符"""
        with pytest.raises(InvalidArgumentError):
            hotelling_one_sample(Rng(0).normal((10, 2)), mu0=[0.0])

    def test_singular_covariance(self):
        """测试协方差奇异：默认报错，允许时使用伪逆"""
        samples = Rng(6).normal((30, 3))
        samples[:, 1] = 0.0
        with pytest.raises(NumericalSingularityError):
            hotelling_one_sample(samples)
        result = hotelling_one_sample(samples, allow_pseudo=True)
        assert result.pseudo
        assert 0.0 <= result.p_value <= 1.0

    def test_zero_covariance_has_no_pseudo_inverse(self):
        """测试协方差全为 0"""
        with pytest.raises(NumericalSingularityError):
            hotelling_one_sample(np.ones((10, 2)), allow_pseudo=True)

    @pytest.mark.slow
    def test_calibrated_under_null(self):
        """测试原假设成立时第一类错误率接近 5%，p 值近似均匀"""
        rng = Rng(8)
        p_values = [hotelling_one_sample(rng.substream(i).normal((200, 5))).p_value for i in range(2000)]
        assert 0.03 <= rejection_rate(p_values) <= 0.07
        assert ks_uniform_distance(p_values) < 0.05


@pytest.mark.unit
class TestPca:
    """PCA 测试类"""

    def test_orthonormal_components(self, rng):
        """测试主成分正交归一，方差降序"""
        samples = rng.normal((200, 5)) * np.array([5.0, 3.0, 2.0, 1.0, 0.5])
        result = pca(samples, 3)
        assert np.allclose(result.components.T @ result.components, np.eye(3), atol=1e-10)
        assert np.all(np.diff(result.explained_variance) <= 0)

    def test_leading_direction(self, rng):
        """测试第一主成分对齐方差最大的坐标轴"""
        samples = rng.normal((500, 3)) * np.array([1.0, 10.0, 1.0])
        assert abs(pca(samples, 1).components[1, 0]) > 0.99

    def test_sign_convention(self, rng):
        """测试每个主成分绝对值最大的分量为正"""
        components = pca(rng.normal((100, 4)), 4).components
        pivots = np.argmax(np.abs(components), axis=0)
        assert np.all(components[pivots, np.arange(4)] > 0)

    def test_collinear_points(self):
        """测试沿 (1,1)/√2 共线的点"""
        t = np.linspace(-1.0, 1.0, 11)
        result = pca(np.stack([t, t], axis=1), 2)
        assert np.allclose(result.components[:, 0], np.array([1.0, 1.0]) / np.sqrt(2.0))
        assert result.explained_variance[1] == pytest.approx(0.0, abs=1e-12)

    def test_isotropic_spectrum(self):
        """测试各向同性数据的两个方差相近"""
        explained = pca(Rng(2).normal((10000, 2)), 2).explained_variance
        assert explained[1] / explained[0] > 0.9

    def test_full_rank_reconstruction(self, rng):
        """测试 k=d 时投影后可以完整重建"""
        samples = rng.normal((20, 3))
        result = pca(samples, 3)
        assert np.allclose(result.reconstruct(result.project(samples)), samples)

    @pytest.mark.parametrize("k", [0, 4])
    def test_invalid_k(self, rng, k):
        """测试 k 越界"""
        with pytest.raises(InvalidArgumentError):
            pca(rng.normal((10, 3)), k)

    def test_single_sample(self):
        """测试样本不足"""
        with pytest.raises(InvalidArgumentError):
            pca(np.ones((1, 3)), 1)


@pytest.mark.unit
class TestCalibrationHelpers:
    """校准工具测试类"""

    def test_rejection_rate(self):
        """测试拒绝比例"""
        assert rejection_rate([0.01, 0.2, 0.04, 0.9]) == 0.5
        with pytest.raises(InvalidArgumentError):
            rejection_rate([])

    def test_ks_distance(self):
        """测试均匀网格的 KS 距离很小"""
        assert ks_uniform_distance((np.arange(100) + 0.5) / 100) <= 0.01
