import numpy as np
import pytest

from nomore.data import load_dataset
from nomore.exceptions import InvalidArgumentError
from nomore.experiments import (
    DRIVERS,
    balanced_counts,
    compared_wrappers,
    run_assertions,
    run_jobs,
    run_noise_sim,
    run_sensitivity,
    run_train_compare,
    run_variance,
)
from nomore.report import emit_report, render_csv

TINY_TRAINING = {
    "n_train": 128, "n_test": 64, "dim": 8, "steps": 12, "batch_size": 32,
    "mlp_width": 16, "mlp_depth": 2, "seeds": [1, 2],
}


def table_names(report):
    return [t.name for t in report.tables]


@pytest.mark.unit
class TestHelpers:
    """驱动辅助函数测试类"""

    def test_balanced_counts(self):
        """测试余数分给序号靠前的类"""
        assert balanced_counts(3, 8) == (3, 3, 2)
        assert balanced_counts(4, 128) == (32, 32, 32, 32)

    def test_run_jobs_keeps_order(self):
        """测试并行执行时结果保持提交顺序"""
        jobs = [lambda i=i: i * i for i in range(8)]
        assert run_jobs(jobs, workers=4) == [i * i for i in range(8)]
        assert run_jobs(jobs, workers=4, bench=True) == [i * i for i in range(8)]

    def test_compared_wrappers(self, small_config):
        """测试额外指定的包装加入对比"""
        assert [w.value for w in compared_wrappers(small_config("train-compare"))] == ["bn", "skipinit", "nomore"]
        assert compared_wrappers(small_config("train-compare", wrapper="ln"))[-1].value == "ln"

    def test_every_command_has_a_driver(self):
        """测试每个命令都有驱动"""
        assert set(DRIVERS) == {"assertions", "variance", "train-compare", "sensitivity", "noise-sim"}


@pytest.mark.integration
class TestNoiseSim:
    """noise-sim 驱动测试类"""

    def test_single_distribution(self, small_config):
        """测试单一分布下的表格与结论"""
        cfg = small_config("noise-sim", reps=400, noise_batch=32, batch_sweep=[2, 8, 32])
        result = run_noise_sim(cfg)
        report = result.report
        assert table_names(report) == ["moments", "delta", "batch_sweep", "denominator"]
        assert len(report.table("moments").rows) == 8
        assert len(report.table("delta").rows) == 400
        assert result.closed_var == pytest.approx(31 / 1024)
        assert "composition" not in [title for title, _ in report.sections]

    def test_mixture_constraints(self, small_config):
        """测试多类混合时按 free / all_from_y / balanced 各模拟一次"""
        cfg = small_config("noise-sim", n_classes=3, reps=200, noise_batch=16, batch_sweep=[2, 16])
        report = run_noise_sim(cfg).report
        constraints = {row[0] for row in report.table("moments").rows}
        assert constraints == {"free", "all_from_0", "all_from_1", "all_from_2", "balanced"}
        assert "composition" in [title for title, _ in report.sections]

    def test_reproducible_bytes(self, small_config, tmp_path):
        """测试同一配置两次运行的 CSV 逐字节相同"""
        cfg = small_config("noise-sim", reps=100, noise_batch=8, batch_sweep=[2, 8])
        first = emit_report(run_noise_sim(cfg).report, tmp_path / "a")
        second = emit_report(run_noise_sim(cfg).report, tmp_path / "b")
        assert [p.name for p in first] == [p.name for p in second]
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    @pytest.mark.slow
    def test_noise_law_acceptance(self, small_config):
        """测试默认规模（B=128，1e4 次重复）下噪声方差与闭式解相差 5% 以内"""
        result = run_noise_sim(small_config("noise-sim"))
        assert result.passed, result.relative_error


@pytest.mark.integration
class TestAssertions:
    """assertions 驱动测试类"""

    def test_small_run(self, small_config):
        """测试小规模运行的结果结构与定性结论"""
        cfg = small_config("assertions", n_classes=3, noise_batch=16, intra_reps=30, assertion_runs=2)
        result = run_assertions(cfg)
        assert len(result.intra) == len(result.intra_var_ratio) == 2
        assert all(row[1] == 15 for row in result.report.table("assertion1").rows)
        assert all((r.df1, r.df2) == (8, 7) for r in result.intra)
        assert len(result.self_tests) == 6
        assert len(result.cross_tests) == 12
        assert result.cross_rejection_rate == 1.0
        assert len(result.decompositions) == 2
        labels = [row[0] for row in result.report.table("pvalue_table").rows]
        assert labels == ["class 0 (self)", "class 1", "class 2"]
        assert table_names(result.report) == ["assertion1", "assertion2", "pvalue_table", "assertion3"]

    def test_needs_more_pairs_than_dimensions(self, small_config):
        """测试独立差值的个数不超过维度"""
        cfg = small_config("assertions", n_classes=2, noise_batch=16, intra_reps=16, assertion_runs=1)
        with pytest.raises(InvalidArgumentError):
            run_assertions(cfg)

    def test_single_class(self, small_config):
        """测试单类混合：没有跨类检验，断言 3 跳过"""
        cfg = small_config("assertions", n_classes=1, noise_batch=16, intra_reps=30, assertion_runs=1)
        result = run_assertions(cfg)
        assert result.cross_tests == []
        assert np.isnan(result.cross_rejection_rate)
        assert result.report.table("assertion3").rows == []
        text = "\n".join(line for _, lines in result.report.sections for line in lines)
        assert "no cross-class pairs" in text
        assert "skipped" in text

    @pytest.mark.slow
    def test_acceptance(self, small_config):
        """测试 50 次运行：类内噪声均值为 0，同类检验通过，跨类检验拒绝，batch 类别可识别"""
        result = run_assertions(small_config("assertions", n_classes=4, assertion_runs=50))
        assert result.intra_pass_rate >= 0.9
        assert abs(np.mean(result.intra_var_ratio) - 1.0) < 0.1
        assert result.self_pass_rate >= 0.9
        assert result.cross_rejection_rate >= 0.95

    @pytest.mark.slow
    def test_decomposition_acceptance(self, small_config):
        """测试 10σ 间距下识别准确率 > 95%，类间散度至少为类内散度的 10 倍"""
        result = run_assertions(small_config("assertions", n_classes=4, separation=10.0, assertion_runs=3))
        assert all(d.identification_accuracy > 0.95 for d in result.decompositions)
        assert all(d.scatter_ratio >= 10.0 for d in result.decompositions)


@pytest.mark.integration
class TestVariance:
    """variance 驱动测试类"""

    def test_all_wrappers(self, small_config):
        """测试默认探测全部四种包装"""
        cfg = small_config("variance", depth=3, width=16, probe_batch=32, trials=2)
        result = run_variance(cfg)
        assert list(result.profiles) == ["none", "bn", "skipinit", "nomore"]
        assert len(result.report.table("profile").rows) == 16
        assert len(result.report.plots) == 1

    def test_selected_wrappers(self, small_config):
        """测试只探测指定的包装"""
        cfg = small_config("variance", depth=3, width=16, probe_batch=32, trials=2)
        result = run_variance(cfg, wrappers=["nomore"])
        assert list(result.profiles) == ["nomore"]
        assert result.profiles["nomore"].fit.label == "flat"


@pytest.mark.integration
class TestTrainCompare:
    """train-compare 驱动测试类"""

    def test_small_run(self, small_config):
        """测试三种包装在相同种子上成对训练"""
        result = run_train_compare(small_config("train-compare", **TINY_TRAINING))
        assert list(result.metrics) == ["bn", "skipinit", "nomore"]
        assert all(len(m.runs) == 2 for m in result.metrics.values())
        assert result.metrics["bn"].speedup_ratio == pytest.approx(1.0)
        assert result.metrics["skipinit"].gamma_noise == 0.0
        assert result.metrics["nomore"].gamma_noise == 0.1
        assert table_names(result.report) == ["runs", "epochs", "summary", "timing"]
        assert [name for name, _, _ in result.report.attachments] == ["train_data", "test_data"]

    def test_attached_dataset_loads(self, small_config, output_dir):
        """测试附带的数据集文件可以读回"""
        result = run_train_compare(small_config("train-compare", **TINY_TRAINING))
        written = emit_report(result.report, output_dir)
        train_file = next(p for p in written if "_train_data_" in p.name)
        assert len(load_dataset(train_file)) == 128

    def test_results_do_not_depend_on_workers(self, small_config):
        """测试并行训练与串行训练结果相同（timing 表除外）"""
        serial = run_train_compare(small_config("train-compare", **TINY_TRAINING))
        parallel = run_train_compare(small_config("train-compare", workers=3, **TINY_TRAINING))
        for name in ("runs", "epochs", "summary"):
            assert render_csv(serial.report.table(name)) == render_csv(parallel.report.table(name))

    def test_extra_wrapper(self, small_config):
        """测试 LN 包装加入对比"""
        overrides = dict(TINY_TRAINING, seeds=[1], wrapper="ln")
        result = run_train_compare(small_config("train-compare", **overrides))
        assert list(result.metrics) == ["bn", "skipinit", "nomore", "ln"]

    def test_resnet_needs_images(self, small_config):
        """测试合成向量数据不能训练卷积网络"""
        with pytest.raises(InvalidArgumentError):
            run_train_compare(small_config("train-compare", model="resnet", **TINY_TRAINING))

    @pytest.mark.slow
    def test_cifar_resnet(self, small_config, sample_cifar_file):
        """测试 CIFAR-10 子集上的小型卷积网络"""
        cfg = small_config("train-compare", dataset=f"cifar10:{sample_cifar_file}", cifar_subset=4,
                           stages=[1], base_channels=4, steps=2, batch_size=8, seeds=[1])
        result = run_train_compare(cfg)
        assert all(m.runs[0].steps_completed == 2 for m in result.metrics.values())
        assert result.report.attachments == []

    @pytest.mark.slow
    @pytest.mark.benchmark
    def test_parity_acceptance(self, small_config):
        """测试 2000 步、3 个种子：NoMore 准确率不低于 BN 1 个百分点以上，残差块更快"""
        result = run_train_compare(small_config("train-compare", bench=True))
        nomore, bn = result.metrics["nomore"], result.metrics["bn"]
        assert nomore.accuracy_mean >= bn.accuracy_mean - 0.01
        assert nomore.speedup_ratio > 1.0


@pytest.mark.integration
class TestSensitivity:
    """sensitivity 驱动测试类"""

    def test_small_curve(self, small_config):
        """测试每个 γ 一个曲线点"""
        overrides = dict(TINY_TRAINING, seeds=[1])
        result = run_sensitivity(small_config("sensitivity", **overrides), gammas=[0.0, 0.1])
        assert [p.gamma_noise for p in result.curve] == [0.0, 0.1]
        assert result.peak in result.curve
        assert len(result.report.table("curve").rows) == 2
        assert result.report.plots[0].log_x

    def test_needs_two_gammas(self, small_config):
        """测试 γ 值不足"""
        with pytest.raises(InvalidArgumentError):
            run_sensitivity(small_config("sensitivity", **TINY_TRAINING), gammas=[0.1])

    @pytest.mark.slow
    def test_shape_acceptance(self, small_config):
        """测试默认 γ 网格上曲线在内部取得峰值，γ=1 时至少下降 5 个百分点"""
        result = run_sensitivity(small_config("sensitivity"))
        peak = result.peak
        assert peak is not result.curve[0] and peak is not result.curve[-1]
        assert peak.accuracy_mean - result.curve[-1].accuracy_mean >= 0.05
