import math
import os

import pytest

from nomore.exceptions import InvalidArgumentError
from nomore.report import (
    LinePlot,
    Report,
    Table,
    emit_report,
    ensure_writable,
    format_value,
    render_csv,
    render_svg,
    render_summary,
)


def sample_report():
    report = Report("train-compare", 7, "abc123def456")
    table = Table("summary", ["wrapper", "accuracy", "note"])
    table.add("bn", 0.8125, "plain")
    table.add("nomore", 0.75, "a, b")
    report.tables.append(table)
    report.section("accuracy", ["bn 0.8125", "nomore 0.75"])
    report.plots.append(LinePlot("curve", "Accuracy", "gamma", "acc",
                                 {"nomore": [(0.0, 0.5), (1e-3, 0.7), (1.0, 0.6)]}, log_x=True))
    report.attachments.append(("train", "nmld", b"NMLD\x00"))
    return report


@pytest.mark.unit
class TestCsv:
    """CSV 渲染测试类"""

    def test_header_without_rows(self):
        """测试空表也写出表头"""
        assert render_csv(Table("empty", ["a", "b"])) == "a,b\r\n"

    def test_quoting_and_line_endings(self):
        """测试含逗号的单元格加引号，行尾为 CRLF"""
        text = render_csv(sample_report().table("summary"))
        assert text.split("\r\n")[2] == 'nomore,0.75,"a, b"'
        assert text.endswith("\r\n")

    @pytest.mark.parametrize("value,expected", [
        (0.1, "0.1"),
        (1e-5, "1e-05"),
        (float("nan"), "nan"),
        (True, "true"),
        (None, ""),
        (3, "3"),
    ])
    def test_format_value(self, value, expected):
        """测试单元格格式"""
        assert format_value(value) == expected

    def test_row_width_checked(self):
        """测试列数不符"""
        with pytest.raises(InvalidArgumentError):
            Table("t", ["a", "b"]).add(1)


@pytest.mark.unit
class TestReport:
    """报告输出测试类"""

    def test_filename(self):
        """测试文件名格式"""
        assert sample_report().filename("summary", "csv") == "train_compare_summary_seed7_abc123def456.csv"

    def test_missing_table(self):
        """测试查找不存在的表"""
        with pytest.raises(KeyError):
            sample_report().table("timing")

    def test_summary_lists_sections(self):
        """测试摘要包含各节内容"""
        text = render_summary(sample_report())
        assert "accuracy" in text
        assert "nomore 0.75" in text

    def test_svg(self):
        """测试 SVG 包含每条曲线"""
        svg = render_svg(sample_report().plots[0])
        assert svg.lstrip().startswith("<svg") or svg.lstrip().startswith("<?xml")
        assert "<polyline" in svg
        assert "nomore" in svg

    def test_svg_skips_non_finite(self):
        """测试非有限点不参与绘制"""
        plot = LinePlot("p", "t", "x", "y", {"a": [(1.0, 1.0), (2.0, math.nan), (3.0, 2.0)]})
        assert "nan" not in render_svg(plot)

    def test_emit_writes_all_files(self, output_dir):
        """测试写出表格、附件、摘要与图"""
        written = emit_report(sample_report(), output_dir)
        names = sorted(p.name for p in written)
        assert names == sorted([
            "train_compare_summary_seed7_abc123def456.csv",
            "train_compare_train_seed7_abc123def456.nmld",
            "train_compare_summary_seed7_abc123def456.txt",
            "train_compare_curve_seed7_abc123def456.svg",
        ])
        assert (output_dir / "train_compare_train_seed7_abc123def456.nmld").read_bytes() == b"NMLD\x00"
        assert b"\r\n" in (output_dir / names[0]).read_bytes()

    def test_emit_without_plots(self, output_dir):
        """测试关闭绘图"""
        written = emit_report(sample_report(), output_dir, plots=False)
        assert not any(p.suffix == ".svg" for p in written)

    def test_emit_is_byte_identical(self, tmp_path):
        """测试两次写出的文件逐字节相同"""
        first = emit_report(sample_report(), tmp_path / "a")
        second = emit_report(sample_report(), tmp_path / "b")
        for a, b in zip(sorted(first), sorted(second)):
            assert a.read_bytes() == b.read_bytes()


@pytest.mark.unit
class TestEnsureWritable:
    """输出目录检查测试类"""

    def test_creates_directory(self, tmp_path):
        """测试自动创建嵌套目录"""
        path = ensure_writable(tmp_path / "x" / "y")
        assert path.is_dir()

    def test_path_is_a_file(self, tmp_path):
        """测试输出路径是普通文件"""
        blocker = tmp_path / "blocker"
        blocker.write_text("x")
        with pytest.raises(OSError):
            ensure_writable(blocker / "results")

    @pytest.mark.skipif(os.name != "posix" or os.geteuid() == 0, reason="需要非 root 的 POSIX 环境")
    def test_read_only_directory(self, tmp_path):
        """测试只读目录"""
        locked = tmp_path / "locked"
        locked.mkdir()
        locked.chmod(0o500)
        try:
            with pytest.raises(PermissionError):
                ensure_writable(locked)
        finally:
            locked.chmod(0o700)
