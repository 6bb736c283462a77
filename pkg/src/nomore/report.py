"""实验报告输出：CSV 表格、纯文本摘要与 SVG 折线图

文件名统一为 {command}_{name}_seed{seed}_{config_hash}.{ext}。除名为 timing 的表
（墙钟时间）外，同一 (配置, 种子) 的输出逐字节相同。
"""
import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

from jinja2 import Environment, FileSystemLoader, select_autoescape

from utils.logger import logger

from .exceptions import InvalidArgumentError

logger = logger.bind(name="Report")

TEMPLATE_DIR = Path(__file__).parent / "templates"

PLOT_WIDTH = 640
PLOT_HEIGHT = 400
PLOT_MARGIN = {"left": 70, "right": 150, "top": 40, "bottom": 50}
SERIES_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


@dataclass
class Table:
    """一张 CSV 表；表头总是写出，即使没有数据行"""

    name: str
    columns: List[str]
    rows: List[List[Any]] = field(default_factory=list)

    def add(self, *values: Any) -> None:
        if len(values) != len(self.columns):
            raise InvalidArgumentError(f"table {self.name}: {len(values)} values for {len(self.columns)} columns")
        self.rows.append(list(values))


@dataclass
class LinePlot:
    name: str
    title: str
    x_label: str
    y_label: str
    series: Dict[str, List[Tuple[float, float]]] = field(default_factory=dict)
    log_x: bool = False


@dataclass
class Report:
    command: str
    seed: int
    config_hash: str
    tables: List[Table] = field(default_factory=list)
    sections: List[Tuple[str, List[str]]] = field(default_factory=list)
    plots: List[LinePlot] = field(default_factory=list)
    attachments: List[Tuple[str, str, bytes]] = field(default_factory=list)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def section(self, title: str, lines: Sequence[str]) -> None:
        self.sections.append((title, list(lines)))

    def filename(self, name: str, ext: str) -> str:
        command = self.command.replace("-", "_")
        return f"{command}_{name}_seed{self.seed}_{self.config_hash}.{ext}"


def _environment() -> Environment:
    return Environment(
        loader=FileSystemLoader(str(TEMPLATE_DIR)),
        autoescape=select_autoescape(["svg"]),
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
    )


def format_value(value: Any) -> str:
    """CSV 单元格格式：浮点数用最短往返表示，保证跨运行逐字节一致"""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    if value is None:
        return ""
    return str(value)


def ensure_writable(output_dir: Union[str, Path]) -> Path:
    """创建输出目录并确认可写；在任何计算开始之前调用"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(output_dir, os.W_OK | os.X_OK):
        raise PermissionError(f"output directory is not writable: {output_dir}")
    return output_dir


def render_csv(table: Table) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_value(v) for v in row])
    return buffer.getvalue()


def render_summary(report: Report) -> str:
    return _environment().get_template("summary.txt.j2").render(report=report)


def _x_positions(values: Sequence[float], log_x: bool) -> List[float]:
    if not log_x:
        return [float(v) for v in values]
    positive = [v for v in values if v > 0]
    zero_at = (math.log10(min(positive)) - 1.0) if positive else 0.0
    return [math.log10(v) if v > 0 else zero_at for v in values]


def _span(values: Sequence[float]) -> Tuple[float, float]:
    low, high = min(values), max(values)
    if high == low:
        pad = abs(low) * 0.1 or 1.0
        return low - pad, high + pad
    return low, high


def render_svg(plot: LinePlot) -> str:
    """把折线图的坐标换算成画布像素后交给模板绘制"""
    points = [p for series in plot.series.values() for p in series if math.isfinite(p[1])]
    inner_w = PLOT_WIDTH - PLOT_MARGIN["left"] - PLOT_MARGIN["right"]
    inner_h = PLOT_HEIGHT - PLOT_MARGIN["top"] - PLOT_MARGIN["bottom"]
    xs_all = sorted({p[0] for p in points}) or [0.0]
    x_pos_all = _x_positions(xs_all, plot.log_x)
    x_low, x_high = _span(x_pos_all)
    y_low, y_high = _span([p[1] for p in points] or [0.0])

    def to_px(x_pos: float, y: float) -> Tuple[float, float]:
        px = PLOT_MARGIN["left"] + (x_pos - x_low) / (x_high - x_low) * inner_w
        py = PLOT_MARGIN["top"] + (1.0 - (y - y_low) / (y_high - y_low)) * inner_h
        return round(px, 2), round(py, 2)

    x_lookup = dict(zip(xs_all, x_pos_all))
    series = []
    for index, (label, data) in enumerate(plot.series.items()):
        finite = [(x, y) for x, y in data if math.isfinite(y)]
        series.append({
            "label": label,
            "color": SERIES_COLORS[index % len(SERIES_COLORS)],
            "points": [to_px(x_lookup[x], y) for x, y in finite],
        })
    x_ticks = [{"px": to_px(x_lookup[x], y_low)[0], "label": f"{x:g}"} for x in xs_all]
    y_ticks = [
        {"py": to_px(x_low, y_low + i * (y_high - y_low) / 4)[1], "label": f"{y_low + i * (y_high - y_low) / 4:.3g}"}
        for i in range(5)
    ]
    return _environment().get_template("line_plot.svg.j2").render(
        plot=plot, series=series, x_ticks=x_ticks, y_ticks=y_ticks,
        width=PLOT_WIDTH, height=PLOT_HEIGHT, margin=PLOT_MARGIN, inner_w=inner_w, inner_h=inner_h,
    )


def emit_report(report: Report, output_dir: Union[str, Path], plots: bool = True) -> List[Path]:
    """写出全部表格、摘要与（可选的）SVG 图，返回写出的文件路径"""
    output_dir = ensure_writable(output_dir)
    written: List[Path] = []

    def write(name: str, content: str) -> None:
        path = output_dir / name
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(content)
        written.append(path)

    for table in report.tables:
        write(report.filename(table.name, "csv"), render_csv(table))
    for name, ext, payload in report.attachments:
        path = output_dir / report.filename(name, ext)
        path.write_bytes(payload)
        written.append(path)
    write(report.filename("summary", "txt"), render_summary(report))
    if plots:
        for plot in report.plots:
            write(report.filename(plot.name, "svg"), render_svg(plot))
    logger.info(f"Wrote {len(written)} report files for '{report.command}' to {output_dir}")
    return written
