import hashlib
from typing import Any, Callable, Dict, List, Optional, Tuple

import yaml

from .base_config import BaseConfig

COMMANDS = ("assertions", "variance", "train-compare", "sensitivity", "noise-sim")
# 只影响执行方式、不影响结果的字段，不参与配置哈希
EXECUTION_FIELDS = ("output_dir", "bench", "workers")


def _optional_float(value: Any) -> Optional[float]:
    return None if value is None else float(value)


def _int_list(value: Any) -> List[int]:
    return [int(v) for v in (value if isinstance(value, (list, tuple)) else [value])]


def _float_list(value: Any) -> List[float]:
    return [float(v) for v in (value if isinstance(value, (list, tuple)) else [value])]


def _bool(value: Any) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return bool(value)


# 字段名 -> (默认值, 类型转换)
FIELDS: Dict[str, Tuple[Any, Callable[[Any], Any]]] = {
    "command": ("train-compare", str),
    "seed": (1, int),
    "output_dir": ("results", str),
    # 数据
    "dataset": ("synth", str),
    "n_classes": (4, int),
    "dim": (16, int),
    "separation": (8.0, float),
    "std": (1.0, float),
    "n_train": (2048, int),
    "n_test": (1024, int),
    "cifar_subset": (100, int),
    # 模型
    "model": ("auto", str),
    "wrapper": ("nomore", str),
    "gamma_noise": (None, _optional_float),
    "stages": ([2, 2, 2], _int_list),
    "base_channels": (16, int),
    "mlp_width": (64, int),
    "mlp_depth": (4, int),
    # 优化
    "steps": (2000, int),
    "batch_size": (128, int),
    "learning_rate": (5e-2, float),
    "momentum": (0.9, float),
    "weight_decay": (1e-5, float),
    "label_smoothing": (0.1, float),
    "seeds": ([1, 2, 3], _int_list),
    "gammas": ([0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0], _float_list),
    # 方差探针
    "depth": (8, int),
    "width": (128, int),
    "probe_batch": (256, int),
    "trials": (32, int),
    # 噪声模拟与断言检验
    "reps": (10000, int),
    "noise_batch": (128, int),
    "batch_sweep": ([2, 4, 8, 16, 32, 64, 128, 256], _int_list),
    "intra_reps": (40, int),
    "assertion_runs": (10, int),
    "full_bn": (False, _bool),
    # 执行
    "bench": (False, _bool),
    "workers": (1, int),
}

# 各命令与全局默认值不同的字段
COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "assertions": {"dim": 8, "separation": 8.0},
    "noise-sim": {"dim": 8, "n_classes": 1},
    "variance": {},
    "train-compare": {},
    # 过拟合倾向的小样本任务：类间距小、维度高、训练样本少
    "sensitivity": {"n_train": 256, "n_test": 2048, "dim": 32, "separation": 2.0, "steps": 1000},
}


class ExperimentConfig(BaseConfig):
    """实验配置：YAML 文件 + 命令默认值 + 命令行覆盖（命令行优先）"""

    def __init__(self, config_file: Optional[str] = None, command: Optional[str] = None):
        super().__init__()
        self.update({"command": command} if command else {})
        if config_file:
            self.load(config_file)
            if command:
                self.update({"command": command})

    @classmethod
    def defaults_for(cls, command: str) -> "ExperimentConfig":
        return cls(command=command)

    def _validate_config(self) -> None:
        """验证实验配置"""
        unknown = sorted(set(self.config_data) - set(FIELDS))
        if unknown:
            raise ValueError(f"Unknown config field(s): {', '.join(unknown)}")
        command = self.config_data.get("command", FIELDS["command"][0])
        if command not in COMMANDS:
            raise ValueError(f"Unknown command '{command}', expected one of: {', '.join(COMMANDS)}")

    def _process_config(self) -> None:
        """按 全局默认 → 命令默认 → 文件/覆盖值 的顺序合并"""
        command = self.config_data.get("command") or FIELDS["command"][0]
        merged = {name: default for name, (default, _) in FIELDS.items()}
        merged.update(COMMAND_DEFAULTS.get(command, {}))
        merged.update(self.config_data)
        for name, (_, convert) in FIELDS.items():
            try:
                setattr(self, name, convert(merged[name]))
            except (TypeError, ValueError) as e:
                raise ValueError(f"Invalid value for {name}: {merged[name]!r}") from e
        self._check_values()

    def _check_values(self) -> None:
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if self.batch_size < 2 and self.command in ("train-compare",):
            raise ValueError("batch_size must be >= 2 when a batch-norm model is in the run")
        if self.command == "sensitivity" and len(self.gammas) < 2:
            raise ValueError("sensitivity needs at least 2 gamma values")
        if any(g < 0 for g in self.gammas):
            raise ValueError("gamma values must be >= 0")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.model not in ("auto", "mlp", "resnet"):
            raise ValueError(f"model must be auto, mlp or resnet, got {self.model}")
        self.dataset_spec()

    def dataset_spec(self) -> Tuple[str, Optional[str]]:
        """解析 dataset 字段：synth 或 cifar10:PATH"""
        if self.dataset == "synth":
            return "synth", None
        kind, _, path = self.dataset.partition(":")
        if kind == "cifar10" and path:
            return "cifar10", path
        raise ValueError(f"dataset must be 'synth' or 'cifar10:PATH', got '{self.dataset}'")

    @property
    def model_kind(self) -> str:
        if self.model != "auto":
            return self.model
        return "resnet" if self.dataset_spec()[0] == "cifar10" else "mlp"

    def override(self, **flags: Any) -> "ExperimentConfig":
        """命令行覆盖：值为 None 的参数保留文件中的值"""
        changes = {k: v for k, v in flags.items() if v is not None}
        if changes:
            self.update(changes)
        return self

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        return {name: getattr(self, name) for name in FIELDS}

    def config_hash(self) -> str:
        """规范化（键排序）YAML 序列化的 SHA-256 前 12 位"""
        identity = {k: v for k, v in self.to_dict().items() if k not in EXECUTION_FIELDS}
        canonical = yaml.safe_dump(identity, sort_keys=True, default_flow_style=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
