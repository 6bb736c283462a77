import pytest
from pathlib import Path

import numpy as np

# 添加src目录到Python路径
import sys
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from config import ExperimentConfig
from nomore.core import Rng
from nomore.data import gen_mixture_dataset
from nomore.noise_model import MixtureSpec


@pytest.fixture
def rng():
    """固定种子的随机数源"""
    return Rng(1234)


@pytest.fixture
def four_class_spec():
    """4 类、8 维、类间距 8σ 的高斯混合"""
    return MixtureSpec.simplex(4, 8, separation=8.0)


@pytest.fixture
def single_spec():
    """单一标准正态分布（均值为原点）"""
    return MixtureSpec.simplex(1, 4, separation=0.0)


@pytest.fixture
def small_split(four_class_spec):
    """小规模合成数据集"""
    return gen_mixture_dataset(four_class_spec, 256, 128, Rng(7))


@pytest.fixture
def output_dir(tmp_path):
    """临时输出目录"""
    path = tmp_path / "results"
    path.mkdir()
    return path


def make_config(command, tmp_path, **overrides):
    """构建一个缩小规模的实验配置"""
    config = ExperimentConfig(command=command)
    config.override(output_dir=str(tmp_path / "results"), **overrides)
    return config


@pytest.fixture
def small_config(tmp_path):
    """返回构建小规模配置的工厂"""
    return lambda command, **overrides: make_config(command, tmp_path, **overrides)


@pytest.fixture
def sample_cifar_file(tmp_path):
    """每类 6 条记录的 CIFAR-10 二进制文件"""
    generator = np.random.default_rng(0)
    records = []
    for label in range(10):
        for _ in range(6):
            pixels = generator.integers(0, 256, 3072, dtype=np.uint8)
            records.append(np.concatenate([[label], pixels]).astype(np.uint8))
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(np.concatenate(records).tobytes())
    return path
