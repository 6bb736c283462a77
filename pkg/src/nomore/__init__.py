from .blocks import NoMoreParams, ResidualBlock, Wrapper, parse_wrapper
from .core import Rng, Tensor
from .exceptions import (
    FormatError,
    InvalidArgumentError,
    InvalidStateError,
    NoMoreError,
    NumericalError,
    NumericalSingularityError,
)
from .models import ResidualNet, build_residual_mlp, build_resnet, load_checkpoint, save_checkpoint
from .normalizers import NormKind, NormalizerSpec
from .noise_model import MixtureSpec, simulate_bn_sample
from .stats import hotelling_one_sample, pca

__all__ = [
    'Tensor',
    'Rng',
    'Wrapper',
    'parse_wrapper',
    'ResidualBlock',
    'NoMoreParams',
    'NormKind',
    'NormalizerSpec',
    'ResidualNet',
    'build_resnet',
    'build_residual_mlp',
    'save_checkpoint',
    'load_checkpoint',
    'MixtureSpec',
    'simulate_bn_sample',
    'hotelling_one_sample',
    'pca',
    'NoMoreError',
    'InvalidArgumentError',
    'InvalidStateError',
    'NumericalError',
    'NumericalSingularityError',
    'FormatError',
]
