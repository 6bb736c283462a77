from .gradcheck import GradCheckResult, check_gradients, elementwise_error, projection_loss
from .init import kaiming_init
from .module import Conv2d, Linear, Mode, Module, conv3x3
from .ops import (
    avg_pool2x2,
    channel_affine,
    conv2d,
    cross_entropy,
    flatten,
    global_avg_pool,
    linear,
    normalize_with_stats,
    relu,
    standardize,
    zero_pad_channels,
)
from .optim import SgdConfig, sgd_step
from .rng import Rng
from .serialization import dumps_tensor, load_tensors, read_tensor, save_tensors, write_tensor
from .tensor import (
    Tensor,
    add,
    add_constant,
    backward,
    mul,
    reshape,
    scalar_add,
    scalar_mul,
    scale,
    square,
    sub,
    tensor_mean,
    tensor_sum,
)

__all__ = [
    'Tensor', 'Rng', 'Module', 'Mode', 'Linear', 'Conv2d', 'conv3x3',
    'SgdConfig', 'sgd_step', 'kaiming_init', 'backward',
    'add', 'sub', 'mul', 'scale', 'square', 'scalar_mul', 'scalar_add', 'add_constant',
    'tensor_sum', 'tensor_mean', 'reshape',
    'relu', 'linear', 'conv2d', 'avg_pool2x2', 'global_avg_pool', 'zero_pad_channels', 'flatten',
    'standardize', 'normalize_with_stats', 'channel_affine', 'cross_entropy',
    'dumps_tensor', 'write_tensor', 'read_tensor', 'save_tensors', 'load_tensors',
    'GradCheckResult', 'check_gradients', 'elementwise_error', 'projection_loss',
]
