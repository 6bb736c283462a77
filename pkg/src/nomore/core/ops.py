"""神经网络算子：激活、全连接、卷积、池化、标准化与损失

每个算子在前向时计算结果，并返回带梯度函数的 Tensor。形状检查失败一律
抛出 InvalidArgumentError。
"""
from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import InvalidArgumentError, NumericalError
from .tensor import Tensor, reshape


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x·w + b，x:[B,din]，w:[din,dout]，b:[dout]"""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise InvalidArgumentError(
            f"linear: expected x[B,din], w[din,dout], b[dout], got "
            f"{list(x.shape)}, {list(w.shape)}, {list(b.shape)}"
        )
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise InvalidArgumentError(
            f"linear: inner dimensions disagree: x{list(x.shape)} w{list(w.shape)} b{list(b.shape)}"
        )

    def grad_fn(g: np.ndarray):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor._from_op(x.data @ w.data + b.data, (x, w, b), grad_fn)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """二维互相关，x:[B,C,H,W]，w:[Cout,C,k,k]，无偏置"""
    if x.ndim != 4 or w.ndim != 4:
        raise InvalidArgumentError(
            f"conv2d: expected 4-D input and kernel, got {list(x.shape)} and {list(w.shape)}"
        )
    batch, channels, height, width = x.shape
    out_channels, kernel_channels, k, k_w = w.shape
    if kernel_channels != channels:
        raise InvalidArgumentError(
            f"conv2d: kernel expects {kernel_channels} input channels, input has {channels}"
        )
    if k != k_w:
        raise InvalidArgumentError(f"conv2d: kernel must be square, got {k}x{k_w}")
    if stride < 1 or padding < 0:
        raise InvalidArgumentError(f"conv2d: invalid stride={stride} / padding={padding}")
    padded_h, padded_w = height + 2 * padding, width + 2 * padding
    if k > padded_h or k > padded_w:
        raise InvalidArgumentError(
            f"conv2d: kernel {k}x{k} larger than padded input {padded_h}x{padded_w}"
        )
    out_h = (padded_h - k) // stride + 1
    out_w = (padded_w - k) // stride + 1

    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.pad(x.data, pad)
    # [B, C, out_h, out_w, k, k]
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    out = np.tensordot(windows, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def grad_fn(g: np.ndarray):
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_xp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                grad_xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += np.einsum(
                    "bohw,oc->bchw", g, w.data[:, :, i, j]
                )
        return grad_xp[:, :, padding:padding + height, padding:padding + width], grad_w

    return Tensor._from_op(out, (x, w), grad_fn)


def avg_pool2x2(x: Tensor) -> Tensor:
    """2×2 平均池化，步长 2"""
    if x.ndim != 4:
        raise InvalidArgumentError(f"avg_pool2x2: expected 4-D input, got {list(x.shape)}")
    batch, channels, height, width = x.shape
    if height % 2 or width % 2:
        raise InvalidArgumentError(f"avg_pool2x2: spatial size {height}x{width} is not even")
    out = x.data.reshape(batch, channels, height // 2, 2, width // 2, 2).mean(axis=(3, 5))

    def grad_fn(g: np.ndarray):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return Tensor._from_op(out, (x,), grad_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C]"""
    if x.ndim != 4:
        raise InvalidArgumentError(f"global_avg_pool: expected 4-D input, got {list(x.shape)}")
    area = x.shape[2] * x.shape[3]

    def grad_fn(g: np.ndarray):
        return (np.broadcast_to(g[:, :, None, None] / area, x.shape).copy(),)

    return Tensor._from_op(x.data.mean(axis=(2, 3)), (x,), grad_fn)


def zero_pad_channels(x: Tensor) -> Tensor:
    """沿通道轴拼接等量的零通道：[B,C,...] -> [B,2C,...]"""
    if x.ndim < 2:
        raise InvalidArgumentError(f"zero_pad_channels: expected >=2-D input, got {list(x.shape)}")
    channels = x.shape[1]
    out = np.concatenate([x.data, np.zeros_like(x.data)], axis=1)
    return Tensor._from_op(out, (x,), lambda g: (g[:, :channels],))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], int(np.prod(x.shape[1:], dtype=np.int64))))


# ---- 标准化 ----

def _channel_view(values: np.ndarray, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[1] = values.shape[0]
    return values.reshape(shape)


def standardize(x: Tensor, axes: Sequence[int], eps: float) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """沿 axes 减均值、除以 sqrt(有偏方差 + eps)

    Returns:
        (标准化后的张量, 均值, 有偏方差)，均值与方差保持 keepdims 形状
    """
    axes = tuple(axes)
    mean = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    denom = var + eps
    if eps == 0 and np.any(denom == 0):
        raise NumericalError("standardize: zero variance slice with eps=0")
    inv_std = 1.0 / np.sqrt(denom)
    x_hat = centered * inv_std

    def grad_fn(g: np.ndarray):
        g_mean = g.mean(axis=axes, keepdims=True)
        gx_mean = (g * x_hat).mean(axis=axes, keepdims=True)
        return (inv_std * (g - g_mean - x_hat * gx_mean),)

    return Tensor._from_op(x_hat, (x,), grad_fn), mean, var


def normalize_with_stats(x: Tensor, mean: np.ndarray, var: np.ndarray, eps: float) -> Tensor:
    """用给定的逐通道统计量（通道轴为 1）标准化，统计量视为常数"""
    mean_view = _channel_view(np.asarray(mean, dtype=np.float64), x.ndim)
    inv_std = 1.0 / np.sqrt(_channel_view(np.asarray(var, dtype=np.float64), x.ndim) + eps)
    return Tensor._from_op((x.data - mean_view) * inv_std, (x,), lambda g: (g * inv_std,))


def channel_affine(x: Tensor, scale: Tensor, bias: Tensor) -> Tensor:
    """逐通道仿射 y = scale[c]·x + bias[c]，通道轴为 1"""
    if scale.ndim != 1 or bias.ndim != 1 or x.ndim < 2:
        raise InvalidArgumentError("channel_affine: expected 1-D scale/bias and >=2-D input")
    channels = x.shape[1]
    if scale.shape[0] != channels or bias.shape[0] != channels:
        raise InvalidArgumentError(
            f"channel_affine: {channels} channels vs scale{list(scale.shape)} bias{list(bias.shape)}"
        )
    reduce_axes = tuple(a for a in range(x.ndim) if a != 1)
    scale_view = _channel_view(scale.data, x.ndim)
    bias_view = _channel_view(bias.data, x.ndim)

    def grad_fn(g: np.ndarray):
        return g * scale_view, (g * x.data).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return Tensor._from_op(x.data * scale_view + bias_view, (x, scale, bias), grad_fn)


# ---- 损失 ----

def cross_entropy(logits: Tensor, labels: np.ndarray, label_smoothing: float = 0.0) -> Tensor:
    """带标签平滑的 softmax 交叉熵，返回 batch 平均"""
    if logits.ndim != 2:
        raise InvalidArgumentError(f"cross_entropy: expected [B,K] logits, got {list(logits.shape)}")
    labels = np.asarray(labels, dtype=np.int64)
    batch, num_classes = logits.shape
    if labels.shape != (batch,):
        raise InvalidArgumentError(f"cross_entropy: labels shape {list(labels.shape)} does not match batch of {batch}")
    if np.any((labels < 0) | (labels >= num_classes)):
        raise InvalidArgumentError(f"cross_entropy: labels must lie in [0, {num_classes}), got {labels.tolist()}")
    if not 0.0 <= label_smoothing < 1.0:
        raise InvalidArgumentError(f"label_smoothing must be in [0, 1), got {label_smoothing}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    target = np.full((batch, num_classes), label_smoothing / num_classes)
    target[np.arange(batch), labels] += 1.0 - label_smoothing
    loss = -(target * log_probs).sum() / batch

    def grad_fn(g: np.ndarray):
        return ((np.exp(log_probs) - target) * (float(g) / batch),)

    return Tensor._from_op(np.asarray(loss), (logits,), grad_fn)
