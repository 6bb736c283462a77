"""张量转储格式

小端头部：rank (u32)，随后每个维度一个 u32；之后是行主序的原始 f64 数据。
多个张量可以顺序写入同一个流（检查点文件即如此）。
"""
import struct
from pathlib import Path
from typing import BinaryIO, List, Union

import numpy as np

from ..exceptions import FormatError
from .tensor import Tensor

_U32 = struct.Struct("<I")


def dumps_tensor(tensor: Union[Tensor, np.ndarray]) -> bytes:
    data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor, dtype=np.float64)
    header = _U32.pack(data.ndim) + b"".join(_U32.pack(d) for d in data.shape)
    return header + np.ascontiguousarray(data, dtype="<f8").tobytes()


def write_tensor(stream: BinaryIO, tensor: Union[Tensor, np.ndarray]) -> int:
    payload = dumps_tensor(tensor)
    stream.write(payload)
    return len(payload)


def read_tensor(stream: BinaryIO) -> np.ndarray:
    """从流中读取一个张量，返回 float64 数组"""
    offset = stream.tell() if stream.seekable() else None
    raw = stream.read(_U32.size)
    if len(raw) != _U32.size:
        raise FormatError("truncated tensor header", offset)
    (rank,) = _U32.unpack(raw)
    dims_raw = stream.read(_U32.size * rank)
    if len(dims_raw) != _U32.size * rank:
        raise FormatError(f"truncated dimension list for rank {rank}", offset)
    shape = struct.unpack(f"<{rank}I", dims_raw)
    count = int(np.prod(shape, dtype=np.int64))
    body = stream.read(8 * count)
    if len(body) != 8 * count:
        raise FormatError(f"expected {8 * count} data bytes for shape {list(shape)}, got {len(body)}", offset)
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(shape)


def save_tensors(path: Union[str, Path], tensors: List[Union[Tensor, np.ndarray]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        for tensor in tensors:
            write_tensor(f, tensor)


def load_tensors(path: Union[str, Path], count: int) -> List[np.ndarray]:
    with open(path, "rb") as f:
        tensors = [read_tensor(f) for _ in range(count)]
        trailing = f.read(1)
        if trailing:
            raise FormatError("unexpected trailing bytes after last tensor", f.tell() - 1)
    return tensors
