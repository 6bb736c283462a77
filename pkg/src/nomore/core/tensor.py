"""稠密张量与反向模式自动微分

Tensor 持有一个行主序 (C-order) 的 float64 numpy 数组。参与求导的运算
在输出张量上记录父节点与梯度函数，backward() 按拓扑逆序回放这些记录。
逐元素运算只接受形状完全相同的操作数，不做隐式广播；标量参数与张量
的组合通过 scalar_mul / scalar_add 显式表达。
"""
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import InvalidArgumentError, InvalidStateError, NumericalError

GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
ArrayLike = Union[float, int, Sequence, np.ndarray]


class Tensor:
    """带梯度记录的稠密张量

    Attributes:
        data: float64 数组，C 连续
        requires_grad: 是否接收梯度
        grad: 与 data 同形状的梯度，backward 后填充，重复 backward 会累加
        name: 参数名（由 Module 注册时填写）
        role: 参数角色，例如 weight / bias / affine_scale / scalar_alpha
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        role: Optional[str] = None,
    ):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.role = role
        self.momentum_buffer: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._grad_fn: Optional[GradFn] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Iterable["Tensor"], grad_fn: GradFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64, order="C")
        parents = tuple(parents)
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out.name = None
        out.role = None
        out.momentum_buffer = None
        if out.requires_grad:
            out._parents = parents
            out._grad_fn = grad_fn
        else:
            out._parents = ()
            out._grad_fn = None
        return out

    # ---- 基本属性 ----

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidArgumentError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def check_finite(self, what: str = "tensor") -> "Tensor":
        """出现 NaN/Inf 时抛出 NumericalError"""
        if not self.is_finite():
            bad = int(np.size(self.data) - np.isfinite(self.data).sum())
            raise NumericalError(f"{what} has {bad} non-finite element(s)")
        return self

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{label}, requires_grad={self.requires_grad})"

    # ---- 运算符 ----

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


def _require_scalar(t: Tensor, op: str) -> None:
    if t.ndim != 0:
        raise InvalidArgumentError(f"{op}: expected a scalar tensor (shape []), got {list(t.shape)}")


# ---- 反向传播 ----

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """从标量 loss 反向传播

    所有可从 loss 到达且 requires_grad 的张量都会得到 grad；grad 在多次调用
    之间累加，需要显式 zero_grad() 清零。
    """
    if loss.ndim != 0:
        raise InvalidArgumentError(f"backward() needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        raise InvalidStateError("loss is not on the tape (no input requires grad)")

    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._grad_fn is None:
            continue
        for parent, parent_grad in zip(node._parents, node._grad_fn(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


# ---- 逐元素运算 ----

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    return Tensor._from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, factor: float) -> Tensor:
    """乘以常数（不可训练）"""
    return Tensor._from_op(x.data * factor, (x,), lambda g: (g * factor,))


def square(x: Tensor) -> Tensor:
    return Tensor._from_op(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def scalar_mul(x: Tensor, alpha: Tensor) -> Tensor:
    """y = alpha * x，alpha 为形状 [] 的可训练标量"""
    _require_scalar(alpha, "scalar_mul")
    a = float(alpha.data)

    def grad_fn(g: np.ndarray):
        return g * a, np.asarray(np.sum(g * x.data))

    return Tensor._from_op(x.data * a, (x, alpha), grad_fn)


def scalar_add(x: Tensor, beta: Tensor) -> Tensor:
    """y = x + beta，beta 为形状 [] 的可训练标量"""
    _require_scalar(beta, "scalar_add")
    b = float(beta.data)
    return Tensor._from_op(x.data + b, (x, beta), lambda g: (g, np.asarray(np.sum(g))))


def add_constant(x: Tensor, value: np.ndarray) -> Tensor:
    """加上一个不参与求导的同形状数组（例如注入的噪声）"""
    value = np.asarray(value, dtype=np.float64)
    if value.shape != x.shape:
        raise InvalidArgumentError(
            f"add_constant: shape mismatch {list(x.shape)} vs {list(value.shape)}"
        )
    return Tensor._from_op(x.data + value, (x,), lambda g: (g,))


# ---- 归约与形状 ----

def tensor_sum(x: Tensor) -> Tensor:
    return Tensor._from_op(np.asarray(x.data.sum()), (x,), lambda g: (np.full_like(x.data, float(g)),))


def tensor_mean(x: Tensor) -> Tensor:
    n = max(x.size, 1)
    return Tensor._from_op(
        np.asarray(x.data.mean()), (x,), lambda g: (np.full_like(x.data, float(g) / n),)
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise InvalidArgumentError(f"reshape: cannot view {list(x.shape)} as {list(shape)}")
    original = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))
