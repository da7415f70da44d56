"""
tmdc 核心张量与反向自动微分

提供 Tensor、Tape 以及 TMDC 结构需要的全部可微算子。
只有在 Tape 处于激活状态且输入需要梯度时才会记录计算图，
因此推理（评估）路径天然不建图。
"""

import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, GraphError, NonFiniteError, ShapeError

Scalar = Union[int, float]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

# 每个线程各自持有激活的 Tape
_local = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_local, "tape", None)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"算子 '{op}' 产生了 NaN/Inf")


class Tensor:
    """
    稠密 float64 张量

    数据在构造后只读，唯一可变的是 grad 缓冲区；
    参数更新通过 assign_ 整体替换数据（仅供优化器与检查点加载使用）。
    """

    __slots__ = ("_data", "requires_grad", "grad", "name", "_tape", "_op")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"张量各维长度必须为正，得到 {arr.shape}")
        _check_finite(arr, "leaf")
        arr.flags.writeable = False
        self._data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional["Tape"] = None
        self._op = "leaf"

    @classmethod
    def _wrap(cls, arr: np.ndarray, op: str) -> "Tensor":
        """算子内部构造：不复制，只做有限性检查"""
        _check_finite(arr, op)
        arr = np.asarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        out = cls.__new__(cls)
        out._data = arr
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._tape = None
        out._op = op
        return out

    # ==================== 基本属性 ====================

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() 只适用于单元素张量，当前形状 {self.shape}")
        return float(self._data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def assign_(self, values) -> None:
        """整体替换数据（形状必须一致）"""
        arr = np.array(values, dtype=np.float64)
        if arr.shape != self.shape:
            raise ShapeError(f"assign_ 形状不一致: {self.shape} vs {arr.shape}")
        _check_finite(arr, "assign_")
        arr.flags.writeable = False
        self._data = arr

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self._data, "detach")

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad}{label})"

    # ==================== 运算符 ====================

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("只支持除以标量")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def relu(self):
        return relu(self)

    def softplus(self):
        return softplus(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a1: int, a2: int):
        return swapaxes(self, a1, a2)

    def backward(self) -> None:
        backward(self)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.array(value, dtype=np.float64), "const")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的梯度规约回原始形状"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ==================== Tape ====================

@dataclass
class TapeEntry:
    """一次被记录的运算"""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """
    按执行顺序记录运算的计算带

    用法：
        with Tape() as tape:
            loss = f(x)
        tape.backward(loss)

    每个记录项的输入都先于它出现在带上；反向时逆序遍历，每个节点只访问一次。
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self.leaves: Dict[int, Tensor] = {}
        self._previous: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        self._previous = _active_tape()
        _local.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.tape = self._previous
        self._previous = None

    def __len__(self):
        return len(self.entries)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: BackwardFn) -> None:
        for t in inputs:
            if t.requires_grad and t._tape is not self:
                self.leaves.setdefault(id(t), t)
        output.requires_grad = True
        output._tape = self
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """对 loss 做反向传播，写入所有叶子的 grad（不在路径上的叶子得到零梯度）"""
        if loss.size != 1:
            raise GraphError(f"loss 必须是标量，当前形状 {list(loss.shape)}")
        if not loss.requires_grad or loss._tape is not self:
            raise GraphError("loss 不在当前计算带上（计算图已脱离）")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaf_grads: Dict[int, np.ndarray] = {}
        for entry in reversed(self.entries):
            g = grads.pop(id(entry.output), None)
            if g is None:
                continue
            for t, gi in zip(entry.inputs, entry.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                gi = _unbroadcast(gi, t.shape)
                bucket = grads if t._tape is self else leaf_grads
                key = id(t)
                bucket[key] = bucket[key] + gi if key in bucket else gi

        for key, leaf in self.leaves.items():
            g = leaf_grads.get(key)
            leaf.grad = np.array(g, dtype=np.float64) if g is not None else np.zeros(leaf.shape)
            _check_finite(leaf.grad, f"backward({leaf.name or 'leaf'})")


def _make(op: str, arr: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    out = Tensor._wrap(arr, op)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """在 loss 所属的计算带上反向传播"""
    if loss._tape is None:
        raise GraphError("loss 没有记录在任何计算带上（计算图已脱离）")
    loss._tape.backward(loss)


# ==================== 矩阵乘法 ====================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """批量矩阵乘法 [.., M, K] x [.., K, N] -> [.., M, N]，批维按 numpy 规则广播"""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul 维度不匹配: {list(a.shape)} x {list(b.shape)}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul 批维无法广播: {list(a.shape)} x {list(b.shape)}")
    ad, bd = a.data, b.data

    def _backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make("matmul", ad @ bd, (a, b), _backward)


# ==================== 逐元素运算 ====================

def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op} 形状不匹配: {list(a.shape)} vs {list(b.shape)}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, factor: Scalar) -> Tensor:
    factor = float(factor)
    return _make("scale", a.data * factor, (a,), lambda g: (g * factor,))


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(np.float64)
    return _make("relu", a.data * mask, (a,), lambda g: (g * mask,))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    # d/dx softplus = sigmoid(x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _make("softplus", np.logaddexp(0.0, x), (a,), lambda g: (g * sig,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise DomainError(f"log 的输入必须为正，最小值为 {float(x.min())}")
    return _make("log", np.log(x), (a,), lambda g: (g / x,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "relu": relu,
    "softplus": softplus,
    "exp": exp,
    "log": log,
}


def elementwise(op_kind: str, a: Tensor, b: Union[Tensor, Scalar, None] = None) -> Tensor:
    """
    逐元素运算分派

    参数：
      - op_kind: 'add' | 'sub' | 'mul' | 'scale' | 'relu' | 'softplus' | 'exp' | 'log'
      - a: 输入张量
      - b: 二元运算的第二个操作数（张量或标量）；一元运算忽略
    """
    fn = _ELEMENTWISE.get(op_kind)
    if fn is None:
        raise ValueError(f"未知的逐元素运算 '{op_kind}'，可选: {sorted(_ELEMENTWISE)}")
    if op_kind in ("add", "sub", "mul", "scale"):
        if b is None:
            raise ValueError(f"'{op_kind}' 需要第二个操作数")
        return fn(a, b)
    return fn(a)


# ==================== 规约与形状 ====================

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(out), (a,), _backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"无法把 {list(original)} 重排为 {list(shape)}")
    return _make("reshape", out, (a,), lambda g: (g.reshape(original),))


def swapaxes(a: Tensor, a1: int, a2: int) -> Tensor:
    return _make("swapaxes", np.swapaxes(a.data, a1, a2), (a,), lambda g: (np.swapaxes(g, a1, a2),))


def getitem(a: Tensor, index) -> Tensor:
    """基本切片（整数/切片/Ellipsis），反向把梯度写回对应位置"""
    shape = a.shape
    out = np.array(a.data[index])

    def _backward(g):
        full = np.zeros(shape)
        full[index] += g
        return (full,)

    return _make("getitem", out, (a,), _backward)


def pad_time(a: Tensor, before: int, after: int) -> Tensor:
    """在倒数第二维（序列维）前后补零"""
    if before == 0 and after == 0:
        return a
    width = [(0, 0)] * a.ndim
    width[-2] = (before, after)
    length = a.shape[-2]
    out = np.pad(a.data, width)
    return _make("pad_time", out, (a,), lambda g: (g[..., before:before + length, :],))


def concat_lastdim(parts: Sequence[Tensor]) -> Tensor:
    """沿最后一维按顺序拼接；反向把上游梯度精确切分回各部分"""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_lastdim 需要至少一个输入")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat_lastdim 前导维不一致: {list(parts[0].shape)} vs {list(p.shape)}")
    if len(parts) == 1:
        return parts[0]
    offsets = np.cumsum([p.shape[-1] for p in parts])[:-1]
    out = np.concatenate([p.data for p in parts], axis=-1)
    return _make("concat", out, tuple(parts), lambda g: tuple(np.split(g, offsets, axis=-1)))


def mean_over_time(x: Tensor) -> Tensor:
    """沿序列维（倒数第二维）求均值：[.., T, D] -> [.., D]"""
    if x.ndim < 2:
        raise ShapeError(f"mean_over_time 需要 [.., T, D] 输入，当前 {list(x.shape)}")
    return tmean(x, axis=-2)


# ==================== softmax ====================

def softmax_lastdim(x: Tensor) -> Tensor:
    """最后一维 softmax，先减去最大值保证数值稳定"""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def _backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make("softmax", s, (x,), _backward)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def _backward(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", out, (x,), _backward)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor._wrap(np.zeros(tuple(shape)), "zeros")
