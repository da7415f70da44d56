"""
带偏差修正的 Adam 优化器
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from ..core import Tape, Tensor
from ..errors import ProtocolError, ShapeError


@dataclass
class AdamState:
    """
    Adam 状态

    names 为可更新参数名；不在其中的参数在 adam_step 中保持不变。
    """
    names: List[str]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, tensors: Dict[str, Tensor], names: Optional[Iterable[str]] = None, lr: float = 1e-4,
               **kwargs) -> "AdamState":
        names = list(tensors) if names is None else list(names)
        unknown = [n for n in names if n not in tensors]
        if unknown:
            raise ProtocolError(f"优化器参数不存在: {unknown[:5]}")
        return cls(
            names=names,
            lr=lr,
            m={n: np.zeros(tensors[n].shape) for n in names},
            v={n: np.zeros(tensors[n].shape) for n in names},
            **kwargs,
        )

    def check_shapes(self, tensors: Dict[str, Tensor]) -> None:
        for n in self.names:
            if self.m[n].shape != tensors[n].shape or self.v[n].shape != tensors[n].shape:
                raise ShapeError(f"参数 {n} 的矩估计形状与参数 {tensors[n].shape} 不一致")


def collect_grads(tape: Tape, tensors: Dict[str, Tensor], names: Iterable[str]) -> Dict[str, np.ndarray]:
    """
    取出一次反向传播后的梯度

    没有出现在计算带上的参数得到零梯度（例如缺失模态的 MSD 参数）。
    """
    grads = {}
    for n in names:
        t = tensors[n]
        grads[n] = t.grad.copy() if id(t) in tape.leaves and t.grad is not None else np.zeros(t.shape)
    return grads


def adam_step(tensors: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState) -> None:
    """
    对 state.names 中的参数执行一步 Adam 更新（原地替换参数数据）

    说明：
      - m ← β1·m + (1−β1)·g，v ← β2·v + (1−β2)·g²
      - θ ← θ − lr · m̂ / (sqrt(v̂) + ε)，m̂、v̂ 为偏差修正后的矩估计
      - state.names 中任何参数缺少梯度都会报错
    """
    missing = [n for n in state.names if n not in grads]
    if missing:
        raise ProtocolError(f"可更新参数缺少梯度: {missing[:5]}{' ...' if len(missing) > 5 else ''}")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for n in state.names:
        g = np.asarray(grads[n], dtype=np.float64)
        t = tensors[n]
        if g.shape != t.shape:
            raise ShapeError(f"参数 {n} 的梯度形状 {g.shape} 与参数 {t.shape} 不一致")
        state.m[n] = state.beta1 * state.m[n] + (1.0 - state.beta1) * g
        state.v[n] = state.beta2 * state.v[n] + (1.0 - state.beta2) * g * g
        update = state.lr * (state.m[n] / c1) / (np.sqrt(state.v[n] / c2) + state.eps)
        t.assign_(t.data - update)
