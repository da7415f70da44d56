"""
tmdc 工具函数模块

提供随机数派生、冻结噪声源与有限差分梯度检查
"""

from typing import Callable, List, Optional, Sequence

import numpy as np

from .core import Tape, Tensor
from .errors import ConfigError, NonDeterministicError, ProtocolError


# ==================== 随机数 ====================

def make_rng(*keys: int) -> np.random.Generator:
    """由若干非负整数键派生独立的随机数生成器，同一组键总是得到同一序列"""
    keys = [int(k) for k in keys]
    if any(k < 0 for k in keys):
        raise ConfigError(f"随机数种子必须是非负整数，得到 {keys}")
    return np.random.default_rng(keys)


# ==================== 冻结噪声 ====================

class NoiseSource:
    """
    重参数化 ε 与 dropout 掩码的抽样源

    - train 模式：从生成器抽样，并按抽样顺序记录在 draws 中
    - eval 模式：ε 全零、不产生掩码
    - 回放模式（frozen()）：按同样顺序返回已记录的抽样，前向因此是确定的
    """

    def __init__(self, rng: Optional[np.random.Generator] = None, mode: str = "train",
                 replay: Optional[Sequence[np.ndarray]] = None):
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode 必须是 'train' 或 'eval'，得到 {mode!r}")
        if mode == "train" and rng is None and replay is None:
            raise ConfigError("train 模式需要随机数生成器或回放序列")
        self.mode = mode
        self.draws: List[np.ndarray] = []
        self._rng = rng
        self._replay = list(replay) if replay is not None else None
        self._cursor = 0

    @classmethod
    def from_seed(cls, *keys: int) -> "NoiseSource":
        return cls(make_rng(*keys), "train")

    @classmethod
    def evaluation(cls) -> "NoiseSource":
        return cls(None, "eval")

    @property
    def training(self) -> bool:
        return self.mode == "train"

    def frozen(self) -> "NoiseSource":
        """返回按相同顺序回放本源全部抽样的新噪声源"""
        return NoiseSource(None, self.mode, replay=self.draws)

    def _draw(self, shape, sampler: Callable[[], np.ndarray]) -> np.ndarray:
        if self._replay is not None:
            if self._cursor >= len(self._replay):
                raise ProtocolError("回放序列已耗尽：前向过程与记录时不一致")
            arr = self._replay[self._cursor]
            self._cursor += 1
            if arr.shape != tuple(shape):
                raise ProtocolError(f"回放抽样形状 {arr.shape} 与请求 {tuple(shape)} 不一致")
        else:
            arr = sampler()
        self.draws.append(arr)
        return arr

    def eps(self, shape) -> Tensor:
        """标准正态 ε；eval 模式为零"""
        shape = tuple(shape)
        if not self.training:
            return Tensor(np.zeros(shape))
        return Tensor(self._draw(shape, lambda: self._rng.standard_normal(shape)))

    def mask(self, shape, rate: float) -> Optional[np.ndarray]:
        """保留概率为 1-rate 的伯努利掩码；eval 模式或 rate=0 时为 None"""
        shape = tuple(shape)
        if not self.training or rate == 0:
            return None
        return self._draw(shape, lambda: (self._rng.random(shape) >= rate).astype(np.float64))


# ==================== 有限差分检查 ====================

def finite_diff_check_leaves(
    f: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    h: float = 1e-5,
    n_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    用中心差分检查 f 对若干叶子张量的解析梯度

    参数：
      - f: 无参函数，返回标量张量；内部的随机性必须已冻结
      - leaves: 需要检查的叶子（requires_grad=True）
      - h: 差分步长
      - n_coords: 每个叶子最多抽查多少个坐标；None 表示全部
      - seed: 坐标抽查的随机种子

    返回：
      - max |analytic - numeric| / max(1, |numeric|)
    """
    for leaf in leaves:
        if not leaf.requires_grad:
            raise ConfigError(f"叶子 {leaf.name or leaf!r} 必须 requires_grad=True")

    with Tape() as tape:
        loss = f()
    if loss.requires_grad:
        tape.backward(loss)
        analytic = [leaf.grad.copy() if leaf.grad is not None else np.zeros(leaf.shape) for leaf in leaves]
    else:
        analytic = [np.zeros(leaf.shape) for _ in leaves]

    first, second = f().item(), f().item()
    if first != second or first != loss.item():
        raise NonDeterministicError(
            f"两次前向结果不一致 ({first!r} vs {second!r})，请冻结 ε 与 dropout 掩码"
        )

    rng = np.random.default_rng(seed)
    worst = 0.0
    for leaf, grad in zip(leaves, analytic):
        origin = leaf.data.copy()
        coords = np.arange(origin.size)
        if n_coords is not None and n_coords < origin.size:
            coords = rng.choice(origin.size, size=n_coords, replace=False)
        for flat in coords:
            idx = np.unravel_index(int(flat), origin.shape)
            bumped = origin.copy()
            bumped[idx] += h
            leaf.assign_(bumped)
            f_plus = f().item()
            bumped[idx] = origin[idx] - h
            leaf.assign_(bumped)
            f_minus = f().item()
            leaf.assign_(origin)
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(grad[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, float(err))
    return worst


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """
    对单输入函数 f(x) 做中心差分梯度检查

    示例：
        >>> finite_diff_check(lambda t: (t * t).sum(), Tensor([1.0, 2.0, 3.0]))  # < 1e-7
    """
    leaf = Tensor(x.data, requires_grad=True, name=x.name or "x")
    return finite_diff_check_leaves(lambda: f(leaf), [leaf], h=h)
