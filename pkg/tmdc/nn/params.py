"""
层参数容器

LinearParams / Conv1DParams / MHAParams / VIBParams 及其初始化
"""

import dataclasses
import math
from dataclasses import dataclass
from typing import Dict, Iterator, Tuple

import numpy as np

from ..core import Tensor
from ..errors import ConfigError, ShapeError


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform(-a, a)，a = sqrt(6 / (fan_in + fan_out))"""
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


@dataclass
class LinearParams:
    """仿射层 x·W + b，weight: [in_dim, out_dim]，bias: [out_dim]"""
    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"LinearParams 形状不一致: weight {list(self.weight.shape)}, bias {list(self.bias.shape)}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearParams":
        return cls(_param(glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim)), _param(np.zeros(out_dim)))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class Conv1DParams:
    """宽度为 3 的一维卷积，kernel: [3, in_dim, out_dim]，kernel[k] 作用于位置 t-1+k"""
    kernel: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.kernel.ndim != 3 or self.kernel.shape[0] != 3:
            raise ShapeError(f"卷积核宽度必须为 3，得到 {list(self.kernel.shape)}")
        if self.bias.shape != (self.kernel.shape[2],):
            raise ShapeError(f"卷积偏置形状不一致: {list(self.bias.shape)}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "Conv1DParams":
        kernel = glorot_uniform(rng, (3, in_dim, out_dim), 3 * in_dim, 3 * out_dim)
        return cls(_param(kernel), _param(np.zeros(out_dim)))

    @property
    def in_dim(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_dim(self) -> int:
        return self.kernel.shape[2]


@dataclass
class MHAParams:
    """
    多头注意力参数

    query/key/value 的列按头依次排列（第 h 个头占 [h*hd, (h+1)*hd) 列），
    等价于每个头各自的投影；output 为拼接后的输出投影。
    """
    query: LinearParams
    key: LinearParams
    value: LinearParams
    output: LinearParams
    n_heads: int = 4

    def __post_init__(self):
        dim = self.query.in_dim
        for p in (self.query, self.key, self.value, self.output):
            if p.in_dim != dim or p.out_dim != dim:
                raise ShapeError("MHA 各投影必须是 D->D")
        if self.n_heads < 1 or dim % self.n_heads != 0:
            raise ConfigError(f"D={dim} 不能被 n_heads={self.n_heads} 整除")

    @classmethod
    def init(cls, dim: int, n_heads: int, rng: np.random.Generator) -> "MHAParams":
        return cls(*(LinearParams.init(dim, dim, rng) for _ in range(4)), n_heads=n_heads)

    @property
    def dim(self) -> int:
        return self.query.in_dim

    @property
    def head_dim(self) -> int:
        return self.dim // self.n_heads


@dataclass
class VIBParams:
    """变分信息瓶颈的均值头与标准差头（均为 D->D）"""
    mu_head: LinearParams
    sigma_head: LinearParams

    def __post_init__(self):
        if self.mu_head.in_dim != self.mu_head.out_dim or self.sigma_head.in_dim != self.sigma_head.out_dim:
            raise ShapeError("VIB 的两个头都必须是 D->D")

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "VIBParams":
        return cls(LinearParams.init(dim, dim, rng), LinearParams.init(dim, dim, rng))


def iter_named_tensors(obj, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
    """
    按字段顺序递归展开参数容器，产生 (点分名称, Tensor)

    支持 dataclass、dict（保持插入顺序）与 Tensor 本身。
    """
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, (Tensor, dict)) or dataclasses.is_dataclass(value):
                yield from iter_named_tensors(value, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, dict):
        for key, value in obj.items():
            yield from iter_named_tensors(value, f"{prefix}.{key}" if prefix else str(key))


def named_tensors(obj, prefix: str = "") -> Dict[str, Tensor]:
    out = dict(iter_named_tensors(obj, prefix))
    for name, t in out.items():
        t.name = name
    return out
