"""
TMDC 完整参数集

参数名采用点分路径，分为三个参数组：
  - spe：每个模态独立的 MSD 网络（spe.A.*、spe.T.*、spe.V.*）
  - com：三个模态共享的 MCD 网络（com.*）以及各模态独立的公共预测头（com_heads.*）
  - imc：第二阶段的 X_All 残差全连接（fusion.all_resfc.*）与融合预测头（fusion.fuse_head.*）
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core import Tensor
from ..data.dataset import MODALITIES
from ..errors import ConfigError
from ..nn.layers import SIGMA_MODES
from ..nn.params import Conv1DParams, LinearParams, MHAParams, VIBParams, named_tensors
from ..utils import make_rng
from .ablation import FULL, AblationConfig

PARAM_GROUPS = ("spe", "com", "imc")
CROSS_OWNERS = ("kv-owner", "query-owner")


@dataclass
class ModelOptions:
    """前向过程的非参数选项"""
    dropout: float = 0.0
    sigma_mode: str = "softplus"
    cross_owner: str = "kv-owner"
    ablation: AblationConfig = FULL

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout 必须在 [0, 1) 内，得到 {self.dropout}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ConfigError(f"sigma_mode 必须是 {SIGMA_MODES} 之一，得到 {self.sigma_mode!r}")
        if self.cross_owner not in CROSS_OWNERS:
            raise ConfigError(f"cross_owner 必须是 {CROSS_OWNERS} 之一，得到 {self.cross_owner!r}")


@dataclass
class SpecificParams:
    """单个模态的 MSD 网络"""
    conv: Conv1DParams
    vib: VIBParams
    mha: MHAParams
    resfc: LinearParams
    head_s: LinearParams
    head_spe: LinearParams


@dataclass
class CommonParams:
    """三个模态共享的 MCD 网络；conv 的输入维为各模态特征维的最大值"""
    conv: Conv1DParams
    vib: VIBParams
    mha: MHAParams
    resfc: LinearParams


@dataclass
class CommonHeads:
    """MCD 在每个模态上独立的预测头"""
    head_c: LinearParams
    head_com: LinearParams


@dataclass
class FusionParams:
    all_resfc: Dict[str, LinearParams]
    fuse_head: LinearParams


@dataclass
class TMDCParams:
    spe: Dict[str, SpecificParams]
    com: CommonParams
    com_heads: Dict[str, CommonHeads]
    fusion: FusionParams
    feat_dims: Tuple[int, int, int] = field(default=(1, 1, 1))
    seq_len: int = 1

    @property
    def dim(self) -> int:
        return self.com.vib.mu_head.in_dim

    @property
    def n_out(self) -> int:
        return self.fusion.fuse_head.out_dim

    @property
    def n_heads(self) -> int:
        return self.com.mha.n_heads

    def feat_dim(self, modality: str) -> int:
        return self.feat_dims[MODALITIES.index(modality)]

    def named_tensors(self) -> Dict[str, Tensor]:
        return named_tensors(self)

    def groups(self) -> Dict[str, List[str]]:
        out = {g: [] for g in PARAM_GROUPS}
        for name in self.named_tensors():
            out[param_group(name)].append(name)
        return out

    def active_names(self, ablation: AblationConfig = FULL) -> List[str]:
        """当前消融配置下参与训练的参数名（w/o MSD 去掉 spe 组，w/o MCD 去掉 com 组）"""
        skip = set()
        if not ablation.use_msd:
            skip.add("spe")
        if not ablation.use_mcd:
            skip.add("com")
        return [n for n in self.named_tensors() if param_group(n) not in skip]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.numpy() for name, t in self.named_tensors().items()}

    def load_state_dict(self, arrays: Dict[str, np.ndarray]) -> None:
        tensors = self.named_tensors()
        missing = sorted(set(tensors) - set(arrays))
        if missing:
            raise ConfigError(f"缺少参数: {missing[:5]}{' ...' if len(missing) > 5 else ''}")
        for name, t in tensors.items():
            t.assign_(arrays[name])

    def clone(self) -> "TMDCParams":
        """深拷贝全部参数张量，结构（含共享关系）保持不变"""
        out = _map_tensors(self, lambda t: Tensor(t.data, requires_grad=t.requires_grad))
        out.named_tensors()
        return out


def param_group(name: str) -> str:
    head = name.split(".", 1)[0]
    if head == "spe":
        return "spe"
    if head in ("com", "com_heads"):
        return "com"
    if head == "fusion":
        return "imc"
    raise ConfigError(f"无法判断参数 {name!r} 的参数组")


def _map_tensors(obj, fn: Callable[[Tensor], Tensor]):
    if isinstance(obj, Tensor):
        return fn(obj)
    if dataclasses.is_dataclass(obj):
        changes = {f.name: _map_tensors(getattr(obj, f.name), fn) for f in dataclasses.fields(obj)}
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, dict):
        return {k: _map_tensors(v, fn) for k, v in obj.items()}
    return obj


def init_params(
    feat_dims: Sequence[int],
    seq_len: int,
    dim: int,
    n_out: int,
    n_heads: int = 4,
    seed: int = 0,
) -> TMDCParams:
    """
    按给定尺寸初始化全部参数

    参数：
      - feat_dims: (D_A, D_T, D_V)
      - seq_len: 统一后的序列长度 T
      - dim: 统一后的特征维 D
      - n_out: 预测头输出维（回归为 1，分类为类别数）
      - n_heads: 注意力头数
      - seed: 初始化种子

    说明：
      - 权重按 Glorot 均匀分布初始化，偏置为 0
      - 各子模块使用由 (seed, 序号) 派生的独立生成器，增删模块不会改变其他模块的初值
    """
    feat_dims = tuple(int(d) for d in feat_dims)
    if len(feat_dims) != 3 or min(feat_dims) < 1:
        raise ConfigError(f"feat_dims 必须是三个正整数，得到 {feat_dims}")
    if seq_len < 1 or dim < 1 or n_out < 1:
        raise ConfigError(f"seq_len/dim/n_out 必须为正: {seq_len}/{dim}/{n_out}")
    if dim % n_heads != 0:
        raise ConfigError(f"D={dim} 不能被 n_heads={n_heads} 整除")

    def rng(*keys):
        return make_rng(seed, *keys)

    spe, com_heads, all_resfc = {}, {}, {}
    for i, m in enumerate(MODALITIES):
        r = rng(1, i)
        spe[m] = SpecificParams(
            conv=Conv1DParams.init(feat_dims[i], dim, r),
            vib=VIBParams.init(dim, r),
            mha=MHAParams.init(dim, n_heads, r),
            resfc=LinearParams.init(dim, dim, r),
            head_s=LinearParams.init(dim, n_out, r),
            head_spe=LinearParams.init(dim, n_out, r),
        )
        r = rng(2, i)
        com_heads[m] = CommonHeads(LinearParams.init(dim, n_out, r), LinearParams.init(dim, n_out, r))
        all_resfc[m] = LinearParams.init(dim, dim, rng(3, i))

    r = rng(4)
    com = CommonParams(
        conv=Conv1DParams.init(max(feat_dims), dim, r),
        vib=VIBParams.init(dim, r),
        mha=MHAParams.init(dim, n_heads, r),
        resfc=LinearParams.init(dim, dim, r),
    )
    fusion = FusionParams(all_resfc, LinearParams.init(3 * dim, n_out, rng(5)))
    params = TMDCParams(spe, com, com_heads, fusion, feat_dims, int(seq_len))
    params.named_tensors()  # 写入点分名称
    return params


def count_parameters(params: TMDCParams, ablation: Optional[AblationConfig] = None) -> Dict[str, int]:
    """
    按参数组统计标量参数个数

    返回：
      - {'spe': n, 'com': n, 'imc': n, 'total': n, 'trainable': n}
        trainable 为给定消融配置下参与训练的个数
    """
    tensors = params.named_tensors()
    counts = {g: 0 for g in PARAM_GROUPS}
    for name, t in tensors.items():
        counts[param_group(name)] += t.size
    counts["total"] = sum(counts[g] for g in PARAM_GROUPS)
    counts["trainable"] = sum(tensors[n].size for n in params.active_names(ablation or FULL))
    return counts
