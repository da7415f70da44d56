"""
TMDC 两阶段前向与损失

第一阶段（模态内去噪）：每个模态分别经过 MSD 与 MCD，
    conv1d 标准化 → VIB → MHA(X, X) + X → 残差全连接 → dropout → 预测头
第二阶段（模态间补全）：X_s 作为 query、X_c 作为 key/value 得到 X_All，
经残差全连接后按 A、T、V 固定槽位拼接；缺失槽位由可用模态之间的
交叉注意力补偿，最后由融合预测头输出 y_All。
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np

from ..core import Tensor, concat_lastdim, mean_over_time, zeros
from ..data.dataset import MODALITIES, Batch
from ..errors import ProtocolError, ShapeError
from ..nn.layers import (
    VIBOutput,
    conv1d_standardize,
    dropout,
    mha,
    predict_head,
    residual_fc,
    vib_forward,
)
from ..nn.losses import task_loss
from ..nn.params import Conv1DParams, LinearParams, MHAParams, VIBParams
from ..utils import NoiseSource
from .params import ModelOptions, TMDCParams

LOSS_KINDS = ("L_s", "L_c", "L_Spe", "L_Com", "KL_s", "KL_c")
LOSS_COLUMNS = tuple(f"{kind}_{m}" for kind in LOSS_KINDS for m in MODALITIES)

Inputs = Union[Batch, Dict[str, Union[Tensor, np.ndarray]]]


@dataclass
class BranchOutput:
    """
    一个去噪分支（MSD 或 MCD）在一个模态上的输出

    rep 为 VIB 样本（X_s 或 X_c），hat 为注意力与残差全连接之后的表示
    （X̂_Spe 或 X̂_Com），y_rep / y_hat 为两者各自的预测。
    """
    rep: Tensor
    hat: Tensor
    y_rep: Tensor
    y_hat: Tensor
    vib: VIBOutput

    @property
    def kl(self) -> Tensor:
        return self.vib.kl


@dataclass
class StageOutputs:
    """第一阶段输出；被消融掉的模块对应的字典为空"""
    specific: Dict[str, BranchOutput] = field(default_factory=dict)
    common: Dict[str, BranchOutput] = field(default_factory=dict)

    def x_s(self, m: str) -> Tensor:
        return self.specific[m].rep

    def x_c(self, m: str) -> Tensor:
        return self.common[m].rep


@dataclass
class IMCOutput:
    """第二阶段输出：融合预测、拼接后的表示 [.., T, 3D]、各槽位表示与诊断信息"""
    y_all: Tensor
    fused: Tensor
    slots: Dict[str, Tensor]
    diagnostics: dict


# ==================== 输入整理 ====================

def _to_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unpack(inputs: Inputs, available: Optional[Dict[str, bool]] = None):
    if isinstance(inputs, Batch):
        available = inputs.available if available is None else available
        inputs = inputs.inputs
    if available is None:
        available = {m: True for m in MODALITIES}
    return {m: inputs[m] for m in MODALITIES if available.get(m, False)}, dict(available)


def _pad_features(x: Tensor, width: int) -> Tensor:
    """特征维右侧补零到 width，供共享卷积使用"""
    if x.shape[-1] > width:
        raise ShapeError(f"特征维 {x.shape[-1]} 超过共享卷积输入维 {width}")
    if x.shape[-1] == width:
        return x
    return concat_lastdim([x, zeros((*x.shape[:-1], width - x.shape[-1]))])


# ==================== 去噪分支 ====================

def _encode(conv: Conv1DParams, vib: VIBParams, x: Tensor, seq_len: int,
            noise: NoiseSource, options: ModelOptions) -> VIBOutput:
    h = conv1d_standardize(x, conv, seq_len)
    return vib_forward(vib, h, noise.eps(h.shape), options.sigma_mode)


def _refine(attn: MHAParams, resfc: LinearParams, rep: Tensor,
            noise: NoiseSource, options: ModelOptions) -> Tensor:
    # MHA(X, X) + X，再经残差全连接与 dropout
    x = mha(attn, rep, rep) + rep
    return _dropout(residual_fc(resfc, x), noise, options)


def _dropout(x: Tensor, noise: NoiseSource, options: ModelOptions) -> Tensor:
    return dropout(x, options.dropout, noise.mode, noise.mask(x.shape, options.dropout))


def msd_forward(params: TMDCParams, x_raw, modality: str, noise: NoiseSource,
                options: Optional[ModelOptions] = None) -> BranchOutput:
    """
    模态特定去噪（每个模态独立的参数）

    参数：
      - x_raw: [L_m, D_m] 或 [B, L_m, D_m]
      - noise: ε 与 dropout 掩码的来源（eval 模式下 ε = 0、dropout 关闭）
    """
    options = options or ModelOptions()
    p = params.spe[modality]
    v = _encode(p.conv, p.vib, _to_tensor(x_raw), params.seq_len, noise, options)
    hat = _refine(p.mha, p.resfc, v.sample, noise, options)
    return BranchOutput(v.sample, hat, predict_head(p.head_s, v.sample), predict_head(p.head_spe, hat), v)


def mcd_forward(params: TMDCParams, x_raw, modality: str, noise: NoiseSource,
                options: Optional[ModelOptions] = None) -> BranchOutput:
    """
    模态公共去噪：conv/VIB/MHA/残差全连接由三个模态共用，预测头按模态独立
    """
    options = options or ModelOptions()
    com = params.com
    heads = params.com_heads[modality]
    x = _pad_features(_to_tensor(x_raw), com.conv.in_dim)
    v = _encode(com.conv, com.vib, x, params.seq_len, noise, options)
    hat = _refine(com.mha, com.resfc, v.sample, noise, options)
    return BranchOutput(v.sample, hat, predict_head(heads.head_c, v.sample), predict_head(heads.head_com, hat), v)


def imd_forward(params: TMDCParams, inputs: Inputs, noise: NoiseSource,
                options: Optional[ModelOptions] = None) -> StageOutputs:
    """对每个可用模态依次运行 MSD 与 MCD（按消融配置跳过被去掉的模块）"""
    options = options or ModelOptions()
    present, _ = _unpack(inputs)
    out = StageOutputs()
    for m, x in present.items():
        x = _to_tensor(x)
        if options.ablation.use_msd:
            out.specific[m] = msd_forward(params, x, m, noise, options)
        if options.ablation.use_mcd:
            out.common[m] = mcd_forward(params, x, m, noise, options)
    return out


def imd_loss_terms(params: TMDCParams, batch: Batch, task: str, noise: NoiseSource,
                   options: Optional[ModelOptions] = None) -> "OrderedDict[str, Tensor]":
    """
    第一阶段的各项损失，按 LOSS_COLUMNS 顺序排列

    说明：
      - 每个模态 4 个任务损失（y_s、y_c、y_Spe、y_Com）与 2 个 KL 项
      - 被消融掉的模块不产生对应的项
      - batch 必须三模态齐全
    """
    options = options or ModelOptions()
    missing = [m for m in MODALITIES if not batch.available[m]]
    if missing:
        raise ProtocolError(f"第一阶段只在完整数据上训练，批次缺少模态 {missing}")
    out = imd_forward(params, batch, noise, options)
    labels = batch.labels
    found = {}
    for m, br in out.specific.items():
        found[f"L_s_{m}"] = task_loss(br.y_rep, labels, task)
        found[f"L_Spe_{m}"] = task_loss(br.y_hat, labels, task)
        found[f"KL_s_{m}"] = br.kl
    for m, br in out.common.items():
        found[f"L_c_{m}"] = task_loss(br.y_rep, labels, task)
        found[f"L_Com_{m}"] = task_loss(br.y_hat, labels, task)
        found[f"KL_c_{m}"] = br.kl
    return OrderedDict((name, found[name]) for name in LOSS_COLUMNS if name in found)


def combine_imd_terms(terms: Dict[str, Tensor], beta: float) -> Tensor:
    """Σ 任务损失 + β·Σ KL"""
    task_terms = [t for name, t in terms.items() if not name.startswith("KL_")]
    kl_terms = [t for name, t in terms.items() if name.startswith("KL_")]
    total = task_terms[0]
    for t in task_terms[1:]:
        total = total + t
    for t in kl_terms:
        total = total + t * beta
    return total


def imd_loss(params: TMDCParams, batch: Batch, task: str, beta: float, noise: NoiseSource,
             options: Optional[ModelOptions] = None) -> Tensor:
    return combine_imd_terms(imd_loss_terms(params, batch, task, noise, options), beta)


# ==================== 第二阶段 ====================

def _attention_of(params: TMDCParams, m: str, options: ModelOptions) -> MHAParams:
    return params.spe[m].mha if options.ablation.use_msd else params.com.mha


def imc_forward(params: TMDCParams, inputs: Inputs, noise: NoiseSource,
                options: Optional[ModelOptions] = None,
                available: Optional[Dict[str, bool]] = None) -> IMCOutput:
    """
    模态间补全前向

    参数：
      - inputs: Batch 或 {模态: [B, L_m, D_m]}；缺失模态的输入从不读取
      - available: 可用标记，缺省取 Batch.available（字典输入时视为全部可用）

    说明：
      - 3 个可用：拼接三个 X̂_All，不做补偿
      - 2 个可用 (m1, m2)：X_{m1→m2} = 残差全连接(MHA(query=X_c^{m1}, kv=X_s^{m2}))，
        与对称项相加后放入缺失模态的槽位
      - 1 个可用 (m)：X_{m→m} 同时填入另外两个槽位
      - 交叉注意力与其残差全连接默认使用 key/value 所属模态的参数（cross_owner）
    """
    options = options or ModelOptions()
    ab = options.ablation
    present, available = _unpack(inputs, available)
    order = [m for m in MODALITIES if m in present]
    if not order:
        raise ProtocolError("至少需要一个可用模态")

    x_s, x_c = {}, {}
    for m in order:
        x = _to_tensor(present[m])
        if ab.use_msd:
            x_s[m] = _encode(params.spe[m].conv, params.spe[m].vib, x, params.seq_len, noise, options).sample
        if ab.use_mcd:
            x_c[m] = _encode(params.com.conv, params.com.vib, _pad_features(x, params.com.conv.in_dim),
                             params.seq_len, noise, options).sample
        x_s.setdefault(m, x_c.get(m))
        x_c.setdefault(m, x_s[m])

    slots: Dict[str, Tensor] = {}
    for m in order:
        x_all = mha(_attention_of(params, m, options), x_s[m], x_c[m])
        slots[m] = _dropout(residual_fc(params.fusion.all_resfc[m], x_all), noise, options)

    def cross(query_m: str, kv_m: str) -> Tensor:
        owner = kv_m if options.cross_owner == "kv-owner" else query_m
        x = mha(_attention_of(params, owner, options), x_c[query_m], x_s[kv_m])
        return _dropout(residual_fc(params.fusion.all_resfc[owner], x), noise, options)

    missing = [m for m in MODALITIES if m not in present]
    compensated: Dict[str, str] = {}
    if missing and ab.use_imc_complement:
        if len(order) == 2:
            m1, m2 = order
            slots[missing[0]] = cross(m1, m2) + cross(m2, m1)
            compensated[missing[0]] = f"{m1}->{m2}+{m2}->{m1}"
        else:
            (m,) = order
            repeated = cross(m, m)
            for k in missing:
                slots[k] = repeated
                compensated[k] = f"{m}->{m}"

    ref = slots[order[0]]
    for k in missing:
        if k not in slots:
            slots[k] = zeros(ref.shape)

    fused = concat_lastdim([slots[m] for m in MODALITIES])
    y_all = predict_head(params.fusion.fuse_head, fused)
    diagnostics = {
        "case": len(order),
        "available": order,
        "missing": missing,
        "compensated": compensated,
    }
    return IMCOutput(y_all, fused, slots, diagnostics)


def imc_loss(params: TMDCParams, batch: Batch, task: str, noise: NoiseSource,
             options: Optional[ModelOptions] = None) -> Tensor:
    """第二阶段只优化融合预测的任务损失"""
    return task_loss(imc_forward(params, batch, noise, options).y_all, batch.labels, task)


def pooled_embedding(output: IMCOutput) -> Tensor:
    """融合表示沿序列维取均值：[.., T, 3D] -> [.., 3D]"""
    return mean_over_time(output.fused)


