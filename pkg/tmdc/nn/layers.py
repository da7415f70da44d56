"""
TMDC 的参数化基础层

一维卷积标准化、多头注意力、VIB 编码器、残差全连接、预测头与 dropout
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import (
    Tensor,
    concat_lastdim,
    log,
    matmul,
    mean_over_time,
    mul,
    pad_time,
    reshape,
    scale,
    softmax_lastdim,
    softplus,
    swapaxes,
    tmean,
    tsum,
)
from ..core import exp as texp
from ..errors import ConfigError, DomainError, ProtocolError, ShapeError
from .params import Conv1DParams, LinearParams, MHAParams, VIBParams

SIGMA_FLOOR = 1e-6
SIGMA_MODES = ("softplus", "exp-half-logvar")


def affine(x: Tensor, p: LinearParams) -> Tensor:
    """x·W + b，x 可以是一维向量或带任意前导维"""
    if x.shape[-1] != p.in_dim:
        raise ShapeError(f"仿射层输入维度 {x.shape[-1]} 与权重 {list(p.weight.shape)} 不匹配")
    if x.ndim == 1:
        return reshape(matmul(reshape(x, (1, p.in_dim)), p.weight), (p.out_dim,)) + p.bias
    return matmul(x, p.weight) + p.bias


# ==================== 卷积标准化 ====================

def conv1d_standardize(x: Tensor, p: Conv1DParams, target_len: int) -> Tensor:
    """
    宽度 3、步长 1、两端补零的卷积，把 [.., L_m, D_m] 映射为 [.., T, D]

    先在原长度上卷积（长度不变），再统一到 target_len：
    L_m > T 时截断尾部，L_m < T 时在末尾补零行。
    """
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError(f"conv1d 输入必须是 [.., L, D]，得到 {list(x.shape)}")
    if x.shape[-1] != p.in_dim:
        raise ShapeError(f"conv1d 输入特征维 {x.shape[-1]} 与卷积核 {list(p.kernel.shape)} 不匹配")
    length = x.shape[-2]
    padded = pad_time(x, 1, 1)
    windows = concat_lastdim([
        padded[..., 0:length, :],
        padded[..., 1:length + 1, :],
        padded[..., 2:length + 2, :],
    ])
    kernel = reshape(p.kernel, (3 * p.in_dim, p.out_dim))
    out = matmul(windows, kernel) + p.bias
    if length > target_len:
        out = out[..., :target_len, :]
    elif length < target_len:
        out = pad_time(out, 0, target_len - length)
    return out


# ==================== 多头注意力 ====================

def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    # [.., T, D] -> [.., H, T, hd]
    *lead, t, d = x.shape
    return swapaxes(reshape(x, (*lead, t, n_heads, d // n_heads)), -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    # [.., H, T, hd] -> [.., T, D]
    *lead, h, t, hd = x.shape
    return reshape(swapaxes(x, -3, -2), (*lead, t, h * hd))


def mha(params: MHAParams, query: Tensor, key_value: Tensor) -> Tensor:
    """
    缩放点积多头注意力

    key 与 value 取自同一个操作数 key_value；残差由调用方自行添加。
    """
    dim = params.dim
    if query.shape[-1] != dim or key_value.shape[-1] != dim:
        raise ShapeError(
            f"mha 特征维必须为 {dim}: query {list(query.shape)}, key_value {list(key_value.shape)}"
        )
    h = params.n_heads
    q = _split_heads(affine(query, params.query), h)
    k = _split_heads(affine(key_value, params.key), h)
    v = _split_heads(affine(key_value, params.value), h)
    scores = scale(matmul(q, swapaxes(k, -1, -2)), 1.0 / math.sqrt(params.head_dim))
    context = matmul(softmax_lastdim(scores), v)
    return affine(_merge_heads(context), params.output)


# ==================== VIB ====================

@dataclass
class VIBOutput:
    """VIB 编码结果：mu、sigma（严格为正）、重参数化样本与 KL 标量"""
    mu: Tensor
    sigma: Tensor
    sample: Tensor
    kl: Tensor


def gaussian_kl(mu: Tensor, sigma: Tensor) -> Tensor:
    """
    KL(N(mu, sigma²) || N(0, I))

    每个位置按特征维求和 ½Σ(mu² + sigma² − 2 ln sigma − 1)，
    再对其余所有维（序列、批）取均值。
    """
    per_elem = scale(mul(mu, mu) + mul(sigma, sigma) - scale(log(sigma), 2.0) - 1.0, 0.5)
    return tmean(tsum(per_elem, axis=-1))


def vib_forward(p: VIBParams, x: Tensor, eps: Tensor, sigma_mode: str = "softplus") -> VIBOutput:
    """
    变分信息瓶颈前向

    参数：
      - p: VIB 参数
      - x: [.., T, D]
      - eps: 与输出同形状的冻结标准正态噪声（eval 模式为全零）
      - sigma_mode: 'softplus'（sigma = softplus(xW2+b2) + 1e-6）或
                    'exp-half-logvar'（sigma = exp(½(xW2+b2))）
    """
    mu = affine(x, p.mu_head)
    raw = affine(x, p.sigma_head)
    if sigma_mode == "softplus":
        sigma = softplus(raw) + SIGMA_FLOOR
    elif sigma_mode == "exp-half-logvar":
        sigma = texp(scale(raw, 0.5))
    else:
        raise ConfigError(f"sigma_mode 必须是 {SIGMA_MODES} 之一，得到 {sigma_mode!r}")
    if eps.shape != mu.shape:
        raise ShapeError(f"eps 形状 {list(eps.shape)} 与 mu {list(mu.shape)} 不一致")
    sample = mu + mul(eps, sigma)
    return VIBOutput(mu=mu, sigma=sigma, sample=sample, kl=gaussian_kl(mu, sigma))


# ==================== 全连接 ====================

def residual_fc(p: LinearParams, x: Tensor) -> Tensor:
    """x + (x·W + b)，不带非线性"""
    return x + affine(x, p)


def predict_head(p: LinearParams, x: Tensor) -> Tensor:
    """沿序列维取均值后做仿射：[.., T, D] -> [.., C]"""
    return affine(mean_over_time(x), p)


def dropout(x: Tensor, rate: float, mode: str = "train", mask: Optional[np.ndarray] = None) -> Tensor:
    """
    反向缩放的 dropout

    train 模式输出 x ⊙ mask / (1 − rate)，mask 为冻结的伯努利(1 − rate) 抽样；
    eval 模式或 rate = 0 时原样返回。
    """
    if not 0 <= rate < 1:
        raise DomainError(f"dropout 比例必须在 [0, 1) 内，得到 {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode 必须是 'train' 或 'eval'，得到 {mode!r}")
    if mode == "eval" or rate == 0:
        return x
    if mask is None:
        raise ProtocolError("train 模式的 dropout 需要冻结掩码")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.shape:
        raise ShapeError(f"dropout 掩码形状 {mask.shape} 与输入 {x.shape} 不一致")
    return mul(x, Tensor(mask / (1.0 - rate)))
