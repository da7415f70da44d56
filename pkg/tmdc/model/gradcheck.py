"""
梯度检查套件

对每个基础层以及完整的两阶段损失做中心差分检查，
ε 与 dropout 掩码全部先抽样一次再冻结回放。
"""

import logging
from collections import OrderedDict
from typing import Callable, Dict, List

import numpy as np

from ..core import Tensor, mul, tsum
from ..data.dataset import MODALITIES, Batch
from ..nn.layers import conv1d_standardize, dropout, mha, predict_head, residual_fc, vib_forward
from ..nn.losses import cross_entropy_loss, mse_loss
from ..nn.params import Conv1DParams, LinearParams, MHAParams, VIBParams
from ..utils import NoiseSource, finite_diff_check_leaves, make_rng
from .params import ModelOptions, init_params
from .stages import imc_loss, imd_loss

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4


def _weighted_sum(out: Tensor, rng: np.random.Generator) -> Tensor:
    """把任意形状的输出投影为标量：Σ out ⊙ R"""
    return tsum(mul(out, Tensor(rng.standard_normal(out.shape))))


def _leaf(rng: np.random.Generator, shape, name: str) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


def _layer_cases(seed: int, batch: int, seq_len: int, dim: int) -> "OrderedDict[str, tuple]":
    rng = make_rng(seed, 11)
    cases = OrderedDict()

    conv = Conv1DParams.init(5, dim, rng)
    x = _leaf(rng, (batch, seq_len + 1, 5), "x")
    r = make_rng(seed, 12)
    cases["conv1d"] = (lambda: _weighted_sum(conv1d_standardize(x, conv, seq_len), make_rng(seed, 12)),
                       [conv.kernel, conv.bias, x])

    attn = MHAParams.init(dim, 4, rng)
    q = _leaf(rng, (batch, seq_len, dim), "query")
    kv = _leaf(rng, (batch, seq_len + 1, dim), "key_value")
    cases["mha"] = (lambda: _weighted_sum(mha(attn, q, kv), make_rng(seed, 13)),
                    [attn.query.weight, attn.key.weight, attn.value.weight, attn.output.weight,
                     attn.output.bias, q, kv])

    vib = VIBParams.init(dim, rng)
    xv = _leaf(rng, (batch, seq_len, dim), "x")
    eps = Tensor(r.standard_normal((batch, seq_len, dim)))

    def vib_fn():
        out = vib_forward(vib, xv, eps)
        return _weighted_sum(out.sample, make_rng(seed, 14)) + out.kl

    cases["vib"] = (vib_fn, [vib.mu_head.weight, vib.sigma_head.weight, vib.sigma_head.bias, xv])

    lin = LinearParams.init(dim, dim, rng)
    xr = _leaf(rng, (batch, seq_len, dim), "x")
    cases["residual_fc"] = (lambda: _weighted_sum(residual_fc(lin, xr), make_rng(seed, 15)), [lin.weight, lin.bias, xr])

    head = LinearParams.init(dim, 3, rng)
    xh = _leaf(rng, (batch, seq_len, dim), "x")
    cases["predict_head"] = (lambda: _weighted_sum(predict_head(head, xh), make_rng(seed, 16)),
                             [head.weight, head.bias, xh])

    xd = _leaf(rng, (batch, seq_len, dim), "x")
    mask = (r.random((batch, seq_len, dim)) >= 0.5).astype(np.float64)
    cases["dropout"] = (lambda: _weighted_sum(dropout(xd, 0.5, "train", mask), make_rng(seed, 17)), [xd])

    pred = _leaf(rng, (batch, 1), "pred")
    target = r.standard_normal(batch)
    cases["mse_loss"] = (lambda: mse_loss(pred, target), [pred])

    logits = _leaf(rng, (batch, 3), "logits")
    classes = r.integers(0, 3, size=batch)
    cases["cross_entropy_loss"] = (lambda: cross_entropy_loss(logits, classes), [logits])
    return cases


def _tiny_batch(seed: int, batch: int, seq_len: int, feat_dims, n_classes: int, pattern) -> Batch:
    rng = make_rng(seed, 21)
    inputs = {m: rng.standard_normal((batch, seq_len, d)) for m, d in zip(MODALITIES, feat_dims)}
    available = {m: m in pattern for m in MODALITIES}
    for m in MODALITIES:
        if not available[m]:
            inputs[m] = np.zeros_like(inputs[m])
    labels = rng.integers(0, n_classes, size=batch)
    return Batch(inputs, labels, available)


def _model_cases(seed: int, batch: int, seq_len: int, dim: int, dropout_rate: float) -> "OrderedDict[str, tuple]":
    feat_dims = (5, 6, 4)
    n_classes = 2
    params = init_params(feat_dims, seq_len, dim, n_classes, n_heads=4, seed=seed)
    options = ModelOptions(dropout=dropout_rate)
    leaves = list(params.named_tensors().values())
    cases = OrderedDict()

    def frozen(loss_fn: Callable[[NoiseSource], Tensor], key: int) -> Callable[[], Tensor]:
        source = NoiseSource.from_seed(seed, key)
        loss_fn(source)
        return lambda: loss_fn(source.frozen())

    full = _tiny_batch(seed, batch, seq_len, feat_dims, n_classes, MODALITIES)
    cases["imd_loss"] = (frozen(lambda n: imd_loss(params, full, "classification", 0.1, n, options), 31), leaves)
    for key, pattern in enumerate((("A", "T", "V"), ("T", "V"), ("A",))):
        b = _tiny_batch(seed, batch, seq_len, feat_dims, n_classes, pattern)
        label = "imc_loss[" + ",".join(pattern) + "]"
        cases[label] = (frozen(lambda n, b=b: imc_loss(params, b, "classification", n, options), 40 + key), leaves)
    return cases


def run_gradient_suite(
    seed: int = 0,
    batch: int = 2,
    seq_len: int = 3,
    dim: int = 8,
    h: float = 1e-5,
    n_coords: int = 4,
    dropout_rate: float = 0.1,
) -> Dict[str, float]:
    """
    运行全部梯度检查

    参数：
      - n_coords: 完整模型检查时每个参数张量抽查的坐标数（基础层检查全部坐标）

    返回：
      - {检查项: 最大相对误差}，按执行顺序排列
    """
    results: Dict[str, float] = OrderedDict()
    for name, (fn, leaves) in _layer_cases(seed, batch, seq_len, dim).items():
        results[name] = finite_diff_check_leaves(fn, leaves, h=h)
        logger.info("gradcheck %-22s max rel err %.3e", name, results[name])
    for name, (fn, leaves) in _model_cases(seed, batch, seq_len, dim, dropout_rate).items():
        results[name] = finite_diff_check_leaves(fn, leaves, h=h, n_coords=n_coords, seed=seed)
        logger.info("gradcheck %-22s max rel err %.3e", name, results[name])
    return results


def failed_checks(results: Dict[str, float], tolerance: float = GRADCHECK_TOLERANCE) -> List[str]:
    return [name for name, err in results.items() if not err < tolerance]
