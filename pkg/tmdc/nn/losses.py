"""
任务损失：回归用 MSE，分类用交叉熵
"""

import numpy as np

from ..core import Tensor, log_softmax_lastdim, mul, tmean, tsum
from ..errors import ConfigError, ShapeError

TASKS = ("regression", "classification")


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """pred: [B, 1]，target: [B]"""
    target = np.asarray(target, dtype=np.float64).reshape(-1, 1)
    if pred.shape != target.shape:
        raise ShapeError(f"回归预测形状 {list(pred.shape)} 与标签 {list(target.shape)} 不一致")
    diff = pred - Tensor(target)
    return tmean(mul(diff, diff))


def cross_entropy_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    """softmax + 负对数似然，logits: [B, C]，target: [B] 类别下标"""
    target = np.asarray(target).astype(np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != target.shape[0]:
        raise ShapeError(f"分类 logits 形状 {list(logits.shape)} 与标签数 {target.shape[0]} 不一致")
    n_classes = logits.shape[1]
    if target.min() < 0 or target.max() >= n_classes:
        raise ShapeError(f"类别下标超出 [0, {n_classes})")
    onehot = np.eye(n_classes)[target]
    picked = tsum(mul(log_softmax_lastdim(logits), Tensor(onehot)), axis=-1)
    return -tmean(picked)


def task_loss(pred: Tensor, target: np.ndarray, task: str) -> Tensor:
    if task == "regression":
        return mse_loss(pred, target)
    if task == "classification":
        return cross_entropy_loss(pred, target)
    raise ConfigError(f"task 必须是 {TASKS} 之一，得到 {task!r}")
