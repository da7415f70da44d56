"""
tmdc 网络层模块

提供卷积标准化、多头注意力、VIB、残差全连接、预测头、dropout 与任务损失
"""

from .params import (
    Conv1DParams,
    LinearParams,
    MHAParams,
    VIBParams,
    glorot_uniform,
    named_tensors,
)
from .layers import (
    SIGMA_MODES,
    VIBOutput,
    affine,
    conv1d_standardize,
    dropout,
    gaussian_kl,
    mha,
    predict_head,
    residual_fc,
    vib_forward,
)
from .losses import TASKS, cross_entropy_loss, mse_loss, task_loss

__all__ = [
    'Conv1DParams',
    'LinearParams',
    'MHAParams',
    'VIBParams',
    'VIBOutput',
    'SIGMA_MODES',
    'TASKS',
    'glorot_uniform',
    'named_tensors',
    'affine',
    'conv1d_standardize',
    'mha',
    'vib_forward',
    'gaussian_kl',
    'residual_fc',
    'predict_head',
    'dropout',
    'mse_loss',
    'cross_entropy_loss',
    'task_loss',
]
