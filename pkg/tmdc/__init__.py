"""
tmdc - 不完整多模态学习的两阶段模态去噪与补全引擎
"""

# 导入张量与自动微分
from .core import Tape, Tensor

# 导入异常类型
from .errors import ConfigError, ProtocolError, TMDCError

# 导入 accessor 注册：records.tmdc.grid / records.tmdc.seed_summary 等
from . import accessors  # noqa: F401

# 导入子模块
from . import data, model, nn, report, training

from .data import Dataset, DatasetSplits, gen_synthetic, load_splits
from .model import AblationConfig, ModelOptions, TMDCParams, init_params
from .training import TrainConfig, checkpoint_load, checkpoint_save, evaluate, run_scenario

# 版本信息
__version__ = "0.1.0"

# 导出主要类和函数
__all__ = [
    'Tensor',
    'Tape',
    'TMDCError',
    'ConfigError',
    'ProtocolError',
    'data',
    'model',
    'nn',
    'report',
    'training',
    'Dataset',
    'DatasetSplits',
    'gen_synthetic',
    'load_splits',
    'AblationConfig',
    'ModelOptions',
    'TMDCParams',
    'init_params',
    'TrainConfig',
    'run_scenario',
    'evaluate',
    'checkpoint_save',
    'checkpoint_load',
]
