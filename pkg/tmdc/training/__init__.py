"""
tmdc 训练模块

提供 Adam 优化器、两阶段训练流程、评估指标、检查点、分析导出与实验网格
"""

from .config import PROFILES, TrainConfig
from .adam import AdamState, adam_step, collect_grads
from .metrics import MetricReport, evaluate, metrics_from_confusion, predict, report_from_predictions
from .checkpoint import Checkpoint, checkpoint_load, checkpoint_save, read_index
from .loops import (
    IMCResult,
    IMDResult,
    ScenarioResult,
    build_params,
    resume_imc,
    resume_imd,
    run_scenario,
    save_imc_checkpoint,
    save_imd_checkpoint,
    train_imc,
    train_imd,
)
from .analysis import COSINE_LABELS, cosine_analysis, export_embeddings, write_cosine_matrix, write_loss_table
from .experiments import BETA_GRID, ablation_grid, beta_sweep, noise_grid, run_grid

__all__ = [
    'PROFILES',
    'TrainConfig',
    'AdamState',
    'adam_step',
    'collect_grads',
    'MetricReport',
    'metrics_from_confusion',
    'report_from_predictions',
    'predict',
    'evaluate',
    'Checkpoint',
    'checkpoint_save',
    'checkpoint_load',
    'read_index',
    'IMDResult',
    'IMCResult',
    'ScenarioResult',
    'build_params',
    'train_imd',
    'train_imc',
    'resume_imd',
    'resume_imc',
    'save_imd_checkpoint',
    'save_imc_checkpoint',
    'run_scenario',
    'COSINE_LABELS',
    'cosine_analysis',
    'write_cosine_matrix',
    'write_loss_table',
    'export_embeddings',
    'BETA_GRID',
    'run_grid',
    'ablation_grid',
    'noise_grid',
    'beta_sweep',
]
