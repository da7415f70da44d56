"""
tmdc 模型模块

组装 MSD / MCD 去噪模块、第一阶段损失、第二阶段补全拓扑与消融变体
"""

from .ablation import ABLATION_FLAGS, FULL, STANDARD_VARIANTS, AblationConfig, apply_ablation
from .params import (
    PARAM_GROUPS,
    CommonHeads,
    CommonParams,
    FusionParams,
    ModelOptions,
    SpecificParams,
    TMDCParams,
    count_parameters,
    init_params,
    param_group,
)
from .stages import (
    LOSS_COLUMNS,
    BranchOutput,
    IMCOutput,
    StageOutputs,
    combine_imd_terms,
    imc_forward,
    imc_loss,
    imd_forward,
    imd_loss,
    imd_loss_terms,
    mcd_forward,
    msd_forward,
    pooled_embedding,
)
from .gradcheck import GRADCHECK_TOLERANCE, failed_checks, run_gradient_suite

__all__ = [
    'ABLATION_FLAGS',
    'FULL',
    'STANDARD_VARIANTS',
    'AblationConfig',
    'apply_ablation',
    'PARAM_GROUPS',
    'TMDCParams',
    'SpecificParams',
    'CommonParams',
    'CommonHeads',
    'FusionParams',
    'ModelOptions',
    'init_params',
    'count_parameters',
    'param_group',
    'LOSS_COLUMNS',
    'BranchOutput',
    'StageOutputs',
    'IMCOutput',
    'msd_forward',
    'mcd_forward',
    'imd_forward',
    'imd_loss_terms',
    'imd_loss',
    'combine_imd_terms',
    'imc_forward',
    'imc_loss',
    'pooled_embedding',
    'GRADCHECK_TOLERANCE',
    'run_gradient_suite',
    'failed_checks',
]
