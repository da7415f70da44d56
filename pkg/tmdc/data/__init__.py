"""
tmdc 数据模块

提供 TMDF 张量文件、数据集清单、合成数据生成、缺失模式与噪声注入
"""

from .tmdf import decode_array, encode_tensor, read_array, read_tensor, write_tensor
from .dataset import (
    MODALITIES,
    Batch,
    Dataset,
    DatasetSplits,
    ModalityBundle,
    batch_iter,
)
from .manifest import load_dataset, load_splits, manifest_path, write_dataset, write_splits
from .synth import SynthSpec, gen_synthetic
from .corrupt import (
    NOISE_GRID,
    FULL_PATTERN,
    STANDARD_PATTERNS,
    Normalizer,
    Scenario,
    add_gaussian_noise,
    apply_missing,
    fit_normalizer,
    parse_pattern,
    pattern_label,
    prepare_scenario,
)
from .convert import convert_table

__all__ = [
    'MODALITIES',
    'FULL_PATTERN',
    'STANDARD_PATTERNS',
    'NOISE_GRID',
    'encode_tensor',
    'decode_array',
    'write_tensor',
    'read_tensor',
    'read_array',
    'ModalityBundle',
    'Batch',
    'Dataset',
    'DatasetSplits',
    'batch_iter',
    'write_dataset',
    'write_splits',
    'load_dataset',
    'load_splits',
    'manifest_path',
    'SynthSpec',
    'gen_synthetic',
    'Scenario',
    'parse_pattern',
    'pattern_label',
    'apply_missing',
    'add_gaussian_noise',
    'Normalizer',
    'fit_normalizer',
    'prepare_scenario',
    'convert_table',
]
