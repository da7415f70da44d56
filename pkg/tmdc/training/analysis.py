"""
分析导出：损失曲线表、表示余弦相似度矩阵、融合表示

全部以 CSV / TMDF 输出，绘图交给外部工具。
"""

import logging
import warnings
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from ..data.dataset import MODALITIES, Dataset, batch_iter
from ..data.tmdf import write_tensor
from ..errors import ProtocolError
from ..model.params import ModelOptions, TMDCParams
from ..model.stages import LOSS_COLUMNS, imc_forward, imd_forward, pooled_embedding
from ..utils import NoiseSource

logger = logging.getLogger(__name__)

COSINE_LABELS = tuple(f"S_{m}" for m in MODALITIES) + tuple(f"C_{m}" for m in MODALITIES)
PathLike = Union[str, Path]


def write_loss_table(history: pd.DataFrame, path: PathLike) -> pd.DataFrame:
    """
    写出第一阶段损失表：epoch + 18 列（L_s_A … KL_c_V）

    被消融掉的模块对应的列为空。
    """
    table = history.reindex(columns=["epoch", *LOSS_COLUMNS])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False)
    return table


def _pairwise_cosine(vectors: np.ndarray):
    """vectors: [N, 6, D] -> (逐样本余弦 [N, 6, 6], 零范数对的个数)"""
    norms = np.linalg.norm(vectors, axis=-1)
    dots = np.einsum("nid,njd->nij", vectors, vectors)
    denom = norms[:, :, None] * norms[:, None, :]
    zero = denom == 0
    sims = np.where(zero, 0.0, dots / np.where(zero, 1.0, denom))
    return np.clip(sims, -1.0, 1.0), int(zero.sum())


def cosine_analysis(
    params: TMDCParams,
    dataset: Dataset,
    options: Optional[ModelOptions] = None,
    batch_size: int = 256,
) -> pd.DataFrame:
    """
    S_m = X̂_Spe^m、C_m = X̂_Com^m 之间的平均余弦相似度（6×6）

    说明：
      - eval 模式；每个表示先沿序列维取均值，再逐样本计算余弦，最后对样本取平均
      - 缺失模态按其（已置零的）输入照常计算，矩阵始终完整
      - 出现零范数向量时该对相似度记为 0，并给出 UserWarning
      - 需要 MSD 与 MCD 同时存在
    """
    options = options or ModelOptions()
    if not (options.ablation.use_msd and options.ablation.use_mcd):
        raise ProtocolError("余弦相似度分析需要同时保留 MSD 与 MCD")
    if len(dataset) == 0:
        raise ProtocolError("评估集为空")
    noise = NoiseSource.evaluation()
    total = np.zeros((6, 6))
    zero_pairs = 0
    for batch in batch_iter(dataset, batch_size, shuffle_seed=None):
        out = imd_forward(params, batch.inputs, noise, options)
        reps = [out.specific[m].hat for m in MODALITIES] + [out.common[m].hat for m in MODALITIES]
        pooled = np.stack([r.data.mean(axis=-2) for r in reps], axis=1)
        sims, zeros = _pairwise_cosine(pooled)
        total += sims.sum(axis=0)
        zero_pairs += zeros
    matrix = total / len(dataset)
    np.fill_diagonal(matrix, 1.0)
    matrix = (matrix + matrix.T) / 2.0
    if zero_pairs:
        warnings.warn(f"余弦分析中有 {zero_pairs} 个向量对出现零范数，相似度按 0 记", UserWarning)
    df = pd.DataFrame(matrix, index=list(COSINE_LABELS), columns=list(COSINE_LABELS))
    df.attrs["zero_norm_pairs"] = zero_pairs
    return df


def write_cosine_matrix(matrix: pd.DataFrame, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix.to_csv(path, index_label="")


def export_embeddings(
    params: TMDCParams,
    dataset: Dataset,
    path: Optional[PathLike] = None,
    options: Optional[ModelOptions] = None,
    batch_size: int = 256,
) -> np.ndarray:
    """
    导出融合表示（沿序列维取均值）[N, 3D]，给出 path 时写为 TMDF
    """
    noise = NoiseSource.evaluation()
    chunks = [pooled_embedding(imc_forward(params, batch, noise, options)).numpy()
              for batch in batch_iter(dataset, batch_size, shuffle_seed=None)]
    emb = np.concatenate(chunks, axis=0)
    if path is not None:
        write_tensor(path, emb)
        logger.info("wrote %s embeddings %s to %s", dataset.split, emb.shape, path)
    return emb
