"""
外部特征矩阵 → TMDF 数据集

索引表（CSV 或 xlsx）每行一个样本，列：
    id, split, label, audio, text, video
audio/text/video 为特征矩阵文件路径（相对索引表所在目录），
支持 .npy 与无表头的 .csv（每行一个时间步）。
"""

import logging
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd

from ..errors import ManifestError
from ..nn.losses import TASKS
from .dataset import MODALITIES, MODALITY_NAMES, Dataset
from .manifest import SPLITS, write_dataset

logger = logging.getLogger(__name__)

INDEX_COLUMNS = ("id", "split", "label", "audio", "text", "video")
PathLike = Union[str, Path]


def read_matrix(path: PathLike) -> np.ndarray:
    """读取单个 [L, D] 特征矩阵"""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"特征文件不存在: {path}")
    suffix = path.suffix.lower()
    if suffix == ".npy":
        arr = np.load(path, allow_pickle=False)
    elif suffix == ".csv":
        arr = pd.read_csv(path, header=None).to_numpy(dtype=np.float64)
    else:
        raise ManifestError(f"不支持的特征文件类型 {suffix!r}: {path}")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ManifestError(f"{path}: 特征必须是 [L, D] 矩阵，得到 {arr.shape}")
    return arr


def read_index(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"索引表不存在: {path}")
    if path.suffix.lower() in (".xlsx", ".xlsm"):
        df = pd.read_excel(path, engine="openpyxl")
    else:
        df = pd.read_csv(path)
    df.columns = [str(c).strip().lower() for c in df.columns]
    missing = [c for c in INDEX_COLUMNS if c not in df.columns]
    if missing:
        raise ManifestError(f"{path}: 索引表缺少列 {missing}")
    unknown = sorted(set(df["split"]) - set(SPLITS))
    if unknown:
        raise ManifestError(f"{path}: 未知的划分名 {unknown}")
    return df


def _stack(mats, modality: str) -> np.ndarray:
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise ManifestError(f"模态 {modality} 的特征维不一致 {sorted(dims)}")
    longest = max(m.shape[0] for m in mats)
    return np.stack([np.pad(m, ((0, longest - m.shape[0]), (0, 0))) for m in mats])


def convert_table(index_path: PathLike, out_root: PathLike, task: str, n_classes: int = 1) -> Dict[str, Path]:
    """
    按索引表把外部特征矩阵转换为 TMDF 数据集

    返回：
      - {划分名: 清单路径}
    """
    if task not in TASKS:
        raise ManifestError(f"task 必须是 {TASKS} 之一，得到 {task!r}")
    index_path = Path(index_path)
    df = read_index(index_path)
    base = index_path.parent
    written = {}
    for split, group in df.groupby("split", sort=False):
        mats = {m: [read_matrix(base / str(p)) for p in group[MODALITY_NAMES[m]]] for m in MODALITIES}
        features = {m: _stack(mats[m], m) for m in MODALITIES}
        dtype = np.int64 if task == "classification" else np.float64
        labels = group["label"].to_numpy(dtype=dtype)
        dataset = Dataset(features, labels, task, n_classes, [str(i) for i in group["id"]], split=split)
        written[split] = write_dataset(dataset, out_root, split)
        logger.info("converted %d %s samples", len(dataset), split)
    return written
