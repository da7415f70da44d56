"""
数据集清单（manifest）读写

每个划分一个 UTF-8 JSON 文档：
    {
      "format": "tmdc-manifest", "version": 1,
      "task": "classification", "n_classes": 2, "split": "train",
      "records": [{"id", "audio_path", "text_path", "video_path", "label"}, ...]
    }
路径相对于清单所在目录，特征文件为 TMDF。
"""

import json
import logging
import warnings
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from ..errors import ManifestError, TMDFError
from ..nn.losses import TASKS
from .dataset import MODALITIES, MODALITY_NAMES, Dataset, DatasetSplits
from .tmdf import read_array, write_tensor

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "tmdc-manifest"
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")
PathLike = Union[str, Path]


def manifest_path(root: PathLike, split: str) -> Path:
    return Path(root) / f"manifest_{split}.json"


def _feature_key(m: str) -> str:
    return f"{MODALITY_NAMES[m]}_path"


def write_dataset(dataset: Dataset, root: PathLike, split: str = None) -> Path:
    """
    把一个划分写成 TMDF 特征文件 + 清单

    参数：
      - dataset: 要写出的划分
      - root: 数据根目录
      - split: 划分名，默认取 dataset.split

    返回：
      - 清单文件路径

    说明：
      - 特征文件放在 features/{split}/{id}_{A|T|V}.tmdf
      - 清单内容不含时间戳，同样的数据总是得到逐字节相同的清单
    """
    root = Path(root)
    split = split or dataset.split
    records = []
    for i, sample_id in enumerate(dataset.ids):
        record = {"id": sample_id}
        for m in MODALITIES:
            rel = Path("features") / split / f"{sample_id}_{m}.tmdf"
            write_tensor(root / rel, dataset.features[m][i])
            record[_feature_key(m)] = rel.as_posix()
        label = dataset.labels[i]
        record["label"] = int(label) if dataset.task == "classification" else float(label)
        records.append(record)

    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "task": dataset.task,
        "n_classes": int(dataset.n_classes),
        "split": split,
        "records": records,
    }
    path = manifest_path(root, split)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    logger.info("wrote %d records to %s", len(records), path)
    return path


def write_splits(splits: DatasetSplits, root: PathLike) -> Dict[str, Path]:
    return {name: write_dataset(ds, root, name) for name, ds in splits.items()}


def _validate_header(doc: dict, path: Path) -> None:
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: 清单顶层必须是 JSON 对象")
    if doc.get("format", MANIFEST_FORMAT) != MANIFEST_FORMAT:
        raise ManifestError(f"{path}: 未知的清单格式 {doc.get('format')!r}")
    if doc.get("version", MANIFEST_VERSION) != MANIFEST_VERSION:
        raise ManifestError(f"{path}: 不支持的清单版本 {doc.get('version')!r}")
    for key in ("task", "n_classes", "split", "records"):
        if key not in doc:
            raise ManifestError(f"{path}: 缺少字段 {key!r}")
    if doc["task"] not in TASKS:
        raise ManifestError(f"{path}: task 必须是 {TASKS} 之一，得到 {doc['task']!r}")
    if not isinstance(doc["records"], list) or not doc["records"]:
        raise ManifestError(f"{path}: records 必须是非空列表")


def _pad_to_common_length(mats: List[np.ndarray], modality: str, path: Path) -> np.ndarray:
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise ManifestError(f"{path}: 模态 {modality} 的特征维不一致 {sorted(dims)}")
    lengths = [m.shape[0] for m in mats]
    longest = max(lengths)
    if min(lengths) != longest:
        warnings.warn(
            f"{path}: 模态 {modality} 的序列长度不一致 ({min(lengths)}..{longest})，已在末尾补零对齐",
            UserWarning,
        )
        mats = [np.pad(m, ((0, longest - m.shape[0]), (0, 0))) for m in mats]
    return np.stack(mats)


def load_dataset(path: PathLike) -> Dataset:
    """
    读取一个清单及其引用的全部特征文件

    说明：
      - 引用的文件必须全部存在，否则抛出 ManifestError
      - 同一模态序列长度不一致时在末尾补零，并给出 UserWarning
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"清单不存在: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: JSON 解析失败: {exc}") from exc
    _validate_header(doc, path)

    task, n_classes = doc["task"], int(doc["n_classes"])
    base = path.parent
    ids, labels = [], []
    mats: Dict[str, List[np.ndarray]] = {m: [] for m in MODALITIES}
    for k, record in enumerate(doc["records"]):
        missing = [key for key in ("id", "label", *map(_feature_key, MODALITIES)) if key not in record]
        if missing:
            raise ManifestError(f"{path}: 第 {k} 条记录缺少字段 {missing}")
        for m in MODALITIES:
            file = base / record[_feature_key(m)]
            if not file.exists():
                raise ManifestError(f"{path}: 记录 {record['id']!r} 引用的文件不存在: {file}")
            try:
                arr = read_array(file)
            except TMDFError as exc:
                raise ManifestError(f"{file}: {exc}") from exc
            if arr.ndim != 2:
                raise ManifestError(f"{file}: 特征必须是 [L, D] 矩阵，得到 {arr.shape}")
            mats[m].append(arr)
        label = record["label"]
        if task == "classification":
            if not isinstance(label, int) or not 0 <= label < n_classes:
                raise ManifestError(f"{path}: 记录 {record['id']!r} 的类别 {label!r} 超出 [0, {n_classes})")
        elif not np.isfinite(float(label)):
            raise ManifestError(f"{path}: 记录 {record['id']!r} 的标签不是有限数")
        ids.append(str(record["id"]))
        labels.append(label)

    features = {m: _pad_to_common_length(mats[m], m, path) for m in MODALITIES}
    label_arr = np.asarray(labels, dtype=np.int64 if task == "classification" else np.float64)
    return Dataset(features, label_arr, task, n_classes, ids, split=doc["split"])


def load_splits(root: PathLike) -> DatasetSplits:
    """读取 root 下 train/val/test 三个清单"""
    return DatasetSplits(**{s: load_dataset(manifest_path(root, s)) for s in SPLITS})
