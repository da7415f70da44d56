"""
多模态样本、数据集与批次

ModalityBundle 是单个样本（audio/text/video + 可用标记 + 标签）；
Dataset 按模态把同一划分的全部样本堆叠成 [N, L_m, D_m] 数组。
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from ..errors import ProtocolError, ShapeError
from ..utils import make_rng

MODALITIES = ("A", "T", "V")
MODALITY_NAMES = {"A": "audio", "T": "text", "V": "video"}


def _full_availability() -> Dict[str, bool]:
    return {m: True for m in MODALITIES}


@dataclass
class ModalityBundle:
    """单个样本：三种模态的特征矩阵 [L_m, D_m]、可用标记与标签"""
    audio: np.ndarray
    text: np.ndarray
    video: np.ndarray
    label: Union[float, int]
    available: Dict[str, bool] = field(default_factory=_full_availability)
    sample_id: str = ""

    def __post_init__(self):
        for m in MODALITIES:
            arr = np.asarray(getattr(self, MODALITY_NAMES[m]), dtype=np.float64)
            if arr.ndim != 2:
                raise ShapeError(f"{MODALITY_NAMES[m]} 必须是 [L, D] 矩阵，得到 {arr.shape}")
            setattr(self, MODALITY_NAMES[m], arr)
        self.available = {m: bool(self.available.get(m, True)) for m in MODALITIES}

    def feature(self, modality: str) -> np.ndarray:
        return getattr(self, MODALITY_NAMES[modality])

    def features(self) -> Dict[str, np.ndarray]:
        return {m: self.feature(m) for m in MODALITIES}

    def with_features(self, features: Dict[str, np.ndarray], available: Optional[Dict[str, bool]] = None):
        kwargs = {MODALITY_NAMES[m]: arr for m, arr in features.items()}
        if available is not None:
            kwargs["available"] = dict(available)
        return replace(self, **kwargs)


@dataclass
class Batch:
    """一个小批次：inputs[m] 为 [B, L_m, D_m]"""
    inputs: Dict[str, np.ndarray]
    labels: np.ndarray
    available: Dict[str, bool]
    ids: List[str] = field(default_factory=list)

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def present(self) -> List[str]:
        return [m for m in MODALITIES if self.available[m]]

    @classmethod
    def from_bundles(cls, bundles: Sequence[ModalityBundle]) -> "Batch":
        if not bundles:
            raise ProtocolError("批次不能为空")
        available = bundles[0].available
        for b in bundles[1:]:
            if b.available != available:
                raise ProtocolError("同一批次内的样本必须具有相同的模态可用模式")
        inputs = {}
        for m in MODALITIES:
            try:
                inputs[m] = np.stack([b.feature(m) for b in bundles])
            except ValueError:
                raise ShapeError(f"批次内模态 {m} 的特征形状不一致")
        labels = np.asarray([b.label for b in bundles])
        return cls(inputs, labels, dict(available), [b.sample_id for b in bundles])


@dataclass
class Dataset:
    """
    一个数据划分

    字段：
      - features: m -> [N, L_m, D_m]
      - labels: [N]（回归为浮点分数，分类为类别下标）
      - task: 'regression' | 'classification'
      - n_classes: 分类类别数（回归为 1）
      - available: 该划分的模态可用模式（固定缺失场景下整个划分一致）
    """
    features: Dict[str, np.ndarray]
    labels: np.ndarray
    task: str
    n_classes: int = 1
    ids: List[str] = field(default_factory=list)
    available: Dict[str, bool] = field(default_factory=_full_availability)
    split: str = "train"

    def __post_init__(self):
        n = int(np.asarray(self.labels).shape[0])
        for m in MODALITIES:
            arr = np.asarray(self.features[m], dtype=np.float64)
            if arr.ndim != 3 or arr.shape[0] != n:
                raise ShapeError(f"模态 {m} 特征必须是 [N={n}, L, D]，得到 {arr.shape}")
            self.features[m] = arr
        if not self.ids:
            self.ids = [f"{self.split}-{i:05d}" for i in range(n)]
        if len(self.ids) != n:
            raise ShapeError(f"ids 数量 {len(self.ids)} 与样本数 {n} 不一致")
        self.labels = np.asarray(self.labels)
        self.available = {m: bool(self.available.get(m, True)) for m in MODALITIES}

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def feat_dims(self) -> Dict[str, int]:
        return {m: int(self.features[m].shape[2]) for m in MODALITIES}

    @property
    def seq_lens(self) -> Dict[str, int]:
        return {m: int(self.features[m].shape[1]) for m in MODALITIES}

    @property
    def complete(self) -> bool:
        return all(self.available.values())

    def bundle(self, i: int) -> ModalityBundle:
        return ModalityBundle(
            audio=self.features["A"][i],
            text=self.features["T"][i],
            video=self.features["V"][i],
            label=self.labels[i].item(),
            available=dict(self.available),
            sample_id=self.ids[i],
        )

    def bundles(self) -> Iterator[ModalityBundle]:
        for i in range(len(self)):
            yield self.bundle(i)

    def batch(self, indices: Sequence[int]) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(
            inputs={m: self.features[m][idx] for m in MODALITIES},
            labels=self.labels[idx],
            available=dict(self.available),
            ids=[self.ids[i] for i in idx],
        )

    def replace_features(self, features: Dict[str, np.ndarray], available: Optional[Dict[str, bool]] = None) -> "Dataset":
        return replace(
            self,
            features=dict(features),
            available=dict(available if available is not None else self.available),
            ids=list(self.ids),
        )

    @classmethod
    def from_bundles(cls, bundles: Sequence[ModalityBundle], task: str, n_classes: int = 1, split: str = "train") -> "Dataset":
        batch = Batch.from_bundles(bundles)
        return cls(batch.inputs, batch.labels, task, n_classes, batch.ids, batch.available, split)


@dataclass
class DatasetSplits:
    """train / val / test 三个划分"""
    train: Dataset
    val: Dataset
    test: Dataset

    def items(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))

    def map(self, fn) -> "DatasetSplits":
        return DatasetSplits(**{name: fn(name, ds) for name, ds in self.items()})


def batch_iter(dataset: Dataset, batch_size: int, shuffle_seed: Optional[int] = 0, epoch: int = 0) -> Iterator[Batch]:
    """
    按 (shuffle_seed, epoch) 决定的排列切分批次，保留最后不足一批的部分

    shuffle_seed 为 None 时按原顺序输出。
    """
    if batch_size < 1:
        raise ProtocolError(f"batch_size 必须 >= 1，得到 {batch_size}")
    n = len(dataset)
    if n == 0:
        raise ProtocolError("数据集为空")
    order = np.arange(n) if shuffle_seed is None else make_rng(shuffle_seed, epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield dataset.batch(order[start:start + batch_size])
