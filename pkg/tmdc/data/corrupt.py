"""
缺失模式与噪声注入

- Scenario：缺失模式（{A,T,V} 的非空子集）× 高斯噪声强度
- apply_missing：把模式之外的模态置零并标记为不可用
- add_gaussian_noise：只对可用模态加 N(0, sigma²) 噪声
- Normalizer：在训练划分上拟合的逐维 z-score，先于缺失与加噪执行
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np

from ..errors import DomainError, ProtocolError
from ..utils import make_rng
from .dataset import MODALITIES, Dataset, DatasetSplits, ModalityBundle

logger = logging.getLogger(__name__)

Pattern = Tuple[str, ...]

# 单模态、双模态、完整模态，列顺序与结果表一致
STANDARD_PATTERNS: Tuple[Pattern, ...] = (
    ("A",), ("T",), ("V",),
    ("A", "V"), ("A", "T"), ("T", "V"),
    ("A", "T", "V"),
)
NOISE_GRID = (0.0, 5.0, 10.0, 20.0)
FULL_PATTERN: Pattern = MODALITIES

_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


def parse_pattern(pattern: Union[str, Iterable[str]]) -> Pattern:
    """
    解析缺失模式，返回按 A、T、V 规范顺序排列的元组

    示例：
        >>> parse_pattern("V,T")
        ('T', 'V')
        >>> parse_pattern("atv")
        ('A', 'T', 'V')
    """
    if isinstance(pattern, str):
        tokens = [t for t in pattern.replace(",", " ").split() if t]
        if len(tokens) == 1 and len(tokens[0]) > 1:
            tokens = list(tokens[0])
    else:
        tokens = list(pattern)
    picked = {str(t).strip().upper() for t in tokens}
    unknown = picked - set(MODALITIES)
    if unknown:
        raise ProtocolError(f"未知模态 {sorted(unknown)}，只允许 {MODALITIES}")
    if not picked:
        raise ProtocolError("缺失模式不能为空：至少需要一个可用模态")
    return tuple(m for m in MODALITIES if m in picked)


def pattern_label(pattern: Iterable[str]) -> str:
    return ",".join(parse_pattern(pattern))


def availability(pattern: Iterable[str]) -> Dict[str, bool]:
    present = parse_pattern(pattern)
    return {m: m in present for m in MODALITIES}


@dataclass(frozen=True)
class Scenario:
    """缺失模式 × 噪声强度"""
    pattern: Pattern = FULL_PATTERN
    noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "pattern", parse_pattern(self.pattern))
        if not self.noise_sigma >= 0:
            raise DomainError(f"噪声强度必须非负，得到 {self.noise_sigma}")
        object.__setattr__(self, "noise_sigma", float(self.noise_sigma))

    @property
    def available(self) -> Dict[str, bool]:
        return availability(self.pattern)

    @property
    def complete(self) -> bool:
        return self.pattern == FULL_PATTERN

    @property
    def label(self) -> str:
        return pattern_label(self.pattern)

    def __str__(self):
        return f"{self.label}@sigma={self.noise_sigma:g}"


# ==================== 缺失 ====================

def _masked_features(features: Dict[str, np.ndarray], available: Dict[str, bool]) -> Dict[str, np.ndarray]:
    return {m: (arr if available[m] else np.zeros_like(arr)) for m, arr in features.items()}


def apply_missing(item: Union[ModalityBundle, Dataset], pattern: Iterable[str]):
    """
    把模式之外的模态置零并标记为不可用

    说明：
      - 模式内的模态原样保留；对已缺失的模态重复调用结果不变
      - 接受单个 ModalityBundle 或整个 Dataset
    """
    present = availability(pattern)
    available = {m: present[m] and item.available[m] for m in MODALITIES}
    if isinstance(item, ModalityBundle):
        return item.with_features(_masked_features(item.features(), available), available)
    return item.replace_features(_masked_features(item.features, available), available)


# ==================== 噪声 ====================

def _noised(features: Dict[str, np.ndarray], available: Dict[str, bool], sigma: float,
            rng: np.random.Generator) -> Dict[str, np.ndarray]:
    out = {}
    for m in MODALITIES:
        arr = features[m]
        if available[m]:
            arr = arr + sigma * rng.standard_normal(arr.shape)
        out[m] = arr
    return out


def add_gaussian_noise(item: Union[ModalityBundle, Dataset], sigma: float, seed: Union[int, Tuple[int, ...]] = 0):
    """
    对可用模态逐元素加 N(0, sigma²) 噪声

    参数：
      - item: ModalityBundle 或 Dataset
      - sigma: 噪声标准差（>= 0；为 0 时原样返回）
      - seed: 随机种子，可以是整数或整数元组
    """
    if not sigma >= 0:
        raise DomainError(f"噪声强度必须非负，得到 {sigma}")
    if sigma == 0:
        return item
    keys = seed if isinstance(seed, tuple) else (seed,)
    rng = make_rng(*keys)
    if isinstance(item, ModalityBundle):
        return item.with_features(_noised(item.features(), item.available, sigma, rng))
    return item.replace_features(_noised(item.features, item.available, sigma, rng))


# ==================== 归一化 ====================

@dataclass
class Normalizer:
    """逐模态、逐特征维的 z-score 统计量"""
    mean: Dict[str, np.ndarray]
    std: Dict[str, np.ndarray]

    def apply(self, dataset: Dataset) -> Dataset:
        features = {}
        for m in MODALITIES:
            arr = dataset.features[m]
            if arr.shape[-1] != self.mean[m].shape[0]:
                raise ProtocolError(
                    f"模态 {m} 特征维 {arr.shape[-1]} 与归一化统计量 {self.mean[m].shape[0]} 不一致"
                )
            features[m] = (arr - self.mean[m]) / self.std[m]
        return dataset.replace_features(features)

    def to_dict(self) -> dict:
        return {
            "mean": {m: v.tolist() for m, v in self.mean.items()},
            "std": {m: v.tolist() for m, v in self.std.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        return cls(
            mean={m: np.asarray(v, dtype=np.float64) for m, v in doc["mean"].items()},
            std={m: np.asarray(v, dtype=np.float64) for m, v in doc["std"].items()},
        )


def fit_normalizer(train: Dataset) -> Normalizer:
    """在训练划分上拟合逐维均值与标准差；标准差为 0 的维按 1 处理"""
    mean, std = {}, {}
    for m in MODALITIES:
        flat = train.features[m].reshape(-1, train.features[m].shape[-1])
        mean[m] = flat.mean(axis=0)
        s = flat.std(axis=0)
        std[m] = np.where(s > 1e-12, s, 1.0)
    return Normalizer(mean, std)


def prepare_scenario(
    splits: DatasetSplits,
    scenario: Scenario,
    seed: int = 0,
    normalizer: Optional[Normalizer] = None,
) -> Tuple[DatasetSplits, Normalizer]:
    """
    按场景准备三个划分：归一化 → 缺失置零 → 加噪

    返回：
      - (处理后的划分, 使用的归一化器)
    """
    normalizer = normalizer or fit_normalizer(splits.train)
    noise_key = int(round(scenario.noise_sigma * 1000))

    def transform(name: str, ds: Dataset) -> Dataset:
        ds = apply_missing(normalizer.apply(ds), scenario.pattern)
        return add_gaussian_noise(ds, scenario.noise_sigma, (seed, _SPLIT_CODES.get(name, 3), noise_key))

    logger.debug("preparing scenario %s (seed=%d)", scenario, seed)
    return splits.map(transform), normalizer
