"""
带已知共享隐变量的合成多模态数据

每个样本抽取共享隐变量 z ~ N(0, I_k)，每个模态的第 t 行为
    X^m[t] = z·A_m + u_m[t]·B_m + 小幅独立噪声
A_m 只读取满足 j mod 3 ≠ 模态序号 的隐变量坐标（k ≥ 3 时），
因此单个模态只携带部分标签信息，任意两个模态合起来即可完整恢复。
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from ..errors import ConfigError
from ..utils import make_rng
from .dataset import MODALITIES, Dataset, DatasetSplits

logger = logging.getLogger(__name__)

SYNTH_TASKS = ("regression", "binary", "multiclass")
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)


@dataclass
class SynthSpec:
    """合成数据的全部生成参数；seed 完全决定生成结果"""
    n_samples: int = 2000
    shared_dim: int = 8
    private_dims: Tuple[int, int, int] = (4, 4, 4)
    seq_lens: Tuple[int, int, int] = (8, 6, 10)
    feat_dims: Tuple[int, int, int] = (12, 16, 10)
    task: str = "binary"
    n_classes: int = 0
    seed: int = 0
    private_scale: float = 0.5
    noise_std: float = 0.1

    def __post_init__(self):
        if self.task not in SYNTH_TASKS:
            raise ConfigError(f"task 必须是 {SYNTH_TASKS} 之一，得到 {self.task!r}")
        default_classes = {"regression": 1, "binary": 2, "multiclass": 4}[self.task]
        if self.n_classes == 0:
            self.n_classes = default_classes
        if self.n_classes != default_classes:
            raise ConfigError(f"task={self.task!r} 的类别数必须是 {default_classes}，得到 {self.n_classes}")
        if self.task == "multiclass" and self.shared_dim < 2:
            raise ConfigError("multiclass 按前两个隐变量坐标的象限定类，shared_dim 至少为 2")
        if self.n_samples < len(SPLIT_FRACTIONS):
            raise ConfigError(f"n_samples 至少为 {len(SPLIT_FRACTIONS)}")
        for name in ("private_dims", "seq_lens", "feat_dims"):
            values = tuple(int(v) for v in getattr(self, name))
            if len(values) != len(MODALITIES) or min(values) < 1:
                raise ConfigError(f"{name} 必须是三个正整数，得到 {values}")
            setattr(self, name, values)
        if self.shared_dim < 1:
            raise ConfigError("shared_dim 必须 >= 1")
        if self.seed < 0:
            raise ConfigError(f"seed 必须是非负整数，得到 {self.seed}")
        if self.private_scale < 0 or self.noise_std < 0:
            raise ConfigError("private_scale 与 noise_std 不能为负")

    @property
    def dataset_task(self) -> str:
        return "regression" if self.task == "regression" else "classification"


def visible_coords(shared_dim: int, modality_index: int) -> np.ndarray:
    """模态可见的隐变量坐标；k < 3 时每个模态都可见全部坐标"""
    coords = np.arange(shared_dim)
    if shared_dim < 3:
        return coords
    return coords[coords % 3 != modality_index]


def label_weights(shared_dim: int, rng: np.random.Generator) -> np.ndarray:
    if shared_dim == 1:
        return np.ones(1)
    w = np.abs(rng.standard_normal(shared_dim))
    return w / np.linalg.norm(w)


def labels_from_latent(z: np.ndarray, w: np.ndarray, task: str) -> np.ndarray:
    score = z @ w
    if task == "regression":
        return score
    if task == "binary":
        return (score > 0).astype(np.int64)
    # 4 类：按 (z0, z1) 所在象限
    return (2 * (z[:, 0] >= 0) + (z[:, 1] >= 0)).astype(np.int64)


def _split_sizes(n: int) -> Tuple[int, int, int]:
    n_train = int(round(n * SPLIT_FRACTIONS[0]))
    n_val = int(round(n * SPLIT_FRACTIONS[1]))
    n_train = min(max(n_train, 1), n - 2)
    n_val = min(max(n_val, 1), n - n_train - 1)
    return n_train, n_val, n - n_train - n_val


def gen_synthetic(spec: SynthSpec) -> DatasetSplits:
    """
    生成 train/val/test 三个划分（70/15/15）

    返回：
      - DatasetSplits，样本 id 为 'syn-00000' 形式的全局编号
    """
    rng = make_rng(spec.seed)
    k = spec.shared_dim
    w = label_weights(k, rng)

    mixing: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    for i, m in enumerate(MODALITIES):
        d_m, p_m = spec.feat_dims[i], spec.private_dims[i]
        a_m = np.zeros((k, d_m))
        seen = visible_coords(k, i)
        a_m[seen] = rng.standard_normal((len(seen), d_m)) / np.sqrt(len(seen))
        b_m = spec.private_scale * rng.standard_normal((p_m, d_m)) / np.sqrt(p_m)
        mixing[m] = (a_m, b_m)

    n = spec.n_samples
    z = rng.standard_normal((n, k))
    features = {}
    for i, m in enumerate(MODALITIES):
        a_m, b_m = mixing[m]
        length, d_m = spec.seq_lens[i], spec.feat_dims[i]
        u = rng.standard_normal((n, length, spec.private_dims[i]))
        noise = spec.noise_std * rng.standard_normal((n, length, d_m))
        features[m] = (z @ a_m)[:, None, :] + u @ b_m + noise

    labels = labels_from_latent(z, w, spec.task)
    ids = [f"syn-{i:05d}" for i in range(n)]
    sizes = _split_sizes(n)
    logger.info("generated synthetic %s data: n=%d, k=%d, splits=%s", spec.task, n, k, sizes)

    bounds = np.cumsum((0,) + sizes)
    parts = {}
    for name, lo, hi in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        parts[name] = Dataset(
            features={m: features[m][lo:hi] for m in MODALITIES},
            labels=labels[lo:hi],
            task=spec.dataset_task,
            n_classes=spec.n_classes,
            ids=ids[lo:hi],
            split=name,
        )
    return DatasetSplits(**parts)
