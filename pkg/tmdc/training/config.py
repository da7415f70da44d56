"""
训练配置与数据集预设

字段名与命令行参数一一对应（--dim、--lr、--batch-size ...）。
"""

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from ..data.corrupt import FULL_PATTERN, Scenario, parse_pattern
from ..errors import ConfigError
from ..model.ablation import AblationConfig
from ..model.params import CROSS_OWNERS, ModelOptions
from ..nn.layers import SIGMA_MODES
from ..nn.losses import TASKS

PROFILES = {
    "mosi": dict(dim=256, lr=1e-4, batch_size=32, dropout=0.5, beta=0.01, epochs_imd=80, epochs_imc=100,
                 task="regression", n_classes=1),
    "mosei": dict(dim=256, lr=1e-4, batch_size=64, dropout=0.6, beta=0.01, epochs_imd=50, epochs_imc=100,
                  task="regression", n_classes=1),
    "iemocap": dict(dim=256, lr=1e-4, batch_size=16, dropout=0.5, beta=0.01, epochs_imd=50, epochs_imc=100,
                    task="classification", n_classes=4),
    "synth": dict(dim=16, lr=3e-3, batch_size=32, dropout=0.1, beta=0.01, epochs_imd=12, epochs_imc=12,
                  task="classification", n_classes=2),
}


@dataclass
class TrainConfig:
    """
    一次训练运行的全部超参数

    说明：
      - seq_len 为 0 时取训练数据中最长的模态序列长度
      - pattern / noise_sigma 描述第二阶段与评估所用的场景
      - ablate 为被去掉的模块列表（imd|imc|msd|mcd）
    """
    dim: int = 16
    lr: float = 3e-3
    batch_size: int = 32
    dropout: float = 0.1
    beta: float = 0.01
    epochs_imd: int = 12
    epochs_imc: int = 12
    seed: int = 0
    pattern: Tuple[str, ...] = FULL_PATTERN
    noise_sigma: float = 0.0
    ablate: List[str] = field(default_factory=list)
    task: str = "classification"
    n_classes: int = 2
    n_heads: int = 4
    seq_len: int = 0
    sigma_mode: str = "softplus"
    cross_owner: str = "kv-owner"
    profile: Optional[str] = "synth"

    def __post_init__(self):
        self.pattern = parse_pattern(self.pattern)
        self.ablate = sorted({str(a).lower() for a in self.ablate})
        self.ablation  # 校验消融组合
        if self.task not in TASKS:
            raise ConfigError(f"task 必须是 {TASKS} 之一，得到 {self.task!r}")
        if self.task == "regression" and self.n_classes != 1:
            raise ConfigError("回归任务的 n_classes 必须为 1")
        if self.task == "classification" and self.n_classes < 2:
            raise ConfigError("分类任务至少需要 2 个类别")
        for name in ("dim", "batch_size", "n_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} 必须 >= 1，得到 {getattr(self, name)}")
        for name in ("epochs_imd", "epochs_imc", "seq_len", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} 不能为负，得到 {getattr(self, name)}")
        if self.dim % self.n_heads != 0:
            raise ConfigError(f"dim={self.dim} 不能被 n_heads={self.n_heads} 整除")
        if self.lr < 0 or self.beta < 0:
            raise ConfigError("lr 与 beta 不能为负")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout 必须在 [0, 1) 内，得到 {self.dropout}")
        if not self.noise_sigma >= 0:
            raise ConfigError(f"noise_sigma 必须非负，得到 {self.noise_sigma}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ConfigError(f"sigma_mode 必须是 {SIGMA_MODES} 之一")
        if self.cross_owner not in CROSS_OWNERS:
            raise ConfigError(f"cross_owner 必须是 {CROSS_OWNERS} 之一")

    @property
    def ablation(self) -> AblationConfig:
        return AblationConfig.from_flags(self.ablate)

    @property
    def scenario(self) -> Scenario:
        return Scenario(self.pattern, self.noise_sigma)

    @property
    def n_out(self) -> int:
        return 1 if self.task == "regression" else self.n_classes

    @property
    def options(self) -> ModelOptions:
        return ModelOptions(self.dropout, self.sigma_mode, self.cross_owner, self.ablation)

    @classmethod
    def from_profile(cls, name: str, **overrides) -> "TrainConfig":
        """以数据集预设为默认值，overrides 中非 None 的项覆盖预设"""
        if name not in PROFILES:
            raise ConfigError(f"未知的 profile {name!r}，可选 {sorted(PROFILES)}")
        values = dict(PROFILES[name], profile=name)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["pattern"] = list(self.pattern)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"配置中出现未知字段 {unknown}")
        return cls(**doc)
