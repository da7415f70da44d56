"""
消融配置

四个开关对应去掉第一阶段预训练、去掉跨模态补偿、去掉模态公共去噪（MCD）
与去掉模态特定去噪（MSD）；MCD 与 MSD 不能同时去掉。
"""

from dataclasses import dataclass, replace
from typing import Iterable, List

from ..errors import ConfigError

ABLATION_FLAGS = ("imd", "imc", "msd", "mcd")
_FIELD_BY_FLAG = {
    "imd": "use_imd_pretrain",
    "imc": "use_imc_complement",
    "msd": "use_msd",
    "mcd": "use_mcd",
}


@dataclass(frozen=True)
class AblationConfig:
    use_imd_pretrain: bool = True
    use_imc_complement: bool = True
    use_mcd: bool = True
    use_msd: bool = True

    def __post_init__(self):
        if not self.use_mcd and not self.use_msd:
            raise ConfigError("不能同时去掉 MSD 与 MCD：至少保留一个去噪模块")

    @classmethod
    def from_flags(cls, ablate: Iterable[str] = ()) -> "AblationConfig":
        """由 --ablate 取值（imd|imc|msd|mcd，可重复）构造"""
        kwargs = {}
        for flag in ablate:
            key = str(flag).strip().lower()
            if key not in _FIELD_BY_FLAG:
                raise ConfigError(f"未知的消融项 {flag!r}，只允许 {ABLATION_FLAGS}")
            kwargs[_FIELD_BY_FLAG[key]] = False
        return cls(**kwargs)

    @property
    def removed(self) -> List[str]:
        return [flag for flag in ABLATION_FLAGS if not getattr(self, _FIELD_BY_FLAG[flag])]

    @property
    def is_full(self) -> bool:
        return not self.removed

    @property
    def label(self) -> str:
        """'full' 或 'w/o IMC' 这样的展示名"""
        if self.is_full:
            return "full"
        return " ".join(f"w/o {flag.upper()}" for flag in self.removed)

    def to_flags(self) -> List[str]:
        return self.removed


FULL = AblationConfig()
STANDARD_VARIANTS = (
    FULL,
    AblationConfig(use_imd_pretrain=False),
    AblationConfig(use_imc_complement=False),
    AblationConfig(use_msd=False),
    AblationConfig(use_mcd=False),
)


def apply_ablation(config: AblationConfig, options):
    """
    把消融配置写入模型选项，返回新的 ModelOptions

    前向与训练过程都只读 options.ablation：
      - w/o IMD：训练流程跳过第一阶段，随机初始化直接进入第二阶段
      - w/o IMC：缺失槽位保持零张量，不做跨模态补偿
      - w/o MCD：两个阶段都不计算 MCD，X_c 一律回退为 X_s
      - w/o MSD：两个阶段都不计算 MSD，X_s 回退为 X_c，注意力改用共享 MHA
    """
    if not isinstance(config, AblationConfig):
        raise ConfigError(f"需要 AblationConfig，得到 {type(config).__name__}")
    return replace(options, ablation=config)
