"""
结果汇总表

把实验网格的逐行记录整理成 “行 × 缺失模式 + avg” 的表格，
以及多随机种子的均值 / 标准差 / 95% 置信区间半宽。
"""

from typing import List, Sequence, Union

import numpy as np
import pandas as pd

from ..data.corrupt import STANDARD_PATTERNS, pattern_label
from ..errors import ConfigError

PATTERN_ORDER = [pattern_label(p) for p in STANDARD_PATTERNS]
Z_95 = 1.96


def _ordered_patterns(present) -> List[str]:
    known = [p for p in PATTERN_ORDER if p in set(present)]
    return known + sorted(set(present) - set(known))


def pivot_grid(records: pd.DataFrame, index: Union[str, Sequence[str]] = "variant",
               metric: str = "primary") -> pd.DataFrame:
    """
    透视为结果表：行为 index，列为缺失模式（按标准顺序），末尾追加 avg 列

    多个随机种子的同一单元格取均值。
    """
    if metric not in records.columns:
        raise ConfigError(f"记录中没有指标列 {metric!r}")
    table = records.pivot_table(index=index, columns="pattern", values=metric, aggfunc="mean", sort=False)
    table = table.reindex(columns=_ordered_patterns(table.columns))
    table["avg"] = table.mean(axis=1)
    table.columns.name = None
    return table


def pair_grid(records: pd.DataFrame, index: Union[str, Sequence[str]] = "variant",
              metrics: Sequence[str] = ("acc", "f1"), digits: int = 2) -> pd.DataFrame:
    """按百分数显示的 'ACC/F1' 形式结果表"""
    parts = [pivot_grid(records, index, m) * 100.0 for m in metrics]
    joined = parts[0].round(digits).astype(str)
    for part in parts[1:]:
        joined = joined + "/" + part.round(digits).astype(str)
    return joined


def seed_summary(records: pd.DataFrame, by: Union[str, Sequence[str]] = "variant",
                 metrics: Sequence[str] = ("acc", "f1")) -> pd.DataFrame:
    """
    多随机种子汇总：先对每个种子在各缺失模式上取平均，再跨种子统计

    返回：
      - 每个 by 分组一行，列为 <metric>_mean / <metric>_std / <metric>_ci95 以及 n_seeds
    """
    by = [by] if isinstance(by, str) else list(by)
    per_seed = records.groupby(by + ["seed"], sort=False)[list(metrics)].mean().reset_index()
    grouped = per_seed.groupby(by, sort=False)
    out = pd.DataFrame(index=grouped.size().index)
    out["n_seeds"] = grouped.size()
    for m in metrics:
        std = grouped[m].std(ddof=1).fillna(0.0)
        out[f"{m}_mean"] = grouped[m].mean()
        out[f"{m}_std"] = std
        out[f"{m}_ci95"] = Z_95 * std / np.sqrt(out["n_seeds"])
    return out


def to_json_table(table: pd.DataFrame) -> dict:
    """结果表转为 {行: {列: 值}}，NaN 写为 None"""
    clean = table.astype(object).where(pd.notna(table), None)
    return {str(k): {str(c): v for c, v in row.items()} for k, row in clean.to_dict(orient="index").items()}
