"""
Pandas DataFrame accessor for tmdc experiment records.

Usage:
    import tmdc  # ensures accessor registration via __init__
    records = tmdc.training.ablation_grid(config, raw)
    records.tmdc.grid("variant")
    records.tmdc.seed_summary("variant")
    records.tmdc.to_sheet("out/results.xlsx", "ablation")
"""

from pandas.api.extensions import register_dataframe_accessor
import pandas as pd

from .errors import ConfigError
from .report.tables import pair_grid, pivot_grid, seed_summary
from .report.writer import write_to_excel

# run_grid 输出中透视所需的列
_REQUIRED = ("seed", "pattern")


@register_dataframe_accessor("tmdc")
class TMDCRecordsAccessor:
    def __init__(self, pandas_obj: pd.DataFrame):
        missing = [c for c in _REQUIRED if c not in pandas_obj.columns]
        if missing:
            raise AttributeError(f"DataFrame 不是实验记录表，缺少列 {missing}")
        self._obj = pandas_obj

    def grid(self, index="variant", metric="primary"):
        return pivot_grid(self._obj, index, metric)

    def pair_grid(self, index="variant", metrics=("acc", "f1"), digits=2):
        return pair_grid(self._obj, index, metrics, digits)

    def seed_summary(self, by="variant", metrics=("acc", "f1")):
        return seed_summary(self._obj, by, metrics)

    def to_sheet(self, excel_name, sheet_name="records", index=False, **kwargs):
        """把原始记录（而非透视表）写入工作表"""
        if self._obj.empty:
            raise ConfigError("记录表为空")
        write_to_excel(self._obj, excel_name, sheet_name, index=index, **kwargs)
