"""
结果表 Excel 写入模块

把实验结果 DataFrame 写入 xlsx 工作簿，对外暴露两个函数：
- to_sheet_many: (推荐) 按文件名自动分批写入多个表，每个工作簿只打开保存一次。
- write_to_excel: 写入单个 DataFrame。
"""

import math
from itertools import groupby
from pathlib import Path
from typing import Any, Dict, List, Union

import openpyxl
import pandas as pd

from ..errors import ConfigError

# Excel 工作表名最长 31 个字符，且不能包含这些字符
_SHEET_NAME_LIMIT = 31
_SHEET_FORBIDDEN = set('[]:*?/\\')


# ====================================================================
# Public API
# ====================================================================

def to_sheet_many(tasks: List[Dict[str, Any]]) -> None:
    """
    自动按文件名分批，向多个 Excel 文件写入结果表。

    每个任务是 write_to_excel 的关键字参数，必须包含 excel_name：
        to_sheet_many([
            {"df": grid, "excel_name": "out/results.xlsx", "sheet_name": "noise"},
            {"df": summary, "excel_name": "out/results.xlsx", "sheet_name": "seeds"},
        ])
    """
    sorted_tasks = sorted(tasks, key=lambda t: str(t['excel_name']))
    for excel_name, group in groupby(sorted_tasks, key=lambda t: str(t['excel_name'])):
        with _ExcelBatchWriter(excel_name) as writer:
            writer.write_many([{k: v for k, v in task.items() if k != 'excel_name'} for task in group])


def write_to_excel(df: pd.DataFrame,
                   excel_name: Union[str, Path],
                   sheet_name: str = "results",
                   start_row: int = 1,
                   start_col: int = 1,
                   header: bool = True,
                   index: bool = True,
                   replace: bool = True,
                   *,
                   _workbook: openpyxl.Workbook = None,
                   _save: bool = True) -> None:
    """
    把 DataFrame 写入工作簿的指定工作表。

    参数：
      - replace: 工作表已存在时先清空（删除后重建于原位置）
      - header / index: 是否写出列名与行索引

    说明：
      - 文件不存在时自动创建
      - NaN 写为空单元格
    """
    if not isinstance(df, pd.DataFrame):
        raise ConfigError("df 参数必须是 pandas DataFrame")
    if start_row < 1 or start_col < 1:
        raise ConfigError("start_row/start_col 必须大于等于 1")
    sheet_name = _clean_sheet_name(sheet_name)

    wb = _workbook or _open_or_create_workbook(excel_name)
    ws = _get_or_create_worksheet(wb, sheet_name, replace)
    cell_set = ws.cell
    for i, row in enumerate(_rows_to_write(df, header, index)):
        for j, val in enumerate(row):
            cell_set(row=start_row + i, column=start_col + j, value=_cell_value(val))
    if _workbook is None and _save:
        _save_workbook(wb, excel_name)


# ====================================================================
# Internal Implementation
# ====================================================================

class _ExcelBatchWriter:
    """内部类：一次打开、多次写、一次保存。"""
    def __init__(self, excel_name: str):
        self.excel_name = excel_name
        self.workbook = _open_or_create_workbook(excel_name)

    def write(self, **kwargs) -> None:
        write_to_excel(excel_name=self.excel_name, _workbook=self.workbook, _save=False, **kwargs)

    def write_many(self, tasks: List[Dict[str, Any]]) -> None:
        for task in tasks:
            self.write(**task)

    def save(self) -> None:
        _save_workbook(self.workbook, self.excel_name)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.save()


def _rows_to_write(df: pd.DataFrame, header: bool, index: bool) -> List[list]:
    rows = df.values.tolist()
    if header:
        rows.insert(0, [str(c) for c in df.columns])
    if index:
        labels = [str(i) for i in df.index]
        if header:
            labels.insert(0, df.index.name or "")
        rows = [[label, *row] for label, row in zip(labels, rows)]
    return rows


def _cell_value(val):
    if isinstance(val, float) and math.isnan(val):
        return None
    if hasattr(val, "item"):
        return val.item()
    return val


def _clean_sheet_name(name: str) -> str:
    cleaned = "".join("_" if ch in _SHEET_FORBIDDEN else ch for ch in str(name))[:_SHEET_NAME_LIMIT]
    if not cleaned:
        raise ConfigError("sheet_name 不能为空")
    return cleaned


def _open_or_create_workbook(excel_name: Union[str, Path]) -> openpyxl.Workbook:
    try:
        return openpyxl.load_workbook(excel_name)
    except FileNotFoundError:
        wb = openpyxl.Workbook()
        if 'Sheet' in wb.sheetnames:
            wb.remove(wb['Sheet'])
        return wb


def _get_or_create_worksheet(workbook: openpyxl.Workbook, sheet_name: str, replace: bool):
    if sheet_name in workbook.sheetnames:
        if not replace:
            return workbook[sheet_name]
        position = workbook.sheetnames.index(sheet_name)
        workbook.remove(workbook[sheet_name])
        return workbook.create_sheet(sheet_name, position)
    return workbook.create_sheet(sheet_name)


def _save_workbook(workbook: openpyxl.Workbook, excel_name: Union[str, Path]) -> None:
    path = Path(excel_name)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not workbook.sheetnames:
        workbook.create_sheet("results")
    workbook.save(path)
