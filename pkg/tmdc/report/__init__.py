"""
tmdc 结果报表模块

提供结果表透视、多种子汇总与 xlsx 导出
"""

from .tables import PATTERN_ORDER, pair_grid, pivot_grid, seed_summary, to_json_table
from .writer import to_sheet_many, write_to_excel

__all__ = [
    'PATTERN_ORDER',
    'pivot_grid',
    'pair_grid',
    'seed_summary',
    'to_json_table',
    'to_sheet_many',
    'write_to_excel',
]
