"""
TMDF 张量文件读写

文件布局（小端）：
    magic "TMDF"(4) | version u32 = 1 | dtype u8 | ndim u8 (1-4) | reserved u16 = 0
    | dims u32 × ndim | 行主序数据

dtype 编码 1 为 binary32（默认），2 为 binary64（检查点的全精度选项）。
读入后一律提升为 float64。
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..core import Tensor
from ..errors import (
    BadMagicError,
    DimOverflowError,
    DtypeError,
    NonFiniteError,
    ShapeError,
    TMDFError,
    TruncatedPayloadError,
    VersionMismatchError,
)

MAGIC = b"TMDF"
VERSION = 1
MAX_NDIM = 4
_HEADER = struct.Struct("<4sIBBH")
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {"float32": 1, "float64": 2}

PathLike = Union[str, Path]


def encode_tensor(values, precision: str = "float32") -> bytes:
    """把张量或数组编码为 TMDF 字节串"""
    arr = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
    if precision not in _CODES:
        raise DtypeError(f"precision 必须是 {sorted(_CODES)} 之一，得到 {precision!r}")
    if not 1 <= arr.ndim <= MAX_NDIM:
        raise DimOverflowError(f"TMDF 只支持 1-{MAX_NDIM} 维，得到 {arr.ndim} 维")
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"TMDF 不接受长度为 0 的维: {arr.shape}")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise DimOverflowError(f"维长度超出 u32 上限: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("TMDF 不接受 NaN/Inf")
    code = _CODES[precision]
    header = _HEADER.pack(MAGIC, VERSION, code, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    return header + dims + payload


def decode_array(buf: bytes) -> np.ndarray:
    """解码 TMDF 字节串为 float64 数组"""
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError(f"文件头不完整：只有 {len(buf)} 字节")
    magic, version, code, ndim, _reserved = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"魔数错误: {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"不支持的 TMDF 版本 {version}（期望 {VERSION}）")
    if code not in _DTYPES:
        raise DtypeError(f"不支持的 dtype 编码 {code}")
    if not 1 <= ndim <= MAX_NDIM:
        raise DimOverflowError(f"维数 {ndim} 超出 1-{MAX_NDIM}")
    offset = _HEADER.size
    if len(buf) < offset + 4 * ndim:
        raise TruncatedPayloadError("维度表被截断")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset)
    if any(d < 1 for d in dims):
        raise ShapeError(f"文件中出现长度为 0 的维: {dims}")
    offset += 4 * ndim
    dtype = _DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    actual = len(buf) - offset
    if actual < expected:
        raise TruncatedPayloadError(f"数据被截断：期望 {expected} 字节，实际 {actual} 字节")
    if actual > expected:
        raise TMDFError(f"数据尾部多出 {actual - expected} 字节")
    arr = np.frombuffer(buf, dtype=dtype, count=expected // dtype.itemsize, offset=offset)
    return arr.astype(np.float64).reshape(dims)


def write_tensor(path: PathLike, values, precision: str = "float32") -> None:
    """写入 TMDF 文件（父目录不存在时自动创建）"""
    path = Path(path)
    data = encode_tensor(values, precision)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def read_array(path: PathLike) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


def read_tensor(path: PathLike) -> Tensor:
    """读取 TMDF 文件为 float64 Tensor"""
    return Tensor(read_array(path))
