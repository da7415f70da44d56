"""
检查点目录

布局：
    index.json                 参数索引、优化器状态、配置快照与内容摘要
    params/<name>.tmdf         每个参数一个 TMDF 文件
    moments/<name>.m.tmdf      Adam 一阶矩
    moments/<name>.v.tmdf      Adam 二阶矩
    extra/<name>.tmdf          附带张量（例如最佳验证参数）

index.json 中每个文件都记录 sha256 摘要，整个索引另有一个总摘要，
不含时间戳，同样的内容总是得到同样的摘要。
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from ..data.tmdf import read_array, write_tensor
from ..errors import (
    CheckpointError,
    CheckpointShapeError,
    DigestMismatchError,
    GroupMismatchError,
    MissingParameterError,
    TMDFError,
)
from ..model.params import TMDCParams, init_params, param_group
from .adam import AdamState
from .config import TrainConfig

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "tmdc-checkpoint"
CHECKPOINT_VERSION = 1
INDEX_NAME = "index.json"
# 只有这两项会改变参数组的组成，imd/imc 只影响训练流程
GROUP_FLAGS = ("msd", "mcd")

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    params: TMDCParams
    config: TrainConfig
    state: Optional[AdamState] = None
    extra: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    digest: str = ""


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _index_digest(index: dict) -> str:
    body = {k: v for k, v in index.items() if k != "digest"}
    return _sha256(json.dumps(body, sort_keys=True, ensure_ascii=False).encode("utf-8"))


def _write(root: Path, rel: str, values, precision: str) -> dict:
    write_tensor(root / rel, values, precision)
    return {"file": rel, "shape": list(np.shape(values)), "sha256": _sha256((root / rel).read_bytes())}


def checkpoint_save(
    path: PathLike,
    params: TMDCParams,
    state: Optional[AdamState] = None,
    config: Optional[TrainConfig] = None,
    precision: str = "float32",
    extra: Optional[Dict[str, np.ndarray]] = None,
    meta: Optional[dict] = None,
) -> str:
    """
    保存参数、优化器状态与配置快照

    参数：
      - precision: 'float32'（默认）或 'float64'（断点续训需要逐位一致时使用）
      - extra: 附带保存的数组，例如第二阶段的最佳验证参数
      - meta: 附带的 JSON 元信息（epoch、历史记录等）

    返回：
      - 索引总摘要
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    config = config or TrainConfig()

    entries = {}
    for name, t in params.named_tensors().items():
        entry = _write(root, f"params/{name}.tmdf", t.data, precision)
        entry["group"] = param_group(name)
        entries[name] = entry

    optimizer = None
    if state is not None:
        state.check_shapes(params.named_tensors())
        moments = {n: {"m": _write(root, f"moments/{n}.m.tmdf", state.m[n], precision),
                       "v": _write(root, f"moments/{n}.v.tmdf", state.v[n], precision)}
                   for n in state.names}
        optimizer = {
            "names": list(state.names),
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "step": state.step,
            "moments": moments,
        }

    extras = {name: _write(root, f"extra/{name}.tmdf", arr, precision) for name, arr in (extra or {}).items()}

    index = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "precision": precision,
        "model": {
            "feat_dims": list(params.feat_dims),
            "seq_len": params.seq_len,
            "dim": params.dim,
            "n_out": params.n_out,
            "n_heads": params.n_heads,
        },
        "config": config.to_dict(),
        "groups": {g: [n for n, e in entries.items() if e["group"] == g] for g in ("spe", "com", "imc")},
        "trainable": params.active_names(config.ablation),
        "params": entries,
        "optimizer": optimizer,
        "extra": extras,
        "meta": meta or {},
    }
    index["digest"] = _index_digest(index)
    (root / INDEX_NAME).write_text(json.dumps(index, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    logger.info("saved checkpoint to %s (%d tensors, step=%s)", root, len(entries),
                optimizer["step"] if optimizer else "-")
    return index["digest"]


def read_index(path: PathLike) -> dict:
    file = Path(path) / INDEX_NAME
    if not file.exists():
        raise MissingParameterError(f"检查点索引不存在: {file}")
    try:
        index = json.loads(file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{file}: 索引解析失败: {exc}") from exc
    if index.get("format") != CHECKPOINT_FORMAT or index.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{file}: 不是受支持的检查点索引")
    if index.get("digest") != _index_digest(index):
        raise DigestMismatchError(f"{file}: 索引内容与摘要不符")
    return index


def _read(root: Path, entry: dict, verify: bool) -> np.ndarray:
    file = root / entry["file"]
    if not file.exists():
        raise MissingParameterError(f"检查点文件缺失: {file}")
    raw = file.read_bytes()
    if verify and _sha256(raw) != entry["sha256"]:
        raise DigestMismatchError(f"{file}: 内容摘要不符，文件可能已损坏")
    try:
        arr = read_array(file)
    except TMDFError as exc:
        raise CheckpointError(f"{file}: {exc}") from exc
    if list(arr.shape) != list(entry["shape"]):
        raise CheckpointShapeError(f"{file}: 形状 {list(arr.shape)} 与索引 {entry['shape']} 不一致")
    return arr


def _check_groups(stored: TrainConfig, expected: TrainConfig) -> None:
    a = sorted(f for f in stored.ablate if f in GROUP_FLAGS)
    b = sorted(f for f in expected.ablate if f in GROUP_FLAGS)
    if a != b:
        raise GroupMismatchError(
            f"检查点的参数组配置 (ablate={a or 'none'}) 与当前配置 (ablate={b or 'none'}) 不一致"
        )


def checkpoint_load(path: PathLike, expected: Optional[TrainConfig] = None, verify: bool = True) -> Checkpoint:
    """
    读取检查点

    参数：
      - expected: 当前运行的配置；给出时检查两者的参数组（MSD/MCD 消融）是否一致
      - verify: 是否逐文件校验 sha256 摘要

    说明：
      - 索引缺失或参数文件缺失抛出 MissingParameterError
      - 摘要不符抛出 DigestMismatchError，形状与索引不符抛出 CheckpointShapeError
    """
    root = Path(path)
    index = read_index(root)
    config = TrainConfig.from_dict(index["config"])
    if expected is not None:
        _check_groups(config, expected)

    model = index["model"]
    params = init_params(model["feat_dims"], model["seq_len"], model["dim"], model["n_out"], model["n_heads"])
    tensors = params.named_tensors()
    unknown = sorted(set(index["params"]) - set(tensors))
    absent = sorted(set(tensors) - set(index["params"]))
    if unknown or absent:
        raise MissingParameterError(f"检查点参数与模型结构不一致: 缺少 {absent[:5]}，多出 {unknown[:5]}")
    for name, t in tensors.items():
        arr = _read(root, index["params"][name], verify)
        if arr.shape != t.shape:
            raise CheckpointShapeError(f"参数 {name} 形状 {arr.shape} 与模型 {t.shape} 不一致")
        t.assign_(arr)

    state = None
    opt = index.get("optimizer")
    if opt:
        state = AdamState(
            names=list(opt["names"]),
            lr=opt["lr"],
            beta1=opt["beta1"],
            beta2=opt["beta2"],
            eps=opt["eps"],
            step=int(opt["step"]),
            m={n: _read(root, e["m"], verify) for n, e in opt["moments"].items()},
            v={n: _read(root, e["v"], verify) for n, e in opt["moments"].items()},
        )
        state.check_shapes(tensors)

    extra = {name: _read(root, e, verify) for name, e in index.get("extra", {}).items()}
    return Checkpoint(params, config, state, extra, index.get("meta", {}), index["digest"])
