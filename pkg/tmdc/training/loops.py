"""
两阶段训练流程

- train_imd：在完整（归一化、加噪）数据上最小化第一阶段损失
- train_imc：按场景置零缺失模态，只优化融合预测损失，按验证集主指标选模型
- run_scenario：归一化 → 第一阶段 → 场景处理 → 第二阶段 → 测试集评估

每一步的 ε 与 dropout 掩码由 (seed, 阶段, epoch, batch) 派生，
批次顺序由 (seed, epoch) 派生，因此从检查点续训与不间断训练完全一致。
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from ..core import Tape
from ..data.corrupt import FULL_PATTERN, Normalizer, Scenario, fit_normalizer, prepare_scenario
from ..data.dataset import Dataset, DatasetSplits, batch_iter
from ..errors import ConfigError, ProtocolError
from ..model.params import TMDCParams, count_parameters, init_params, param_group
from ..model.stages import LOSS_COLUMNS, combine_imd_terms, imc_loss, imd_loss_terms
from ..utils import NoiseSource
from .adam import AdamState, adam_step, collect_grads
from .checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from .config import TrainConfig
from .metrics import MetricReport, evaluate

logger = logging.getLogger(__name__)

STAGE_IMD = 1
STAGE_IMC = 2
PathLike = Union[str, Path]


@dataclass
class IMDResult:
    params: TMDCParams
    state: AdamState
    history: pd.DataFrame
    epochs_done: int
    seconds: float = 0.0  # 本次调用的训练墙钟时间


@dataclass
class IMCResult:
    """第二阶段结果；params 为验证集最佳参数，last_params 为最后一个 epoch 的参数"""
    params: TMDCParams
    last_params: TMDCParams
    state: AdamState
    history: pd.DataFrame
    best_epoch: int
    best_metric: float
    val_report: Optional[MetricReport] = None
    test_report: Optional[MetricReport] = None
    epochs_done: int = 0
    seconds: float = 0.0  # 含每个 epoch 的验证与最终评估


@dataclass
class ScenarioResult:
    config: TrainConfig
    imc: IMCResult
    imd: Optional[IMDResult] = None
    normalizer: Optional[Normalizer] = None
    param_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def test_report(self) -> MetricReport:
        return self.imc.test_report

    @property
    def stage_seconds(self) -> Dict[str, float]:
        timing = {"imc": self.imc.seconds}
        if self.imd is not None:
            timing["imd"] = self.imd.seconds
        return timing


def build_params(config: TrainConfig, dataset: Dataset) -> TMDCParams:
    """按数据形状与配置初始化参数；seq_len 为 0 时取最长的模态序列"""
    seq_len = config.seq_len or max(dataset.seq_lens.values())
    dims = dataset.feat_dims
    return init_params((dims["A"], dims["T"], dims["V"]), seq_len, config.dim, config.n_out,
                       config.n_heads, seed=config.seed)


def _check_task(config: TrainConfig, dataset: Dataset) -> None:
    if dataset.task != config.task or (config.task == "classification" and dataset.n_classes != config.n_classes):
        raise ConfigError(
            f"数据集任务 ({dataset.task}, C={dataset.n_classes}) 与配置 ({config.task}, C={config.n_classes}) 不一致"
        )


def _history_frame(rows: List[dict], columns) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=["epoch", *columns])


# ==================== 第一阶段 ====================

def imd_trainable(params: TMDCParams, config: TrainConfig) -> List[str]:
    """第一阶段参与训练的参数：消融后仍保留的 spe/com 组"""
    return [n for n in params.active_names(config.ablation) if param_group(n) != "imc"]


def train_imd(
    config: TrainConfig,
    train: Dataset,
    params: Optional[TMDCParams] = None,
    state: Optional[AdamState] = None,
    start_epoch: int = 0,
    history: Optional[List[dict]] = None,
    n_epochs: Optional[int] = None,
) -> IMDResult:
    """
    第一阶段训练

    参数：
      - train: 完整模态的训练划分（已归一化、已加噪）
      - params / state / start_epoch / history: 续训时从检查点恢复的状态
      - n_epochs: 本次调用训练到第几个 epoch（默认 config.epochs_imd）

    返回：
      - IMDResult，history 每行是一个 epoch 的各项损失均值与 total
    """
    _check_task(config, train)
    if not train.complete:
        raise ProtocolError(f"第一阶段需要完整模态数据，当前可用模式 {train.available}")
    params = params or build_params(config, train)
    tensors = params.named_tensors()
    state = state or AdamState.create(tensors, imd_trainable(params, config), lr=config.lr)
    options = config.options
    rows = list(history or [])
    end = config.epochs_imd if n_epochs is None else n_epochs
    started = time.perf_counter()

    for epoch in range(start_epoch, end):
        sums = {name: 0.0 for name in LOSS_COLUMNS}
        total, seen = 0.0, 0
        for b, batch in enumerate(batch_iter(train, config.batch_size, config.seed, epoch)):
            noise = NoiseSource.from_seed(config.seed, STAGE_IMD, epoch, b)
            with Tape() as tape:
                terms = imd_loss_terms(params, batch, config.task, noise, options)
                loss = combine_imd_terms(terms, config.beta)
            tape.backward(loss)
            adam_step(tensors, collect_grads(tape, tensors, state.names), state)
            n = len(batch)
            for name, t in terms.items():
                sums[name] += t.item() * n
            total += loss.item() * n
            seen += n
            logger.debug("imd epoch %d batch %d loss %.6f", epoch + 1, b, loss.item())
        row = {"epoch": epoch + 1}
        row.update({name: (sums[name] / seen if name in terms else np.nan) for name in LOSS_COLUMNS})
        row["total"] = total / seen
        rows.append(row)
        logger.info("imd epoch %d/%d total loss %.6f", epoch + 1, end, row["total"])

    return IMDResult(params, state, _history_frame(rows, [*LOSS_COLUMNS, "total"]), max(end, start_epoch),
                     time.perf_counter() - started)


# ==================== 第二阶段 ====================

def _resolve_init(config: TrainConfig, train: Dataset,
                  init: Union[None, TMDCParams, Checkpoint, PathLike]) -> TMDCParams:
    if init is None:
        if config.ablation.use_imd_pretrain:
            raise ConfigError("第二阶段需要第一阶段的检查点（--init），或使用 --ablate imd 从随机初始化开始")
        return build_params(config, train)
    if isinstance(init, TMDCParams):
        return init.clone()
    if not isinstance(init, Checkpoint):
        init = checkpoint_load(init, expected=config)
    return init.params.clone()


def train_imc(
    config: TrainConfig,
    splits: DatasetSplits,
    init: Union[None, TMDCParams, Checkpoint, PathLike] = None,
    state: Optional[AdamState] = None,
    start_epoch: int = 0,
    history: Optional[List[dict]] = None,
    best: Optional[dict] = None,
    n_epochs: Optional[int] = None,
) -> IMCResult:
    """
    第二阶段训练

    参数：
      - splits: 已按场景处理过的 train/val/test
      - init: 第一阶段参数、检查点对象或检查点目录；w/o IMD 时可为 None（随机初始化）
      - state / start_epoch / history / best: 续训时恢复的状态；best 为
        {'epoch', 'metric', 'params'(state_dict)}

    说明：
      - 所有参数（消融后保留的组）一起微调，不冻结
      - 每个 epoch 结束在验证集上评估，保留主指标最好的参数
      - 使用全新的 Adam 状态（续训除外）
    """
    _check_task(config, splits.train)
    params = _resolve_init(config, splits.train, init)
    tensors = params.named_tensors()
    state = state or AdamState.create(tensors, params.active_names(config.ablation), lr=config.lr)
    options = config.options
    rows = list(history or [])
    end = config.epochs_imc if n_epochs is None else n_epochs
    started = time.perf_counter()

    best = dict(best) if best else {"epoch": 0, "metric": -np.inf, "params": None}
    for epoch in range(start_epoch, end):
        total, seen = 0.0, 0
        for b, batch in enumerate(batch_iter(splits.train, config.batch_size, config.seed, epoch)):
            noise = NoiseSource.from_seed(config.seed, STAGE_IMC, epoch, b)
            with Tape() as tape:
                loss = imc_loss(params, batch, config.task, noise, options)
            tape.backward(loss)
            adam_step(tensors, collect_grads(tape, tensors, state.names), state)
            total += loss.item() * len(batch)
            seen += len(batch)
            logger.debug("imc epoch %d batch %d loss %.6f", epoch + 1, b, loss.item())
        val = evaluate(params, splits.val, options)
        rows.append({"epoch": epoch + 1, "loss": total / seen, f"val_{val.primary_name}": val.primary})
        if val.primary > best["metric"]:
            best = {"epoch": epoch + 1, "metric": val.primary, "params": params.state_dict()}
        logger.info("imc epoch %d/%d loss %.6f val %s %.4f", epoch + 1, end, total / seen,
                    val.primary_name, val.primary)

    best_params = params.clone()
    if best["params"] is not None:
        best_params.load_state_dict(best["params"])
    val_report = evaluate(best_params, splits.val, options)
    test_report = evaluate(best_params, splits.test, options)
    if best["params"] is None:
        best = {"epoch": 0, "metric": val_report.primary, "params": None}
    logger.info("imc best epoch %d val %s %.4f test %s %.4f", best["epoch"], val_report.primary_name,
                best["metric"], test_report.primary_name, test_report.primary)
    history_df = pd.DataFrame(rows) if rows else pd.DataFrame(columns=["epoch", "loss"])
    return IMCResult(best_params, params, state, history_df, best["epoch"], float(best["metric"]),
                     val_report, test_report, max(end, start_epoch), time.perf_counter() - started)


def save_imc_checkpoint(path: PathLike, result: IMCResult, config: TrainConfig, precision: str = "float32") -> str:
    """保存第二阶段状态：当前参数与优化器，最佳参数放在 extra 中"""
    extra = {f"best/{n}": arr for n, arr in result.params.state_dict().items()}
    meta = {
        "stage": "imc",
        "epoch": result.epochs_done,
        "best_epoch": result.best_epoch,
        "best_metric": result.best_metric,
        "history": _records(result.history),
    }
    return checkpoint_save(path, result.last_params, result.state, config, precision, extra, meta)


def save_imd_checkpoint(path: PathLike, result: IMDResult, config: TrainConfig, precision: str = "float32") -> str:
    meta = {"stage": "imd", "epoch": result.epochs_done, "history": _records(result.history)}
    return checkpoint_save(path, result.params, result.state, config, precision, meta=meta)


def _records(df: pd.DataFrame) -> List[dict]:
    # NaN 不是合法 JSON，消融掉的列写成 None
    return [{k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in row.items()}
            for row in df.to_dict(orient="records")]


def resume_imd(path: PathLike, config: TrainConfig, train: Dataset) -> IMDResult:
    """从第一阶段检查点续训到 config.epochs_imd"""
    ckpt = checkpoint_load(path, expected=config)
    if ckpt.meta.get("stage") != "imd":
        raise ConfigError(f"{path} 不是第一阶段检查点")
    history = [{k: (np.nan if v is None else v) for k, v in row.items()} for row in ckpt.meta.get("history", [])]
    return train_imd(config, train, ckpt.params, ckpt.state, int(ckpt.meta["epoch"]), history)


def resume_imc(path: PathLike, config: TrainConfig, splits: DatasetSplits) -> IMCResult:
    """从第二阶段检查点续训到 config.epochs_imc"""
    ckpt = checkpoint_load(path, expected=config)
    if ckpt.meta.get("stage") != "imc":
        raise ConfigError(f"{path} 不是第二阶段检查点")
    best_params = {n[len("best/"):]: arr for n, arr in ckpt.extra.items() if n.startswith("best/")}
    best = {"epoch": ckpt.meta["best_epoch"], "metric": ckpt.meta["best_metric"],
            "params": best_params if ckpt.meta["best_epoch"] else None}
    return train_imc(config, splits, ckpt, ckpt.state, int(ckpt.meta["epoch"]), ckpt.meta.get("history"), best)


# ==================== 完整场景 ====================

def run_scenario(
    config: TrainConfig,
    raw: DatasetSplits,
    init: Union[None, TMDCParams, Checkpoint, PathLike] = None,
    out_dir: Optional[PathLike] = None,
) -> ScenarioResult:
    """
    在一个场景上跑完整的两阶段流程

    参数：
      - raw: 未归一化的原始划分（三模态齐全）
      - init: 已有的第一阶段参数；给出时跳过第一阶段训练
      - out_dir: 给出时保存两个阶段的检查点与损失表
    """
    normalizer = fit_normalizer(raw.train)
    imd = None
    if config.ablation.use_imd_pretrain and init is None:
        imd_splits, _ = prepare_scenario(raw, Scenario(FULL_PATTERN, config.noise_sigma), config.seed, normalizer)
        imd = train_imd(config, imd_splits.train)
        init = imd.params
        if out_dir is not None:
            save_imd_checkpoint(Path(out_dir) / "imd", imd, config)
    elif not config.ablation.use_imd_pretrain:
        init = None

    imc_splits, _ = prepare_scenario(raw, config.scenario, config.seed, normalizer)
    imc = train_imc(config, imc_splits, init)
    if out_dir is not None:
        save_imc_checkpoint(Path(out_dir) / "imc", imc, config)
    counts = count_parameters(imc.params, config.ablation)
    logger.info("scenario %s [%s]: test %s %.4f (imc %.2fs)", config.scenario, config.ablation.label,
                imc.test_report.primary_name, imc.test_report.primary, imc.seconds)
    return ScenarioResult(config, imc, imd, normalizer, counts)
