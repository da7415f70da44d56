"""
tmdc 命令行入口

    tmdc gen-synth --seed 7 --out data/
    tmdc train-imd --data data/ --out runs/imd
    tmdc train-imc --data data/ --init runs/imd/checkpoint --pattern T,V --out runs/imc
    tmdc noise-grid --data data/ --n-seeds 5 --out runs/noise

退出码：0 成功；2 用法或配置错误；1 运行时错误。
每次运行都会在 --out 下写出 run.json（配置快照、种子、输出路径、参数量）。
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .data.convert import convert_table
from .data.corrupt import FULL_PATTERN, STANDARD_PATTERNS, Scenario, fit_normalizer, parse_pattern, prepare_scenario
from .data.manifest import load_splits, write_splits
from .data.synth import SYNTH_TASKS, SynthSpec, gen_synthetic
from .errors import ConfigError, ProtocolError, TMDCError
from .model.gradcheck import GRADCHECK_TOLERANCE, failed_checks, run_gradient_suite
from .model.params import count_parameters
from .report.tables import pivot_grid, seed_summary, to_json_table
from .report.writer import to_sheet_many
from .training.analysis import cosine_analysis, export_embeddings, write_cosine_matrix, write_loss_table
from .training.checkpoint import checkpoint_load
from .training.config import PROFILES, TrainConfig
from .training.experiments import BETA_GRID, ablation_grid, beta_sweep, noise_grid
from .training.loops import (
    imd_trainable,
    save_imc_checkpoint,
    save_imd_checkpoint,
    train_imc,
    train_imd,
)
from .training.metrics import evaluate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

# 命令行参数 -> TrainConfig 字段
_CONFIG_FLAGS = ("seed", "pattern", "noise_sigma", "beta", "lr", "batch_size", "dropout", "dim",
                 "epochs_imd", "epochs_imc", "ablate", "n_heads", "sigma_mode", "cross_owner")


class UsageError(ConfigError):
    """命令行参数组合非法，退出码 2"""


# ====================================================================
# Parser
# ====================================================================

def _seed(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"种子必须是非负整数，得到 {value}")
    return value


def _config_parent(grid: bool = False) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--profile", choices=sorted(PROFILES), default="synth", help="数据集超参数预设")
    p.add_argument("--seed", type=_seed)
    if grid:
        p.add_argument("--pattern", action="append", help="缺失模式，可重复；缺省为全部 7 种")
    else:
        p.add_argument("--pattern", help="可用模态，逗号分隔的 A,T,V 子集")
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--epochs-imd", type=int)
    p.add_argument("--epochs-imc", type=int)
    p.add_argument("--n-heads", type=int)
    p.add_argument("--sigma-mode")
    p.add_argument("--cross-owner")
    p.add_argument("--ablate", action="append", choices=["imd", "imc", "msd", "mcd"],
                   help="去掉的模块，可重复")
    p.add_argument("--data", type=Path, required=True, help="包含 manifest_{train,val,test}.json 的目录")
    return p


def _out_parent(command: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out", type=Path, default=Path("runs") / command, help="输出目录")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tmdc", description="两阶段模态去噪与补全（不完整多模态学习）")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v 为 INFO，-vv 为 DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", parents=[_out_parent("gen-synth")], help="生成合成数据集")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--shared-dim", type=int, default=8)
    p.add_argument("--task", choices=SYNTH_TASKS, default="binary")
    p.set_defaults(handler=cmd_gen_synth)

    p = sub.add_parser("convert", parents=[_out_parent("convert")], help="把外部特征矩阵转换为 TMDF + 清单")
    p.add_argument("--index", type=Path, required=True, help="索引表（csv / xlsx）")
    p.add_argument("--task", choices=["regression", "classification"], required=True)
    p.add_argument("--n-classes", type=int, default=1)
    p.set_defaults(handler=cmd_convert)

    p = sub.add_parser("train-imd", parents=[_config_parent(), _out_parent("train-imd")], help="第一阶段训练")
    p.set_defaults(handler=cmd_train_imd)

    p = sub.add_parser("train-imc", parents=[_config_parent(), _out_parent("train-imc")], help="第二阶段训练")
    p.add_argument("--init", type=Path, help="第一阶段检查点目录")
    p.add_argument("--export-embeddings", action="store_true", help="导出各划分的融合表示")
    p.set_defaults(handler=cmd_train_imc)

    p = sub.add_parser("eval", parents=[_config_parent(), _out_parent("eval")], help="评估检查点")
    p.add_argument("--init", type=Path, required=True, help="检查点目录")
    p.add_argument("--split", choices=["val", "test"], default="test")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("analyze-cosine", parents=[_config_parent(), _out_parent("analyze-cosine")],
                       help="S_m / C_m 表示的平均余弦相似度矩阵")
    p.add_argument("--init", type=Path, required=True, help="检查点目录")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.set_defaults(handler=cmd_analyze_cosine)

    for name, handler, help_text in (("ablate", cmd_ablate, "消融 × 缺失模式网格"),
                                     ("noise-grid", cmd_noise_grid, "噪声强度 × 缺失模式网格"),
                                     ("beta-sweep", cmd_beta_sweep, "VIB 权重 β 扫描")):
        p = sub.add_parser(name, parents=[_config_parent(grid=True), _out_parent(name)], help=help_text)
        p.add_argument("--n-seeds", type=int, default=1)
        if name == "noise-grid":
            p.add_argument("--sigmas", type=float, nargs="+")
        if name == "beta-sweep":
            p.add_argument("--betas", type=float, nargs="+", default=list(BETA_GRID))
        p.set_defaults(handler=handler)

    p = sub.add_parser("gradcheck", parents=[_out_parent("gradcheck")], help="有限差分梯度检查")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    p.set_defaults(handler=cmd_gradcheck)
    return parser


# ====================================================================
# Helpers
# ====================================================================

def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"无法序列化 {type(obj).__name__}")


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default) + "\n",
                    encoding="utf-8")
    return path


def _write_run_record(args, outputs: Dict[str, Path], config: Optional[TrainConfig] = None, **extra) -> Path:
    """run.json 不含时间戳；除 timing 字段的各阶段耗时外，同样的参数与种子得到同样的内容"""
    record = {
        "command": args.command,
        "seed": config.seed if config is not None else getattr(args, "seed", None),
        "config": config.to_dict() if config is not None else None,
        "outputs": {k: str(v) for k, v in sorted(outputs.items())},
    }
    record.update(extra)
    return _write_json(args.out / "run.json", record)


def _config_overrides(args) -> dict:
    values = {}
    for name in _CONFIG_FLAGS:
        val = getattr(args, name, None)
        if val is None or (name == "pattern" and isinstance(val, list)):
            continue
        values[name] = val
    return values


def _make_config(args, splits) -> TrainConfig:
    """以 --profile 为默认值，命令行覆盖，任务与类别数取自数据"""
    train = splits.train
    try:
        return TrainConfig.from_profile(args.profile, task=train.task, n_classes=train.n_classes,
                                        **_config_overrides(args))
    except (ConfigError, ProtocolError) as exc:
        raise UsageError(str(exc)) from exc


def _grid_patterns(args) -> List[tuple]:
    if not args.pattern:
        return list(STANDARD_PATTERNS)
    try:
        return [parse_pattern(p) for p in args.pattern]
    except TMDCError as exc:
        raise UsageError(f"--pattern: {exc}") from exc


def _load_data(args):
    if not args.data.is_dir():
        raise UsageError(f"--data: 目录不存在 {args.data}")
    return load_splits(args.data)


# ====================================================================
# Commands
# ====================================================================

def cmd_gen_synth(args) -> int:
    try:
        spec = SynthSpec(n_samples=args.n_samples, shared_dim=args.shared_dim, task=args.task, seed=args.seed)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    paths = write_splits(gen_synthetic(spec), args.out)
    print(f"wrote synthetic dataset ({spec.n_samples} samples, task={spec.task}) to {args.out}")
    _write_run_record(args, paths, synth={"n_samples": spec.n_samples, "shared_dim": spec.shared_dim,
                                          "task": spec.task, "n_classes": spec.n_classes})
    return EXIT_OK


def cmd_convert(args) -> int:
    if not args.index.is_file():
        raise UsageError(f"--index: 文件不存在 {args.index}")
    paths = convert_table(args.index, args.out, args.task, args.n_classes)
    print(f"converted {args.index} -> {', '.join(str(p) for p in paths.values())}")
    _write_run_record(args, paths)
    return EXIT_OK


def cmd_train_imd(args) -> int:
    raw = _load_data(args)
    config = _make_config(args, raw)
    if not config.ablation.use_imd_pretrain:
        raise UsageError("--ablate imd 与 train-imd 冲突")
    splits, _ = prepare_scenario(raw, Scenario(FULL_PATTERN, config.noise_sigma), config.seed,
                                 fit_normalizer(raw.train))
    result = train_imd(config, splits.train)
    outputs = {
        "checkpoint": args.out / "checkpoint",
        "loss_table": args.out / "imd_losses.csv",
    }
    save_imd_checkpoint(outputs["checkpoint"], result, config)
    write_loss_table(result.history, outputs["loss_table"])
    counts = count_parameters(result.params, config.ablation)
    counts["stage_trainable"] = sum(result.params.named_tensors()[n].size for n in imd_trainable(result.params, config))
    print(f"imd: {result.epochs_done} epochs, final total loss {result.history['total'].iloc[-1]:.6f}"
          if len(result.history) else "imd: 0 epochs")
    print(f"imd wall-clock {result.seconds:.2f}s")
    print("parameters: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    _write_run_record(args, outputs, config, param_counts=counts, timing={"imd_seconds": result.seconds})
    return EXIT_OK


def cmd_train_imc(args) -> int:
    raw = _load_data(args)
    config = _make_config(args, raw)
    if args.init is None and config.ablation.use_imd_pretrain:
        raise UsageError("--init: 第二阶段需要第一阶段检查点，或使用 --ablate imd")
    if args.init is not None and not args.init.is_dir():
        raise UsageError(f"--init: 检查点目录不存在 {args.init}")
    init = args.init if config.ablation.use_imd_pretrain else None
    splits, normalizer = prepare_scenario(raw, config.scenario, config.seed, fit_normalizer(raw.train))
    result = train_imc(config, splits, init)
    outputs = {
        "checkpoint": args.out / "checkpoint",
        "metrics": args.out / "metrics.json",
        "history": args.out / "imc_history.csv",
    }
    save_imc_checkpoint(outputs["checkpoint"], result, config)
    result.history.to_csv(outputs["history"], index=False)
    _write_json(outputs["metrics"], {"best_epoch": result.best_epoch, "val": result.val_report.to_dict(),
                                     "test": result.test_report.to_dict()})
    if args.export_embeddings:
        for name, ds in splits.items():
            outputs[f"embeddings_{name}"] = args.out / f"embeddings_{name}.tmdf"
            export_embeddings(result.params, ds, outputs[f"embeddings_{name}"], config.options)
    counts = count_parameters(result.params, config.ablation)
    report = result.test_report
    print(f"imc [{config.scenario}] best epoch {result.best_epoch}: test {report.primary_name}={report.primary:.4f} "
          f"f1={report.f1:.4f}")
    print(f"imc wall-clock {result.seconds:.2f}s")
    print("parameters: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    _write_run_record(args, outputs, config, param_counts=counts, timing={"imc_seconds": result.seconds},
                      normalizer=normalizer.to_dict())
    return EXIT_OK


def _load_for_eval(args):
    raw = _load_data(args)
    if not args.init.is_dir():
        raise UsageError(f"--init: 检查点目录不存在 {args.init}")
    ckpt = checkpoint_load(args.init)
    overrides = {k: v for k, v in _config_overrides(args).items() if k in ("pattern", "noise_sigma", "seed")}
    try:
        config = ckpt.config.replace(**overrides)
    except (ConfigError, ProtocolError) as exc:
        raise UsageError(str(exc)) from exc
    params = ckpt.params
    best = {n[len("best/"):]: arr for n, arr in ckpt.extra.items() if n.startswith("best/")}
    if best:
        params.load_state_dict(best)
    splits, _ = prepare_scenario(raw, config.scenario, config.seed, fit_normalizer(raw.train))
    return config, params, splits


def cmd_eval(args) -> int:
    config, params, splits = _load_for_eval(args)
    report = evaluate(params, getattr(splits, args.split), config.options)
    outputs = {"metrics": args.out / "metrics.json"}
    _write_json(outputs["metrics"], report.to_dict())
    print(f"eval [{config.scenario}] {args.split}: {report.primary_name}={report.primary:.4f} f1={report.f1:.4f}")
    _write_run_record(args, outputs, config)
    return EXIT_OK


def cmd_analyze_cosine(args) -> int:
    config, params, splits = _load_for_eval(args)
    matrix = cosine_analysis(params, getattr(splits, args.split), config.options)
    outputs = {"cosine": args.out / "cosine.csv"}
    write_cosine_matrix(matrix, outputs["cosine"])
    print(matrix.round(4).to_string())
    _write_run_record(args, outputs, config, zero_norm_pairs=matrix.attrs.get("zero_norm_pairs", 0))
    return EXIT_OK


def _grid_metrics(config: TrainConfig):
    return ("wa", "ua") if config.task == "classification" and config.n_classes > 2 else ("acc", "f1")


def _emit_grid(args, config: TrainConfig, records: pd.DataFrame, index: str) -> int:
    metrics = _grid_metrics(config)
    tables = {m: pivot_grid(records, index, m) for m in metrics}
    summary = seed_summary(records, [index], metrics)
    outputs = {
        "table": args.out / "grid.json",
        "workbook": args.out / "grid.xlsx",
        "records": args.out / "records.csv",
    }
    _write_json(outputs["table"], {
        "index": index,
        "metrics": list(metrics),
        "tables": {m: to_json_table(t) for m, t in tables.items()},
        "seed_summary": to_json_table(summary),
        "n_seeds": args.n_seeds,
    })
    records.to_csv(outputs["records"], index=False)
    tasks = [{"df": t, "excel_name": outputs["workbook"], "sheet_name": m} for m, t in tables.items()]
    tasks.append({"df": summary, "excel_name": outputs["workbook"], "sheet_name": "seeds"})
    tasks.append({"df": records, "excel_name": outputs["workbook"], "sheet_name": "records", "index": False})
    to_sheet_many(tasks)
    for m, t in tables.items():
        print(f"{m}:")
        print((t * 100).round(2).to_string())
    _write_run_record(args, outputs, config, n_seeds=args.n_seeds)
    return EXIT_OK


def _grid_setup(args):
    if args.n_seeds < 1:
        raise UsageError("--n-seeds 必须 >= 1")
    raw = _load_data(args)
    return raw, _make_config(args, raw), _grid_patterns(args)


def cmd_ablate(args) -> int:
    raw, config, patterns = _grid_setup(args)
    if config.ablate:
        raise UsageError("--ablate: ablate 命令自行遍历全部消融变体")
    records = ablation_grid(config, raw, patterns, args.n_seeds)
    return _emit_grid(args, config, records, "variant")


def cmd_noise_grid(args) -> int:
    raw, config, patterns = _grid_setup(args)
    kwargs = {"sigmas": tuple(args.sigmas)} if args.sigmas else {}
    records = noise_grid(config, raw, patterns, n_seeds=args.n_seeds, **kwargs)
    return _emit_grid(args, config, records, "noise_sigma")


def cmd_beta_sweep(args) -> int:
    raw, config, patterns = _grid_setup(args)
    if any(b < 0 for b in args.betas):
        raise UsageError("--betas 不能为负")
    records = beta_sweep(config, raw, patterns, tuple(args.betas), args.n_seeds)
    return _emit_grid(args, config, records, "beta")


def cmd_gradcheck(args) -> int:
    results = run_gradient_suite(seed=args.seed)
    for name, err in results.items():
        print(f"{name:<24} {err:.3e}")
    failed = failed_checks(results, args.tolerance)
    if failed:
        print(f"FAILED: {', '.join(failed)} (tolerance {args.tolerance:g})")
    _write_run_record(args, {}, max_rel_error=dict(results), tolerance=args.tolerance, failed=failed)
    return EXIT_RUNTIME if failed else EXIT_OK


# ====================================================================
# Entry point
# ====================================================================

def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"tmdc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TMDCError, OSError) as exc:
        logger.debug("command failed", exc_info=True)
        print(f"tmdc {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
