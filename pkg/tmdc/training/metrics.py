"""
评估指标

二分类（含回归分数转二分类）报告 ACC / F1，多分类报告 WA / UA。
所有指标都是混淆矩阵的纯函数。
"""

from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from sklearn.metrics import confusion_matrix

from ..data.dataset import Dataset, batch_iter
from ..errors import ProtocolError, ShapeError
from ..model.params import ModelOptions, TMDCParams
from ..model.stages import imc_forward
from ..utils import NoiseSource


@dataclass
class MetricReport:
    """
    一次评估的结果

    字段：
      - kind: 'binary' 或 'multiclass'
      - acc / f1: 二分类准确率与正类 F1；多分类时 acc = wa，f1 为宏平均 F1
      - wa / ua: 总体准确率与各类召回率的均值
      - confusion: 行为真实类别、列为预测类别
      - n_excluded: 回归任务中标签恰为 0、不参与二分类统计的样本数
    """
    kind: str
    acc: float
    f1: float
    wa: float
    ua: float
    per_class_recall: List[float]
    confusion: List[List[int]]
    n_eval: int
    n_excluded: int = 0
    mae: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def primary(self) -> float:
        """模型选择用的主指标：二分类为 ACC，多分类为 WA"""
        return self.acc if self.kind == "binary" else self.wa

    @property
    def primary_name(self) -> str:
        return "acc" if self.kind == "binary" else "wa"

    def to_dict(self) -> dict:
        return asdict(self)


def _safe_div(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


def metrics_from_confusion(cm, kind: Optional[str] = None, n_excluded: int = 0) -> MetricReport:
    """
    由混淆矩阵计算全部指标

    示例：
        >>> r = metrics_from_confusion([[2, 1], [1, 2]])
        >>> round(r.acc, 4), round(r.f1, 4)
        (0.6667, 0.6667)
    """
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] < 2:
        raise ShapeError(f"混淆矩阵必须是 CxC（C >= 2），得到 {cm.shape}")
    if (cm < 0).any():
        raise ShapeError("混淆矩阵不能有负数")
    total = int(cm.sum())
    if total == 0:
        raise ProtocolError("评估集为空")
    kind = kind or ("binary" if cm.shape[0] == 2 else "multiclass")

    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    diag = np.diag(cm)
    recalls = [_safe_div(diag[i], support[i]) for i in range(cm.shape[0])]
    wa = _safe_div(diag.sum(), total)
    present = [r for r, s in zip(recalls, support) if s > 0]
    ua = float(np.mean(present)) if present else 0.0

    if kind == "binary":
        tp, fp, fn = diag[1], cm[0, 1], cm[1, 0]
        f1 = _safe_div(2 * tp, 2 * tp + fp + fn)
    else:
        per_class_f1 = [_safe_div(2 * diag[i], support[i] + predicted[i]) for i in range(cm.shape[0])]
        f1 = float(np.mean(per_class_f1))

    return MetricReport(
        kind=kind,
        acc=wa,
        f1=f1,
        wa=wa,
        ua=ua,
        per_class_recall=recalls,
        confusion=cm.tolist(),
        n_eval=total,
        n_excluded=int(n_excluded),
    )


def predict(params: TMDCParams, dataset: Dataset, options: Optional[ModelOptions] = None,
            batch_size: int = 256) -> np.ndarray:
    """eval 模式（ε = 0、dropout 关闭）下的融合预测 [N, C]"""
    noise = NoiseSource.evaluation()
    outputs = [imc_forward(params, batch, noise, options).y_all.numpy()
               for batch in batch_iter(dataset, batch_size, shuffle_seed=None)]
    return np.concatenate(outputs, axis=0)


def report_from_predictions(outputs: np.ndarray, labels: np.ndarray, task: str, n_classes: int) -> MetricReport:
    """
    把模型输出转换为指标

    回归：分数 > 0 为正类，< 0 为负类，标签恰为 0 的样本不计；预测值 >= 0 记为正类。
    分类：取 argmax。
    """
    labels = np.asarray(labels)
    if labels.shape[0] == 0:
        raise ProtocolError("评估集为空")
    if task == "regression":
        scores = outputs.reshape(-1)
        keep = labels != 0
        if not keep.any():
            raise ProtocolError("回归标签全为 0，无法计算二分类指标")
        y_true = (labels[keep] > 0).astype(np.int64)
        y_pred = (scores[keep] >= 0).astype(np.int64)
        cm = confusion_matrix(y_true, y_pred, labels=[0, 1])
        report = metrics_from_confusion(cm, "binary", n_excluded=int((~keep).sum()))
        report.mae = float(np.mean(np.abs(scores - labels)))
        return report
    y_pred = outputs.argmax(axis=-1)
    cm = confusion_matrix(labels.astype(np.int64), y_pred, labels=list(range(n_classes)))
    return metrics_from_confusion(cm, "binary" if n_classes == 2 else "multiclass")


def evaluate(params: TMDCParams, dataset: Dataset, options: Optional[ModelOptions] = None,
             batch_size: int = 256) -> MetricReport:
    """
    在一个（已按场景处理过的）划分上评估融合预测

    说明：
      - 数据集的可用模式决定第二阶段走哪种补全拓扑
      - 空数据集抛出 ProtocolError
    """
    if len(dataset) == 0:
        raise ProtocolError("评估集为空")
    outputs = predict(params, dataset, options, batch_size)
    return report_from_predictions(outputs, dataset.labels, dataset.task, dataset.n_classes)
