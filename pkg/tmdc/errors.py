"""
tmdc 异常类型

所有库内错误都继承自 TMDCError(ValueError)，
调用方按 ValueError 捕获依然有效。
"""


class TMDCError(ValueError):
    """tmdc 错误基类"""


# ==================== 张量与计算图 ====================

class ShapeError(TMDCError):
    """形状不匹配或非法维度"""


class DomainError(TMDCError):
    """参数超出定义域（log 非正数、dropout 比例 >= 1、负噪声强度等）"""


class NonFiniteError(TMDCError):
    """计算产生 NaN/Inf"""


class GraphError(TMDCError):
    """反向传播的前置条件不满足（非标量 loss、脱离计算图）"""


class NonDeterministicError(TMDCError):
    """有限差分检查发现前向计算不确定"""


# ==================== 协议与配置 ====================

class ProtocolError(TMDCError):
    """训练/推理协议被违反（IMD 批次缺模态、无可用模态、缺梯度等）"""


class ConfigError(TMDCError):
    """配置非法"""


# ==================== 文件格式 ====================

class TMDFError(TMDCError):
    """TMDF 张量文件错误基类"""


class BadMagicError(TMDFError):
    """文件头魔数不是 TMDF"""


class VersionMismatchError(TMDFError):
    """格式版本不受支持"""


class DtypeError(TMDFError):
    """数据类型编码不受支持"""


class TruncatedPayloadError(TMDFError):
    """文件被截断"""


class DimOverflowError(TMDFError):
    """维数或单维长度超出格式上限"""


class ManifestError(TMDCError):
    """数据集清单内容非法或引用文件缺失"""


# ==================== 检查点 ====================

class CheckpointError(TMDCError):
    """检查点错误基类"""


class DigestMismatchError(CheckpointError):
    """内容摘要与索引不一致"""


class MissingParameterError(CheckpointError):
    """索引中列出的参数文件不存在"""


class CheckpointShapeError(CheckpointError):
    """参数文件形状与索引或模型结构不一致"""


class GroupMismatchError(CheckpointError):
    """检查点的参数分组与目标配置（消融设置）不一致"""
