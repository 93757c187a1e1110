"""
异常定义
所有数值阶段抛出的错误都派生自 AsymptoticsError
"""
from typing import Any, Optional


class AsymptoticsError(Exception):
    """渐近分析错误基类"""


class ConfigError(AsymptoticsError):
    """配置文件无法加载或校验失败"""


class ActionStructureError(AsymptoticsError):
    """生成元矩阵形状与声明的 n, d 不一致"""


class PreconditionViolation(AsymptoticsError):
    """操作的前置条件不满足"""


class CleanIntersectionError(AsymptoticsError):
    """Hessian 核维数与临界流形切空间维数不一致"""

    def __init__(self, message: str, tangent_dim: int, expected_dim: int):
        super().__init__(message)
        self.tangent_dim = tangent_dim
        self.expected_dim = expected_dim


class UnsupportedDepthError(AsymptoticsError):
    """迷向分支深度超过 2"""


class FourierTableRangeError(AsymptoticsError):
    """请求频率超出预计算的 Fourier 表"""


class QuadratureAccuracyError(AsymptoticsError):
    """加密前后求积结果差异过大"""

    def __init__(self, message: str, mu: float):
        super().__init__(message)
        self.mu = mu


class AsymptoticRegimeError(AsymptoticsError):
    """拟合残差过大，μ 尚未进入渐近区间"""


class NonSeparableAmplitudeError(AsymptoticsError):
    """振幅函数不可分离"""


class CertificateFailure(AsymptoticsError):
    """数值证书未通过"""

    def __init__(self, message: str, worst_point: Optional[Any] = None):
        super().__init__(message)
        self.worst_point = worst_point


class StageError(AsymptoticsError):
    """带流水线阶段信息的包装错误"""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
