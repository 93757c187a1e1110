"""
共享模块
"""
from .errors import (
    ActionStructureError, AsymptoticRegimeError, AsymptoticsError,
    CertificateFailure, CleanIntersectionError, ConfigError,
    FourierTableRangeError, NonSeparableAmplitudeError,
    PreconditionViolation, QuadratureAccuracyError,
    StageError, UnsupportedDepthError
)
from .models import (
    GroupAction, ValidationReport, IsotropyData,
    StratumSignature, Stratum, PhasePoint, CriticalityReport,
    Amplitude, AmplitudeFactor, QuadratureSpec, IntegralEstimate,
    IsotropyBranch, ResolutionChartPoint, BranchCertificate,
    RunConfig, AsymptoticsReport
)
from .utils import config_hash, null_space_rows, orthonormal_rows, substream

__all__ = [
    # 异常
    'AsymptoticsError', 'ConfigError', 'ActionStructureError',
    'PreconditionViolation', 'CleanIntersectionError', 'UnsupportedDepthError',
    'FourierTableRangeError', 'QuadratureAccuracyError', 'AsymptoticRegimeError',
    'NonSeparableAmplitudeError', 'CertificateFailure', 'StageError',
    # 模型
    'GroupAction', 'ValidationReport', 'IsotropyData',
    'StratumSignature', 'Stratum', 'PhasePoint', 'CriticalityReport',
    'Amplitude', 'AmplitudeFactor', 'QuadratureSpec', 'IntegralEstimate',
    'IsotropyBranch', 'ResolutionChartPoint', 'BranchCertificate',
    'RunConfig', 'AsymptoticsReport',
    # 工具函数
    'config_hash', 'null_space_rows', 'orthonormal_rows', 'substream'
]
