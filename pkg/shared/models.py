"""
共享数据模型定义
"""
from datetime import datetime, timezone
from enum import Enum
from typing import Annotated, Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PlainSerializer, PlainValidator, PrivateAttr, field_validator, model_validator


def _as_float_array(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=float)


def _to_list(value: np.ndarray) -> Any:
    return np.asarray(value, dtype=float).tolist()


# numpy 数组字段：校验时转为 float 数组，序列化为嵌套列表
FloatArray = Annotated[
    np.ndarray,
    PlainValidator(_as_float_array),
    PlainSerializer(_to_list, return_type=list),
]


# ============ 群作用 ============

class GroupAction(BaseModel):
    """紧李群在 ℝⁿ 上的正交作用，由李代数生成元给出"""
    n: int = Field(..., ge=1, description="环境维数")
    d: int = Field(..., ge=1, description="李代数维数")
    generators: List[List[List[float]]] = Field(..., description="d 个 n×n 生成元矩阵（行优先）")
    name: str = Field(default="", description="名称")

    _basis: Optional[np.ndarray] = PrivateAttr(default=None)

    model_config = ConfigDict(
        json_schema_extra={
            "example": {"n": 2, "d": 1, "generators": [[[0.0, -1.0], [1.0, 0.0]]], "name": "SO(2) on R^2"}
        }
    )

    def raw_generators(self) -> np.ndarray:
        """原始生成元，形状 (d, n, n)"""
        return np.asarray(self.generators, dtype=float)


class ValidationReport(BaseModel):
    """生成元校验报告"""
    skew_residual: float = Field(..., description="最大反对称残差（逐元素）")
    gram_min_eigenvalue: float = Field(..., description="Gram 矩阵最小特征值（相对）")
    bracket_residual: float = Field(..., description="李括号封闭性最大残差")
    violations: List[str] = Field(default_factory=list, description="违反的不变量")

    @property
    def ok(self) -> bool:
        return not self.violations


class IsotropyData(BaseModel):
    """迷向代数：点 x（或点对 (x, ξ)）的稳定子李代数"""
    base_point: FloatArray = Field(..., description="基点 x 或拼接的 (x, ξ)")
    algebra_basis: FloatArray = Field(..., description="正交系数向量（按行），形状 k×d")
    dimension: int = Field(..., ge=0, description="迷向代数维数")


class StratumSignature(BaseModel):
    """轨道型的数值签名"""
    isotropy_dim: int = Field(..., ge=0, description="迷向代数维数")
    fixed_subspace_dim: int = Field(..., ge=0, description="迷向代数不动子空间维数")
    variant: int = Field(default=0, ge=0, description="同维数下按不变包络区分的编号")

    model_config = ConfigDict(frozen=True)

    def label(self) -> str:
        return f"iso{self.isotropy_dim}-fix{self.fixed_subspace_dim}-v{self.variant}"


class Stratum(BaseModel):
    """采样得到的一个层"""
    signature: StratumSignature
    hull: FloatArray = Field(..., description="不动子空间的 G 不变线性包络（按行）")
    representatives: List[FloatArray] = Field(default_factory=list, description="代表点")


# ============ 相位 ============

class PhasePoint(BaseModel):
    """相空间 T*ℝⁿ × g 中的点"""
    x: FloatArray = Field(..., description="位置 x ∈ ℝⁿ")
    xi: FloatArray = Field(..., description="余向量 ξ ∈ ℝⁿ")
    t: FloatArray = Field(..., description="李代数系数 X = Σ t_i X_i")

    def stacked(self) -> np.ndarray:
        """按 (x, ξ, t) 顺序拼接"""
        return np.concatenate([self.x, self.xi, self.t])


class CriticalityReport(BaseModel):
    """临界性判定及其诊断"""
    is_critical: bool
    gradient_norm: float
    scale: float = Field(..., description="(1+‖x‖)(1+‖ξ‖)(1+‖t‖)")
    in_omega: bool = Field(..., description="(x, ξ) ∈ Ω")
    in_isotropy: bool = Field(..., description="X ∈ g_(x,ξ)")

    @property
    def consistent(self) -> bool:
        return self.is_critical == (self.in_omega and self.in_isotropy)


class CritSample(BaseModel):
    """正则临界流形上的样本"""
    point: PhasePoint
    tangent_dim: int
    nonzero_spectrum: List[float]
    transversal_det_abs: float = Field(..., gt=0)
    signature: int
    weight: Optional[float] = Field(default=None, description="曲面测度求积权重")


class ProjectionResult(BaseModel):
    """Gauss–Newton 投影结果"""
    point: Optional[PhasePoint] = None
    converged: bool
    singular: bool = Field(default=False, description="收敛到奇异层附近")
    iterations: int
    residual: float


class SurfaceMethod(str, Enum):
    """临界流形上的积分方法"""
    SLAB_MONTE_CARLO = "slab_monte_carlo"  # 薄层 Monte Carlo + 余面积因子
    CHART_GRID = "chart_grid"              # SO(2)/ℝ² 的显式参数化网格


class SurfaceQuadrature(BaseModel):
    """L₀ 曲面积分设置"""
    method: SurfaceMethod = Field(default=SurfaceMethod.SLAB_MONTE_CARLO)
    eps_slab: float = Field(default=1e-2, gt=0, description="薄层半宽")
    budget: int = Field(default=2_000_000, ge=1, description="采样点数")
    seed: Optional[int] = Field(default=None, description="为空时使用运行种子")
    eps_sweep: List[float] = Field(default_factory=list, description="收敛性扫描的薄层半宽")
    grid_nodes: int = Field(default=48, ge=8, description="chart_grid 每维节点数")


class L0Result(BaseModel):
    """领头系数 L₀ 的计算记录"""
    L0: float
    stderr_estimate: float
    method: SurfaceMethod
    n_accepted: int
    contamination_fraction: float = 0.0
    signatures: List[int] = Field(default_factory=list, description="观测到的横截 Hessian 符号差")
    richardson: Optional[float] = None
    sweep: Dict[str, float] = Field(default_factory=dict)


# ============ 振幅与求积 ============

class ProfileKind(str, Enum):
    """径向轮廓"""
    BUMP = "bump"
    GAUSSIAN = "gaussian"


class AmplitudeKind(str, Enum):
    """振幅类型"""
    BUMP_PRODUCT = "bump_product"
    GAUSSIAN_PRODUCT = "gaussian_product"


class AmplitudeFactor(BaseModel):
    """单个分块上的径向因子"""
    center: List[float] = Field(..., description="中心")
    radius: float = Field(..., gt=0, description="bump 半径或 gaussian 宽度 w")
    profile: Optional[ProfileKind] = Field(default=None, description="覆盖整体类型的轮廓")


class Amplitude(BaseModel):
    """可分离振幅 a(x, ξ, X) = scale·a_x(x)·a_ξ(ξ)·b(t)"""
    kind: AmplitudeKind = Field(default=AmplitudeKind.BUMP_PRODUCT)
    x: AmplitudeFactor
    xi: AmplitudeFactor
    t: AmplitudeFactor
    scale: float = Field(default=1.0)

    def profile_of(self, block: str) -> ProfileKind:
        factor: AmplitudeFactor = getattr(self, block)
        if factor.profile is not None:
            return factor.profile
        return ProfileKind.BUMP if self.kind == AmplitudeKind.BUMP_PRODUCT else ProfileKind.GAUSSIAN

    def scaled(self, factor: float) -> "Amplitude":
        return self.model_copy(update={"scale": self.scale * factor})


class ReductionKind(str, Enum):
    """I(μ) 的求值路径"""
    FULL_TENSOR = "full_tensor"
    FOURIER_REDUCED = "fourier_reduced"


class QuadratureSpec(BaseModel):
    """张量 Gauss–Legendre 求积设置"""
    nodes_per_dim: int = Field(default=32, ge=8, description="每维最少节点数")
    domain_boxes: Optional[Dict[str, List[List[float]]]] = Field(
        default=None, description="按分块的包围盒 {x|xi|t: [[lo, hi], ...]}，为空时由振幅推出"
    )
    mu_grid: List[float] = Field(default_factory=list, description="μ 网格")
    reduction: ReductionKind = Field(default=ReductionKind.FOURIER_REDUCED)
    node_factor: float = Field(default=8.0, gt=0, description="振荡分辨率系数")
    refine_factor: float = Field(default=1.5, gt=1.0, description="误差估计的加密倍数")
    rel_tol: float = Field(default=1e-4, gt=0, description="加密差异的相对容差")
    check_accuracy: bool = Field(default=True)

    @field_validator("mu_grid")
    @classmethod
    def _positive_mu(cls, values: List[float]) -> List[float]:
        if any(v <= 0 for v in values):
            raise ValueError("μ 必须为正")
        return values


class IntegralEstimate(BaseModel):
    """I(μ) 的一次求值"""
    mu: float
    re: float
    im: float
    err_estimate: float
    method: str
    nodes_per_dim: int = 0

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)


class SemianalyticResult(BaseModel):
    """SO(2)/ℝ² 余面积半解析结果"""
    mu: float
    re: float
    im: float
    slope: float = Field(..., description="μ→0 斜率 2π b(0) A(0)")
    A0: float
    b0: float

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)


# ============ 奇点解消 ============

class LevelData(BaseModel):
    """分支某一层的数值数据与标架"""
    signature: StratumSignature
    c: int = Field(..., ge=1, description="法丛纤维维数")
    d: int = Field(..., ge=0, description="dim g_p^⊥（相对上一层迷向代数）")
    e: int = Field(..., ge=0, description="dim g_p")
    base_point: FloatArray = Field(..., description="基点 p^(i_j)")
    a_frame: FloatArray = Field(..., description="g_p^⊥ 的正交系数基（按行）")
    b_frame: FloatArray = Field(..., description="g_p 的正交系数基（按行）")
    normal_frame: FloatArray = Field(..., description="法向纤维的正交基（按行，ℝⁿ 中）")
    slice_frame: FloatArray = Field(..., description="层内基点切片方向（按行）")


class IsotropyBranch(BaseModel):
    """迷向型链 (H_{i_1}) → … → 主轨道型"""
    action: GroupAction
    kappa: int
    stratum_chain: List[StratumSignature]
    N: int = Field(..., ge=1, le=2)
    levels: List[LevelData]

    def numerical_data(self) -> List[Dict[str, int]]:
        return [{"c": lv.c, "d": lv.d, "e": lv.e} for lv in self.levels]

    def label(self) -> str:
        return " -> ".join(sig.label() for sig in self.stratum_chain)

    def predicted_exponents(self) -> List[int]:
        out: List[int] = []
        acc = 0
        for lv in self.levels:
            acc += lv.d
            out.append(lv.c + acc - 1)
        return out


class ResolutionChartPoint(BaseModel):
    """θ 坐标卡中的点"""
    tau: FloatArray = Field(..., description="径向参数 τ_{i_j}")
    slice_coords: List[FloatArray] = Field(default_factory=list, description="各层基点切片坐标")
    theta: FloatArray = Field(..., description="球面 θ 坐标（维数 c_N − 1）")
    chart_index: int = Field(default=0, ge=0, description="θ 卡的特选坐标")
    alpha: List[FloatArray] = Field(default_factory=list, description="各层 α^(i_j)")
    beta: FloatArray = Field(..., description="β^(i_N)")
    xi: FloatArray = Field(..., description="余向量 ξ")


class Theorem1Record(BaseModel):
    """临界条件检查"""
    grad_zero: bool
    cond_I: bool
    cond_II: bool
    cond_III: bool
    gradient_norm: float

    @property
    def consistent(self) -> bool:
        return self.grad_zero == (self.cond_I and self.cond_II and self.cond_III)


class NondegeneracyRecord(BaseModel):
    """横截非退化检查"""
    kernel_dim: int
    expected_dim: int
    nonzero_min_abs: float
    bordered_residual: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.kernel_dim == self.expected_dim


class AlphaChartRecord(BaseModel):
    """α 坐标卡非平稳性"""
    applicable: bool
    min_grad: Optional[float] = None
    samples: int = 0


class BranchCertificate(BaseModel):
    """单个分支的数值证书"""
    branch: str
    numerical_data: List[Dict[str, int]]
    factorization_residual: float
    theorem1_pass: bool
    theorem1_discrepancies: int = 0
    theorem2_kernel_dims: List[int] = Field(default_factory=list)
    theorem2_expected_dim: int = 0
    bordered_max_residual: Optional[float] = None
    jacobian_exponents: List[float] = Field(default_factory=list)
    predicted_exponents: List[int] = Field(default_factory=list)
    lemma3_margins: List[int] = Field(default_factory=list)
    lemma3_pass: bool = True
    kappa_decomposition_pass: bool = True
    alpha_chart_min_grad: Optional[float] = None
    alpha_chart_decay_exponent: Optional[float] = None
    passed: bool = False


# ============ 运行配置与报告 ============

class MuGrid(BaseModel):
    """几何 μ 网格"""
    min: float = Field(default=0.02, gt=0)
    max: float = Field(default=0.3, gt=0)
    count: int = Field(default=12, ge=2)

    @model_validator(mode="after")
    def _ordered(self) -> "MuGrid":
        if self.min >= self.max:
            raise ValueError("mu_grid.min 必须小于 mu_grid.max")
        return self

    def values(self) -> List[float]:
        """严格递减的 μ 序列"""
        return [float(v) for v in np.geomspace(self.max, self.min, self.count)]


class Tolerances(BaseModel):
    """判定容差"""
    fit_exponent_tol: float = Field(default=0.05, gt=0)
    l0_rel_tol: float = Field(default=0.02, gt=0)
    null_rel_tol: float = Field(default=1e-8, gt=0, description="零测试：|I| ≤ tol·振幅质量")
    regime_factor: float = Field(default=10.0, gt=0, description="残差相对求积误差的倍数上限")
    imag_ratio_max: float = Field(default=0.1, gt=0)


class ResolveOptions(BaseModel):
    """奇点解消证书设置"""
    enabled: bool = False
    factorization_samples: int = Field(default=10_000, ge=1)
    theorem1_points: int = Field(default=1_000, ge=2)
    theorem2_points: int = Field(default=100, ge=1)
    kappa_samples: int = Field(default=100, ge=1)
    alpha_samples: int = Field(default=10_000, ge=1)
    decay_mu: List[float] = Field(default_factory=lambda: [0.05, 0.035, 0.025, 0.0175, 0.0125, 0.009])


class OutputOptions(BaseModel):
    """输出路径"""
    directory: str = Field(default="results")


class RunConfig(BaseModel):
    """一次运行的完整配置"""
    action: GroupAction
    amplitude: Amplitude
    mu_grid: MuGrid = Field(default_factory=MuGrid)
    oracle: QuadratureSpec = Field(default_factory=QuadratureSpec)
    surface: SurfaceQuadrature = Field(default_factory=SurfaceQuadrature)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    seed: int = Field(default=20240601, ge=0, lt=2**64)
    fit_points: int = Field(default=8, ge=4)
    kappa_samples: int = Field(default=100, ge=1)
    semianalytic: bool = Field(default=True, description="SO(2)/ℝ² 时附带余面积交叉验证")
    resolve: ResolveOptions = Field(default_factory=ResolveOptions)
    output: OutputOptions = Field(default_factory=OutputOptions)


class FitResult(BaseModel):
    """领头项拟合"""
    L0_fitted: float
    next_order_coeff: float
    residual: float
    exponent: float
    n_points: int


class AnalysisRecord(BaseModel):
    """analyze 子命令的输出：校验、κ、分层与迷向树"""
    action: str
    validation: ValidationReport
    kappa: int
    strata: List[Dict[str, Any]] = Field(default_factory=list)
    branches: List[Dict[str, Any]] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


class SweepRow(BaseModel):
    """μ 扫描表的一行"""
    mu: float
    re_I: float
    im_I: float
    err_estimate: float
    method: str


class Provenance(BaseModel):
    """来源信息"""
    config_hash: str
    seed: int
    versions: Dict[str, str]
    timestamp: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())


class AsymptoticsReport(BaseModel):
    """端到端验证报告"""
    kappa_declared: int
    kappa_fitted: Optional[float] = None
    L0_reference: float
    L0_reference_stderr: float = 0.0
    L0_fitted: Optional[float] = None
    next_order_coeff: Optional[float] = None
    fit_residual: Optional[float] = None
    L0_semianalytic: Optional[float] = None
    imag_ratio: Optional[float] = None
    amplitude_mass: float = 0.0
    table: List[SweepRow] = Field(default_factory=list)
    verdicts: Dict[str, bool] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)
    certificates: List[BranchCertificate] = Field(default_factory=list)
    provenance: Provenance
    config: RunConfig

    @property
    def passed(self) -> bool:
        return bool(self.verdicts) and all(self.verdicts.values())
