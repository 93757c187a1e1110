"""
迷向分支上的奇点解消
θ 坐标卡、弱变换、δ 代换，以及因式分解/临界条件/横截非退化/Jacobian 指数等数值证书
"""
import math
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel

from engine.action_model import (
    algebra_element,
    fixed_subspace,
    generator_basis,
    isotropy_algebra,
    orbit_matrix,
    principal_orbit_dimension,
    stratify_sample,
)
from engine.oracle import bump_profile
from engine.phase import psi_array
from engine.settings import NumericsSettings, get_settings
from shared.errors import CertificateFailure, PreconditionViolation, UnsupportedDepthError
from shared.models import (
    AlphaChartRecord,
    BranchCertificate,
    GroupAction,
    IsotropyBranch,
    LevelData,
    NondegeneracyRecord,
    ResolutionChartPoint,
    ResolveOptions,
    StratumSignature,
    Theorem1Record,
)
from shared.utils import (
    align_frame,
    central_gradient,
    central_hessian,
    composite_gauss_legendre,
    gauss_legendre,
    graded_panels,
    null_space_rows,
    orthogonal_complement,
    orthonormal_rows,
    sinc,
    substream,
)


# ============ 迷向树 ============

def _project_rows(rows: np.ndarray, space: np.ndarray) -> np.ndarray:
    """rows 在 space（正交行基）上的投影"""
    if space.shape[0] == 0 or rows.shape[0] == 0:
        return np.zeros((rows.shape[0], space.shape[1]))
    return rows @ space.T @ space


def _remove_span(rows: np.ndarray, span: np.ndarray) -> np.ndarray:
    """rows 去掉 span（正交行基）方向的分量"""
    if span.shape[0] == 0:
        return rows
    return rows - rows @ span.T @ span


def _relative_isotropy_dim(action: GroupAction, v: np.ndarray, frame: np.ndarray, rtol: float) -> int:
    """dim(span(frame) ∩ g_v)"""
    if frame.shape[0] == 0:
        return 0
    mats = algebra_element(action, frame)
    rank, _ = null_space_rows((mats @ v).T, rtol)
    return frame.shape[0] - rank


def _subalgebra_candidates(frame: np.ndarray, rng: np.random.Generator, random_count: int = 8) -> List[np.ndarray]:
    k = frame.shape[0]
    rows = [frame[i] for i in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            rows.extend([frame[i] + frame[j], frame[i] - frame[j]])
    rows.extend(rng.standard_normal((random_count, k)) @ frame if k else [])
    return rows


def _singular_directions(
    action: GroupAction,
    space: np.ndarray,
    frame: np.ndarray,
    floor: int,
    ceiling: int,
    rng: np.random.Generator,
    settings: NumericsSettings,
) -> List[np.ndarray]:
    """space 单位球上相对迷向维数严格介于 floor 与 ceiling 之间的点"""
    found: List[np.ndarray] = []
    for coeffs in _subalgebra_candidates(frame, rng):
        mat = algebra_element(action, coeffs) @ space.T
        _, null = null_space_rows(mat, settings.rank_rtol)
        if null.shape[0] == 0:
            continue
        for _ in range(2):
            v = (rng.standard_normal(null.shape[0]) @ null) @ space
            v /= np.linalg.norm(v)
            dim = _relative_isotropy_dim(action, v, frame, settings.rank_rtol)
            if floor < dim < ceiling:
                found.append(v)
    return found


class Level2Frames(NamedTuple):
    a_frame: np.ndarray
    b_frame: np.ndarray
    normal_frame: np.ndarray
    fixed_in_fiber: np.ndarray


def level2_frames(
    action: GroupAction,
    level1: LevelData,
    p2: np.ndarray,
    settings: NumericsSettings,
    reference: Optional[LevelData] = None,
) -> Level2Frames:
    """
    第二层基点 p2 处的标架

    B = g_p2 ∩ g_p1，A 为 B 在 g_p1 中的正交补，
    法向纤维 ν = V₁ ⊖ (p2 + g·p2 + Fix(g_p2) ∩ V₁)。
    给出 reference 时按 Procrustes 对齐到参考标架。
    """
    v1 = level1.normal_frame
    iso = isotropy_algebra(action, p2, settings).algebra_basis
    b2 = orthonormal_rows(_project_rows(iso, level1.b_frame), settings.rank_rtol) if iso.shape[0] else np.zeros((0, action.d))
    a2 = orthonormal_rows(_remove_span(level1.b_frame, b2), settings.rank_rtol)
    fixed = fixed_subspace(action, b2, settings)
    fixed_v1 = orthonormal_rows(_project_rows(fixed, v1), settings.rank_rtol)
    tangent = orthonormal_rows(np.vstack([p2[None, :], orbit_matrix(action, p2).T, fixed_v1]), settings.rank_rtol)
    nu = orthonormal_rows(_remove_span(v1, tangent), settings.rank_rtol)
    if reference is not None:
        if b2.shape == reference.b_frame.shape:
            b2 = align_frame(b2, reference.b_frame)
        if a2.shape == reference.a_frame.shape:
            a2 = align_frame(a2, reference.a_frame)
        if nu.shape == reference.normal_frame.shape:
            nu = align_frame(nu, reference.normal_frame)
    return Level2Frames(a2, b2, nu, fixed_v1)


def _level_one(action: GroupAction, settings: NumericsSettings) -> LevelData:
    fix = fixed_subspace(action, np.eye(action.d), settings)
    normal = orthogonal_complement(fix, action.n, settings.rank_rtol)
    return LevelData(
        signature=StratumSignature(isotropy_dim=action.d, fixed_subspace_dim=fix.shape[0]),
        c=max(normal.shape[0], 1),
        d=0,
        e=action.d,
        base_point=np.zeros(action.n),
        a_frame=np.zeros((0, action.d)),
        b_frame=np.eye(action.d),
        normal_frame=normal,
        slice_frame=fix,
    )


def _principal_signature(action: GroupAction, seed: int, settings: NumericsSettings) -> StratumSignature:
    rng = substream(seed, 17)
    x = rng.standard_normal(action.n)
    iso = isotropy_algebra(action, x, settings)
    fixed = fixed_subspace(action, iso.algebra_basis, settings)
    return StratumSignature(isotropy_dim=iso.dimension, fixed_subspace_dim=fixed.shape[0])


def build_isotropy_tree(
    action: GroupAction,
    kappa: Optional[int] = None,
    seed: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> List[IsotropyBranch]:
    """
    枚举从不动点层出发的极大迷向型链

    第一层为 Fix(G)；在其法球面上搜索奇异方向得到第二层；
    第二层法球面上仍有奇异点时报告深度不受支持。

    Args:
        action: 群作用
        kappa: 主轨道维数，为空时采样计算
        seed: 候选方向的随机种子

    Returns:
        分支列表（N = 1 或 2）

    Raises:
        UnsupportedDepthError: 分支长度超过 2
    """
    settings = settings or get_settings()
    kappa = principal_orbit_dimension(action, seed=seed, settings=settings) if kappa is None else kappa
    floor = action.d - kappa
    logger.info(f"🌳 构建迷向树: {action.name or '?'}，κ = {kappa}")
    if kappa == 0:
        return []
    level1 = _level_one(action, settings)
    if level1.normal_frame.shape[0] == 0:
        return []
    principal = _principal_signature(action, seed, settings)

    rng = substream(seed, 5)
    directions = _singular_directions(action, level1.normal_frame, level1.b_frame, floor, level1.e, rng, settings)
    if not directions:
        branch = IsotropyBranch(
            action=action, kappa=kappa, stratum_chain=[level1.signature, principal], N=1, levels=[level1]
        )
        logger.info(f"✅ 单一分支 N=1: {branch.numerical_data()}")
        return [branch]

    strata = stratify_sample(action, directions, settings)
    branches: List[IsotropyBranch] = []
    for signature, stratum in strata.items():
        p2 = np.asarray(stratum.representatives[0], dtype=float)
        p2 = p2 / np.linalg.norm(p2)
        frames = level2_frames(action, level1, p2, settings)
        slice_frame = orthonormal_rows(_remove_span(frames.fixed_in_fiber, p2[None, :]), settings.rank_rtol)
        deeper = _singular_directions(action, frames.normal_frame, frames.b_frame, floor, frames.b_frame.shape[0], rng, settings)
        if frames.normal_frame.shape[0] and deeper:
            raise UnsupportedDepthError(f"层 {signature.label()} 之下仍有奇异轨道，分支长度超过 2")
        level2 = LevelData(
            signature=signature,
            c=frames.normal_frame.shape[0],
            d=frames.a_frame.shape[0],
            e=frames.b_frame.shape[0],
            base_point=p2,
            a_frame=frames.a_frame,
            b_frame=frames.b_frame,
            normal_frame=frames.normal_frame,
            slice_frame=slice_frame,
        )
        branches.append(
            IsotropyBranch(
                action=action,
                kappa=kappa,
                stratum_chain=[level1.signature, signature, principal],
                N=2,
                levels=[level1, level2],
            )
        )
    for branch in branches:
        logger.info(f"✅ 分支 {branch.label()}: {branch.numerical_data()}")
    return branches


def lemma3_margins(branch: IsotropyBranch) -> List[int]:
    """每层的 c + Σd − 1 − κ，应全部 ≥ 0"""
    margins: List[int] = []
    acc = 0
    for lv in branch.levels:
        acc += lv.d
        margins.append(lv.c + acc - 1 - branch.kappa)
    return margins


# ============ 坐标卡 ============

class ChartLayout(BaseModel):
    """拼接坐标 (σ, 各层切片, θ, 各层 α, β, ξ) 的分块"""
    N: int
    slice_dims: List[int]
    theta_dim: int
    alpha_dims: List[int]
    beta_dim: int
    n: int

    def blocks(self) -> List[Tuple[str, int]]:
        out = [("sigma", self.N)]
        out += [(f"slice{j}", k) for j, k in enumerate(self.slice_dims)]
        out.append(("theta", self.theta_dim))
        out += [(f"alpha{j}", k) for j, k in enumerate(self.alpha_dims)]
        out += [("beta", self.beta_dim), ("xi", self.n)]
        return out

    def offsets(self) -> Dict[str, slice]:
        out: Dict[str, slice] = {}
        start = 0
        for name, size in self.blocks():
            out[name] = slice(start, start + size)
            start += size
        return out

    @property
    def dim(self) -> int:
        return sum(size for _, size in self.blocks())

    def split(self, u: np.ndarray) -> Dict[str, np.ndarray]:
        u = np.asarray(u, dtype=float)
        return {name: u[sl] for name, sl in self.offsets().items()}

    def to_point(self, u: np.ndarray, chart_index: int = 0, sigma_coords: bool = True) -> ResolutionChartPoint:
        """拼接坐标 → 坐标卡点；sigma_coords 为真时首块按 σ 经 δ 代换"""
        parts = self.split(u)
        first = parts["sigma"]
        tau = delta_substitution(first) if sigma_coords else first.copy()
        return ResolutionChartPoint(
            tau=tau,
            slice_coords=[parts[f"slice{j}"] for j in range(len(self.slice_dims))],
            theta=parts["theta"],
            chart_index=chart_index,
            alpha=[parts[f"alpha{j}"] for j in range(len(self.alpha_dims))],
            beta=parts["beta"],
            xi=parts["xi"],
        )


def layout_of(branch: IsotropyBranch) -> ChartLayout:
    last = branch.levels[-1]
    return ChartLayout(
        N=branch.N,
        slice_dims=[lv.slice_frame.shape[0] for lv in branch.levels],
        theta_dim=last.c - 1,
        alpha_dims=[lv.d for lv in branch.levels],
        beta_dim=last.e,
        n=branch.action.n,
    )


def delta_substitution(sigma: np.ndarray) -> np.ndarray:
    """
    δ：依次以第 k 个坐标乘其余坐标

    N = 2 时 τ = (σ₁²σ₂, σ₁σ₂)。
    """
    tau = np.array(sigma, dtype=float)
    for k in range(tau.size):
        factor = tau[k]
        others = np.arange(tau.size) != k
        tau[others] = tau[others] * factor
    return tau


def delta_jacobian(sigma: np.ndarray) -> np.ndarray:
    """δ 的雅可比矩阵（随步骤前向传播）"""
    tau = np.array(sigma, dtype=float)
    jac = np.eye(tau.size)
    for k in range(tau.size):
        factor, dfactor = tau[k], jac[k].copy()
        for i in range(tau.size):
            if i != k:
                jac[i] = jac[i] * factor + tau[i] * dfactor
                tau[i] = tau[i] * factor
    return jac


def delta_det(sigma: np.ndarray) -> float:
    """|det Dδ|"""
    return float(abs(np.linalg.det(delta_jacobian(sigma))))


def _theta_vector(frame: np.ndarray, theta: np.ndarray, chart_index: int) -> np.ndarray:
    """θ 卡中的单位向量 (v_ρ + Σθ_i v_i)/√(1+|θ|²)"""
    others = [i for i in range(frame.shape[0]) if i != chart_index]
    v = frame[chart_index] + (np.asarray(theta) @ frame[others] if others else 0.0)
    return v / math.sqrt(1.0 + float(np.dot(theta, theta)))


class ChartGeometry(NamedTuple):
    tau: np.ndarray
    base_points: List[np.ndarray]
    a_frames: List[np.ndarray]
    b_frame: np.ndarray
    v: np.ndarray
    y: Optional[np.ndarray]
    x: np.ndarray
    t: np.ndarray
    x_levels: List[np.ndarray]


def chart_geometry(
    branch: IsotropyBranch,
    point: ResolutionChartPoint,
    settings: Optional[NumericsSettings] = None,
) -> ChartGeometry:
    """坐标卡点的全部几何量：基点、当前标架、ṽ、x 与 X 的系数"""
    settings = settings or get_settings()
    action = branch.action
    tau = np.asarray(point.tau, dtype=float)
    lv1 = branch.levels[0]
    s1 = point.slice_coords[0] if point.slice_coords else np.zeros(0)
    p1 = lv1.base_point + (s1 @ lv1.slice_frame if s1.size else 0.0)
    alpha = point.alpha or [np.zeros(lv.d) for lv in branch.levels]
    beta = np.asarray(point.beta, dtype=float)

    if branch.N == 1:
        v = _theta_vector(lv1.normal_frame, point.theta, point.chart_index)
        x = p1 + tau[0] * v
        t = tau[0] * (alpha[0] @ lv1.a_frame) + beta @ lv1.b_frame
        return ChartGeometry(tau, [p1], [lv1.a_frame], lv1.b_frame, v, None, x, t, [x])

    lv2 = branch.levels[1]
    s2 = point.slice_coords[1] if len(point.slice_coords) > 1 else np.zeros(0)
    p2 = lv2.base_point + (s2 @ lv2.slice_frame if s2.size else 0.0)
    p2 = p2 / np.linalg.norm(p2)
    if s2.size and np.any(s2 != 0.0):
        frames = level2_frames(action, lv1, p2, settings, reference=lv2)
        a2, b2, nu = frames.a_frame, frames.b_frame, frames.normal_frame
    else:
        a2, b2, nu = lv2.a_frame, lv2.b_frame, lv2.normal_frame
    v = _theta_vector(nu, point.theta, point.chart_index)
    y = math.cos(tau[1]) * p2 + math.sin(tau[1]) * v
    x = p1 + tau[0] * y
    t = tau[0] * tau[1] * (alpha[0] @ lv1.a_frame) + tau[1] * (alpha[1] @ a2) + beta @ b2
    return ChartGeometry(tau, [p1, p2], [lv1.a_frame, a2], b2, v, y, x, t, [x, y])


def chart_to_ambient(
    branch: IsotropyBranch,
    point: ResolutionChartPoint,
    settings: Optional[NumericsSettings] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    坐标卡 → (x, X 的系数)

    N=1: x = p + τṽ, X = τA + B；
    N=2: x = p₁ + τ₁(cos τ₂ p₂ + sin τ₂ ṽ), X = τ₁τ₂A₁ + τ₂A₂ + B₂。
    """
    settings = settings or get_settings()
    if np.any(np.abs(point.tau) >= settings.chart_T):
        raise PreconditionViolation(f"|τ| 必须小于 T = {settings.chart_T}")
    geom = chart_geometry(branch, point, settings)
    return geom.x, geom.t


def _weak_from_geometry(branch: IsotropyBranch, geom: ChartGeometry, point: ResolutionChartPoint, xi: np.ndarray) -> float:
    action = branch.action
    alpha = point.alpha or [np.zeros(lv.d) for lv in branch.levels]
    bmat = algebra_element(action, np.asarray(point.beta) @ geom.b_frame)
    a1 = algebra_element(action, alpha[0] @ geom.a_frames[0])
    p1 = geom.base_points[0]
    if branch.N == 1:
        tau = geom.tau[0]
        return float((a1 @ p1 + bmat @ geom.v) @ xi + tau * (a1 @ geom.v) @ xi)

    tau1, tau2 = geom.tau
    a2 = algebra_element(action, alpha[1] @ geom.a_frames[1])
    p2 = geom.base_points[1]
    main = (a1 @ p1 + a2 @ p2 + bmat @ geom.v) @ xi
    correction = (
        tau1 * (a1 @ geom.y) @ xi
        + ((math.cos(tau2) - 1.0) * (a2 @ p2) + math.sin(tau2) * (a2 @ geom.v)) @ xi
        + (float(sinc(tau2)) - 1.0) * (bmat @ geom.v) @ xi
    )
    return float(main + correction)


def weak_transform(
    branch: IsotropyBranch,
    point: ResolutionChartPoint,
    xi: Optional[np.ndarray] = None,
    settings: Optional[NumericsSettings] = None,
) -> float:
    """
    弱变换 ψ̃^wk 的闭式：主项加上显式的 O(τ) 修正项

    Args:
        branch: 迷向分支
        point: 坐标卡点
        xi: 余向量，为空时使用 point.xi

    Returns:
        ψ̃^wk 的值
    """
    xi = np.asarray(point.xi if xi is None else xi, dtype=float)
    geom = chart_geometry(branch, point, settings)
    return _weak_from_geometry(branch, geom, point, xi)


def weak_of_coords(branch: IsotropyBranch, layout: ChartLayout, chart_index: int, settings: NumericsSettings):
    """σ 参数化下的 ψ̃^wk，作为拼接坐标的函数"""
    def f(u: np.ndarray) -> float:
        point = layout.to_point(u, chart_index)
        return weak_transform(branch, point, settings=settings)
    return f


# ============ 采样 ============

def random_coords(
    branch: IsotropyBranch,
    rng: np.random.Generator,
    first_range: float = 0.6,
    slice_range: float = 0.3,
    theta_range: float = 0.5,
    algebra_range: float = 2.0,
) -> np.ndarray:
    """拼接坐标的随机点（ξ 取标准正态）"""
    layout = layout_of(branch)
    u = np.empty(layout.dim)
    for name, sl in layout.offsets().items():
        size = sl.stop - sl.start
        if name == "sigma":
            u[sl] = rng.uniform(-first_range, first_range, size)
        elif name.startswith("slice"):
            u[sl] = rng.uniform(-slice_range, slice_range, size)
        elif name == "theta":
            u[sl] = rng.uniform(-theta_range, theta_range, size)
        elif name == "xi":
            u[sl] = rng.standard_normal(size)
        else:
            u[sl] = rng.uniform(-algebra_range, algebra_range, size)
    return u


class OrbitSubspaces(NamedTuple):
    E: List[np.ndarray]
    F: np.ndarray


def orbit_subspaces(branch: IsotropyBranch, geom: ChartGeometry) -> OrbitSubspaces:
    """E^(j) = A_j·x^(j…N)（按行张成），F = B_N·ṽ"""
    action = branch.action
    basis = generator_basis(action)
    E = []
    for frame, xl in zip(geom.a_frames, geom.x_levels):
        mats = np.einsum("rd,dij->rij", frame, basis) if frame.shape[0] else np.zeros((0, action.n, action.n))
        E.append(mats @ xl)
    bmats = np.einsum("rd,dij->rij", geom.b_frame, basis) if geom.b_frame.shape[0] else np.zeros((0, action.n, action.n))
    return OrbitSubspaces(E=E, F=bmats @ geom.v)


def critical_coords(
    branch: IsotropyBranch,
    rng: np.random.Generator,
    zero_sigma: bool = False,
    settings: Optional[NumericsSettings] = None,
) -> np.ndarray:
    """
    构造 ψ̃^wk 的临界点：α = 0，B(β)ṽ = 0，ξ ⊥ (⊕E ⊕ F)

    zero_sigma 为真时随机一个 σ 坐标取 0（此时所有 τ = 0）。
    """
    settings = settings or get_settings()
    layout = layout_of(branch)
    off = layout.offsets()
    u = random_coords(branch, rng)
    if zero_sigma:
        u[off["sigma"].start + int(rng.integers(layout.N))] = 0.0
    for j in range(branch.N):
        u[off[f"alpha{j}"]] = 0.0
    point = layout.to_point(u)
    geom = chart_geometry(branch, point, settings)
    spaces = orbit_subspaces(branch, geom)
    # β ∈ ker(β ↦ B(β)ṽ)
    _, kernel = null_space_rows(spaces.F.T, settings.rank_rtol)
    u[off["beta"]] = rng.standard_normal(kernel.shape[0]) @ kernel if kernel.shape[0] else 0.0
    span = np.vstack(spaces.E + [spaces.F])
    complement = orthogonal_complement(span, branch.action.n, settings.rank_rtol)
    u[off["xi"]] = rng.standard_normal(complement.shape[0]) @ complement if complement.shape[0] else 0.0
    return u


# ============ 证书 ============

def check_factorization(
    branch: IsotropyBranch,
    sample_count: int,
    seed: int,
    bound: float = 1e-11,
    settings: Optional[NumericsSettings] = None,
) -> float:
    """
    max |ψ∘ζ − Πτ·ψ̃^wk| / scale，scale = (1+‖ξ‖)(1+‖α‖+‖β‖)

    Raises:
        CertificateFailure: 残差超过 bound，附带最差点
    """
    settings = settings or get_settings()
    layout = layout_of(branch)
    rng = substream(seed, 21)
    worst, worst_point = 0.0, None
    for _ in range(sample_count):
        u = random_coords(branch, rng, first_range=settings.chart_T)
        point = layout.to_point(u, sigma_coords=False)
        geom = chart_geometry(branch, point, settings)
        total = float(psi_array(branch.action, geom.x, point.xi, geom.t))
        weak = _weak_from_geometry(branch, geom, point, point.xi)
        algebra = sum(float(np.linalg.norm(a)) for a in point.alpha) + float(np.linalg.norm(point.beta))
        scale = (1.0 + float(np.linalg.norm(point.xi))) * (1.0 + algebra)
        residual = abs(total - float(np.prod(point.tau)) * weak) / scale
        if residual > worst:
            worst, worst_point = residual, point
    logger.debug(f"因式分解残差 {worst:.2e}（{sample_count} 个样本）")
    if worst > bound:
        raise CertificateFailure(f"因式分解残差 {worst:.3e} 超过 {bound:.0e}", worst_point=worst_point)
    return worst


def check_theorem1_conditions(
    branch: IsotropyBranch,
    coords: np.ndarray,
    chart_index: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> Theorem1Record:
    """
    有限差分判定 ∇ψ̃^wk = 0，并直接检查三个条件：
    (I) α = 0 且 B(β)ṽ = 0；(II) ξ ⊥ E^(j)；(III) ξ ⊥ F

    Args:
        branch: 迷向分支
        coords: σ 参数化的拼接坐标

    Returns:
        判定记录
    """
    settings = settings or get_settings()
    layout = layout_of(branch)
    f = weak_of_coords(branch, layout, chart_index, settings)
    grad = central_gradient(f, np.asarray(coords, dtype=float), settings.fd_step)
    grad_norm = float(np.linalg.norm(grad))

    point = layout.to_point(coords, chart_index)
    geom = chart_geometry(branch, point, settings)
    spaces = orbit_subspaces(branch, geom)
    xi = np.asarray(point.xi)
    x, _ = chart_to_ambient(branch, point, settings)
    tol = settings.grad_zero_tol * (1.0 + float(np.linalg.norm(xi)))
    # 与 phase.is_critical 相同的尺度
    grad_tol = settings.grad_zero_tol * (1.0 + float(np.linalg.norm(x))) * (1.0 + float(np.linalg.norm(xi)))
    b_v = algebra_element(branch.action, np.asarray(point.beta) @ geom.b_frame) @ geom.v
    cond_I = all(float(np.max(np.abs(a), initial=0.0)) <= settings.grad_zero_tol for a in point.alpha)
    cond_I = cond_I and float(np.linalg.norm(b_v)) <= settings.grad_zero_tol
    cond_II = all(float(np.max(np.abs(e @ xi), initial=0.0)) <= tol for e in spaces.E)
    cond_III = float(np.max(np.abs(spaces.F @ xi), initial=0.0)) <= tol
    return Theorem1Record(
        grad_zero=grad_norm <= grad_tol,
        cond_I=cond_I,
        cond_II=cond_II,
        cond_III=cond_III,
        gradient_norm=grad_norm,
    )


def perturb_coords(
    branch: IsotropyBranch,
    coords: np.ndarray,
    rng: np.random.Generator,
    size: float = 1e-3,
    settings: Optional[NumericsSettings] = None,
) -> np.ndarray:
    """把临界点沿 α、β（离开核）或 ξ（进入 ⊕E ⊕ F）推离临界集"""
    settings = settings or get_settings()
    layout = layout_of(branch)
    off = layout.offsets()
    u = np.array(coords, dtype=float)
    geom = chart_geometry(branch, layout.to_point(u), settings)
    spaces = orbit_subspaces(branch, geom)
    options = ["xi"]
    if sum(layout.alpha_dims):
        options.append("alpha")
    rank, _ = null_space_rows(spaces.F.T, settings.rank_rtol)
    if rank:
        options.append("beta")
    choice = options[int(rng.integers(len(options)))]
    if choice == "alpha":
        live = [j for j, k in enumerate(layout.alpha_dims) if k]
        j = live[int(rng.integers(len(live)))]
        sl = off[f"alpha{j}"]
        u[sl.start + int(rng.integers(sl.stop - sl.start))] += size
    elif choice == "beta":
        vt = np.linalg.svd(spaces.F.T)[2]
        u[off["beta"]] += size * vt[0]
    else:
        span = orthonormal_rows(np.vstack(spaces.E + [spaces.F]), settings.rank_rtol)
        direction = rng.standard_normal(span.shape[0]) @ span
        u[off["xi"]] += size * direction / np.linalg.norm(direction)
    return u


def hessian_of_coords(
    branch: IsotropyBranch,
    coords: np.ndarray,
    chart_index: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> np.ndarray:
    """ψ̃^wk 在全部坐标上的有限差分 Hessian（带 Richardson 外推）"""
    settings = settings or get_settings()
    layout = layout_of(branch)
    f = weak_of_coords(branch, layout, chart_index, settings)
    hess = central_hessian(f, np.asarray(coords, dtype=float), settings.fd_hess_step, richardson=True)
    return 0.5 * (hess + hess.T)


def bordered_matrix(
    branch: IsotropyBranch,
    coords: np.ndarray,
    chart_index: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    τ = 0 时 (ξ, α, β) 块上的 Hessian：∂α∂ξ = A p，∂β∂ξ = B ṽ，其余为 0

    Returns:
        (矩阵, 对应的拼接坐标下标)
    """
    settings = settings or get_settings()
    layout = layout_of(branch)
    off = layout.offsets()
    point = layout.to_point(coords, chart_index)
    geom = chart_geometry(branch, point, settings)
    basis = generator_basis(branch.action)
    columns: List[np.ndarray] = []
    indices: List[int] = list(range(off["xi"].start, off["xi"].stop))
    for j, (frame, base) in enumerate(zip(geom.a_frames, geom.base_points)):
        sl = off[f"alpha{j}"]
        for r in range(frame.shape[0]):
            columns.append(np.einsum("d,dij->ij", frame[r], basis) @ base)
        indices.extend(range(sl.start, sl.stop))
    for r in range(geom.b_frame.shape[0]):
        columns.append(np.einsum("d,dij->ij", geom.b_frame[r], basis) @ geom.v)
    indices.extend(range(off["beta"].start, off["beta"].stop))
    n = branch.action.n
    k = len(columns)
    mat = np.zeros((n + k, n + k))
    if k:
        border = np.stack(columns, axis=1)
        mat[:n, n:] = border
        mat[n:, :n] = border.T
    return mat, np.asarray(indices)


def check_transversal_nondegeneracy(
    branch: IsotropyBranch,
    coords: np.ndarray,
    chart_index: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> NondegeneracyRecord:
    """
    临界点处有限差分 Hessian 的核维数应为 坐标维数 − 2κ；
    τ = 0 时另与显式加边矩阵对照

    Raises:
        PreconditionViolation: coords 不是临界点
    """
    settings = settings or get_settings()
    record = check_theorem1_conditions(branch, coords, chart_index, settings)
    if not record.grad_zero:
        raise PreconditionViolation(f"不是 ψ̃^wk 的临界点：|∇| = {record.gradient_norm:.3e}")
    layout = layout_of(branch)
    hess = hessian_of_coords(branch, coords, chart_index, settings)
    eig = np.linalg.eigvalsh(hess)
    scale = float(np.max(np.abs(eig)))
    nonzero = np.abs(eig) > settings.chart_kernel_rtol * scale
    kernel_dim = int(np.count_nonzero(~nonzero))
    bordered_residual = None
    point = layout.to_point(coords, chart_index)
    if np.all(np.asarray(point.tau) == 0.0):
        mat, idx = bordered_matrix(branch, coords, chart_index, settings)
        bordered_residual = float(np.max(np.abs(hess[np.ix_(idx, idx)] - mat)))
    return NondegeneracyRecord(
        kernel_dim=kernel_dim,
        expected_dim=layout.dim - 2 * branch.kappa,
        nonzero_min_abs=float(np.min(np.abs(eig[nonzero]))) if np.any(nonzero) else 0.0,
        bordered_residual=bordered_residual,
    )


def check_kappa_decomposition(
    branch: IsotropyBranch,
    samples: int,
    seed: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> Tuple[bool, List[int]]:
    """
    Σ dim E^(j) + dim F = κ，且各子空间构成直和

    Returns:
        (是否全部通过, 最后一个样本的维数 [dim E^(1), …, dim F])
    """
    settings = settings or get_settings()
    layout = layout_of(branch)
    rng = substream(seed, 23)
    ok = True
    dims: List[int] = []
    for _ in range(samples):
        u = random_coords(branch, rng)
        sl = layout.offsets()["sigma"]
        # σ ≠ 0 保证 x 属于主轨道型
        u[sl] = np.where(np.abs(u[sl]) < 0.05, 0.3, u[sl])
        geom = chart_geometry(branch, layout.to_point(u), settings)
        spaces = orbit_subspaces(branch, geom)
        dims = [orthonormal_rows(e, 1e-8).shape[0] if e.shape[0] else 0 for e in spaces.E]
        dims.append(orthonormal_rows(spaces.F, 1e-8).shape[0] if spaces.F.shape[0] else 0)
        union = orthonormal_rows(np.vstack(spaces.E + [spaces.F]), 1e-8).shape[0]
        if sum(dims) != branch.kappa or union != sum(dims):
            ok = False
            logger.warning(f"⚠️ κ 分解失败：dims = {dims}, 并集维数 {union}, κ = {branch.kappa}")
    return ok, dims


def _ambient_of_tau_coords(branch: IsotropyBranch, layout: ChartLayout, chart_index: int, settings: NumericsSettings):
    def f(w: np.ndarray) -> np.ndarray:
        u = np.concatenate([w, np.zeros(layout.n)])
        geom = chart_geometry(branch, layout.to_point(u, chart_index, sigma_coords=False), settings)
        return np.concatenate([geom.x, geom.t])
    return f


def chart_jacobian_abs(
    branch: IsotropyBranch,
    tau_coords: np.ndarray,
    step: float,
    chart_index: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> float:
    """|det D(chart_to_ambient)|（非方阵时取 Gram 行列式的平方根）"""
    settings = settings or get_settings()
    layout = layout_of(branch)
    f = _ambient_of_tau_coords(branch, layout, chart_index, settings)
    w = np.asarray(tau_coords, dtype=float)
    cols = []
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = step
        cols.append((f(w + e) - f(w - e)) / (2.0 * step))
    jac = np.stack(cols, axis=1)
    if jac.shape[0] == jac.shape[1]:
        return float(abs(np.linalg.det(jac)))
    return float(math.sqrt(abs(np.linalg.det(jac.T @ jac))))


def check_jacobian_exponent(
    branch: IsotropyBranch,
    level: int,
    seed: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> float:
    """
    沿 τ_j → 0 的射线拟合 log|det D ζ| 对 log τ_j 的斜率

    其余 τ 固定为 0.3，其它坐标取固定的随机值；差分步长与 τ_j 成比例。
    """
    settings = settings or get_settings()
    layout = layout_of(branch)
    rng = substream(seed, 13, level)
    w = random_coords(branch, rng)[: layout.dim - layout.n]
    w[: layout.N] = 0.3
    taus = np.geomspace(1e-4, 1e-2, 9)
    logs = []
    for tau in taus:
        w[level] = tau
        logs.append(math.log(chart_jacobian_abs(branch, w, 1e-3 * tau, settings=settings)))
    slope = float(np.polyfit(np.log(taus), np.asarray(logs), 1)[0])
    logger.debug(f"第 {level + 1} 层 Jacobian 指数 {slope:.5f}")
    return slope


# ============ α 坐标卡 ============

class AlphaChartTerms(NamedTuple):
    """α 卡中 ∂_ξ ψ̃^wk 关于 τ 的展开系数"""
    a1p1: np.ndarray
    a1p2: np.ndarray
    a1u: np.ndarray
    ap2: np.ndarray
    au: np.ndarray
    bu: np.ndarray
    norm_u: float


def _alpha_level(branch: IsotropyBranch) -> Optional[int]:
    if branch.N != 2 or branch.levels[1].d < 1:
        return None
    return 1


def alpha_chart_terms(
    branch: IsotropyBranch,
    u: np.ndarray,
    alpha_free: np.ndarray,
    distinguished: int,
    beta: np.ndarray,
    alpha1: Optional[np.ndarray] = None,
    slice_coords: Optional[List[np.ndarray]] = None,
    settings: Optional[NumericsSettings] = None,
) -> AlphaChartTerms:
    """
    α 卡：x = p₁ + τ₁·exp_{p₂}(τ₂u)，X = τ₁τ₂A₁ + τ₂Ã₂ + B₂，Ã₂ 的特选系数为 1

    返回与 τ 无关的各项，由 alpha_chart_gradient 组装。
    """
    settings = settings or get_settings()
    if _alpha_level(branch) is None:
        raise PreconditionViolation("分支没有 α 坐标卡")
    action = branch.action
    lv1, lv2 = branch.levels
    coeffs = np.insert(np.asarray(alpha_free, dtype=float), distinguished, 1.0)
    slices = slice_coords or [np.zeros(lv.slice_frame.shape[0]) for lv in branch.levels]
    p1 = lv1.base_point + (slices[0] @ lv1.slice_frame if slices[0].size else 0.0)
    p2 = lv2.base_point + (slices[1] @ lv2.slice_frame if slices[1].size else 0.0)
    p2 = p2 / np.linalg.norm(p2)
    if slices[1].size and np.any(slices[1] != 0.0):
        frames = level2_frames(action, lv1, p2, settings, reference=lv2)
        a2, b2, nu = frames.a_frame, frames.b_frame, frames.normal_frame
    else:
        a2, b2, nu = lv2.a_frame, lv2.b_frame, lv2.normal_frame
    u_amb = np.asarray(u, dtype=float) @ nu
    norm_u = float(np.linalg.norm(u_amb))
    u_hat = u_amb / norm_u if norm_u > 0 else np.zeros_like(u_amb)
    a1 = algebra_element(action, (np.zeros(lv1.d) if alpha1 is None else np.asarray(alpha1)) @ lv1.a_frame)
    a_tilde = algebra_element(action, coeffs @ a2)
    bmat = algebra_element(action, np.asarray(beta, dtype=float) @ b2)
    return AlphaChartTerms(
        a1p1=a1 @ p1,
        a1p2=a1 @ p2,
        a1u=a1 @ u_hat,
        ap2=a_tilde @ p2,
        au=a_tilde @ u_hat,
        bu=bmat @ u_amb,
        norm_u=norm_u,
    )


def alpha_chart_gradient(terms: AlphaChartTerms, tau1: np.ndarray, tau2: np.ndarray) -> np.ndarray:
    """
    ∂_ξ ψ̃^wk = A₁p₁ + τ₁A₁y + Ã₂y + S·B₂u，与 ξ 无关

    y = cos(τ₂|u|)p₂ + sin(τ₂|u|)û，S = sin(τ₂|u|)/(τ₂|u|)；τ 可为任意形状的数组。
    """
    tau1 = np.asarray(tau1, dtype=float)[..., None]
    angle = np.asarray(tau2, dtype=float)[..., None] * terms.norm_u
    cos, sin = np.cos(angle), np.sin(angle)
    a1y = cos * terms.a1p2 + sin * terms.a1u
    ay = cos * terms.ap2 + sin * terms.au
    return terms.a1p1 + tau1 * a1y + ay + sinc(angle) * terms.bu


def check_alpha_chart_nonstationary(
    branch: IsotropyBranch,
    samples: int,
    seed: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> AlphaChartRecord:
    """α 卡紧致样本盒上 min ‖∂_ξ ψ̃^wk‖；无 α 卡的分支报告不适用"""
    settings = settings or get_settings()
    if _alpha_level(branch) is None:
        return AlphaChartRecord(applicable=False)
    rng = substream(seed, 29)
    lv1, lv2 = branch.levels
    T = settings.chart_T
    best = math.inf
    for _ in range(samples):
        terms = alpha_chart_terms(
            branch,
            u=rng.uniform(-1.0, 1.0, lv2.c),
            alpha_free=rng.uniform(-1.0, 1.0, lv2.d - 1),
            distinguished=int(rng.integers(lv2.d)),
            beta=rng.uniform(-1.0, 1.0, lv2.e),
            alpha1=rng.uniform(-1.0, 1.0, lv1.d),
            slice_coords=[rng.uniform(-0.3, 0.3, lv.slice_frame.shape[0]) for lv in branch.levels],
            settings=settings,
        )
        tau = rng.uniform(-T, T, 2)
        best = min(best, float(np.linalg.norm(alpha_chart_gradient(terms, tau[0], tau[1]))))
    logger.info(f"📏 α 卡最小 ξ 梯度 {best:.4f}（{samples} 个样本）")
    return AlphaChartRecord(applicable=True, min_grad=best, samples=samples)


def alpha_chart_decay(
    branch: IsotropyBranch,
    mu_values: List[float],
    nodes: int = 4,
    levels: int = 14,
    settings: Optional[NumericsSettings] = None,
) -> Tuple[Optional[float], List[float]]:
    """
    α 卡上的 Ĩ 型积分及其衰减指数

    ξ 因子取标准 gaussian 并对 ξ 解析积分：(2π)^{n/2} exp(−(τ₁τ₂)²|w|²/2μ²)，
    τ 上带 |τ_j|^{指数} 权重和 bump 截断，其余坐标用 bump 加权的 Gauss–Legendre。

    Returns:
        (拟合指数, 各 μ 的积分值)；不适用时指数为 None
    """
    settings = settings or get_settings()
    if _alpha_level(branch) is None:
        return None, []
    T = settings.chart_T
    lv1, lv2 = branch.levels
    n = branch.action.n
    exponents = branch.predicted_exponents()

    z_pos, w_pos = composite_gauss_legendre(graded_panels(T, 0.5, levels), 8)
    tau_nodes = np.concatenate([-z_pos[::-1], z_pos])
    tau_weights = np.concatenate([w_pos[::-1], w_pos])
    t1, t2 = np.meshgrid(tau_nodes, tau_nodes, indexing="ij")
    tw = np.outer(tau_weights, tau_weights) * bump_profile(np.abs(t1) / T) * bump_profile(np.abs(t2) / T)
    tw = tw * np.abs(t1) ** exponents[0] * np.abs(t2) ** exponents[1]

    g, gw = gauss_legendre(nodes, -1.0, 1.0)
    gw = gw * bump_profile(np.abs(g))
    blocks = [("u", lv2.c), ("free", lv2.d - 1), ("beta", lv2.e)]
    blocks += [(f"slice{j}", lv.slice_frame.shape[0]) for j, lv in enumerate(branch.levels)]
    total = sum(k for _, k in blocks)
    if total:
        others = np.stack([x.reshape(-1) for x in np.meshgrid(*([g] * total), indexing="ij")], axis=1)
        other_w = np.prod(np.stack([x.reshape(-1) for x in np.meshgrid(*([gw] * total), indexing="ij")], axis=1), axis=1)
    else:
        others, other_w = np.zeros((1, 0)), np.ones(1)

    mus = np.asarray(mu_values, dtype=float)
    values = np.zeros(mus.size)
    for row, weight in zip(others, other_w):
        parts: Dict[str, np.ndarray] = {}
        cursor = 0
        for name, k in blocks:
            parts[name] = row[cursor:cursor + k]
            cursor += k
        terms = alpha_chart_terms(
            branch,
            u=parts["u"],
            alpha_free=parts["free"],
            distinguished=0,
            beta=parts["beta"],
            slice_coords=[0.3 * parts[f"slice{j}"] for j in range(len(branch.levels))],
            settings=settings,
        )
        w = alpha_chart_gradient(terms, t1, t2)
        prod_sq = (t1 * t2) ** 2 * np.einsum("...i,...i->...", w, w)
        for m, mu in enumerate(mus):
            values[m] += weight * float(np.sum(tw * np.exp(-0.5 * prod_sq / mu**2)))
    values *= (2.0 * math.pi) ** (n / 2.0)
    exponent = float(np.polyfit(np.log(mus), np.log(values), 1)[0])
    logger.info(f"📉 α 卡 Ĩ 衰减指数 {exponent:.3f}")
    return exponent, values.tolist()


# ============ 汇总 ============

def certify_branch(
    branch: IsotropyBranch,
    options: ResolveOptions,
    seed: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> BranchCertificate:
    """
    对单个分支运行全部数值证书

    Args:
        branch: 迷向分支
        options: 样本数等设置
        seed: 随机种子

    Returns:
        分支证书，passed 为全部检查的合取
    """
    settings = settings or get_settings()
    label = branch.label()
    logger.info(f"🔎 证书: {label}")
    layout = layout_of(branch)

    try:
        factorization = check_factorization(branch, options.factorization_samples, seed, settings=settings)
        factor_ok = True
    except CertificateFailure as e:
        logger.error(f"❌ {e}")
        factorization = math.inf
        factor_ok = False

    rng = substream(seed, 31)
    discrepancies = 0
    for k in range(options.theorem1_points):
        coords = critical_coords(branch, rng, zero_sigma=(k % 4 == 0), settings=settings)
        if k % 2:
            coords = perturb_coords(branch, coords, rng, settings=settings)
        if not check_theorem1_conditions(branch, coords, settings=settings).consistent:
            discrepancies += 1

    kernel_dims: List[int] = []
    bordered: List[float] = []
    nondegenerate = True
    for k in range(options.theorem2_points):
        coords = critical_coords(branch, rng, zero_sigma=(k % 2 == 0), settings=settings)
        record = check_transversal_nondegeneracy(branch, coords, settings=settings)
        kernel_dims.append(record.kernel_dim)
        nondegenerate = nondegenerate and record.ok
        if record.bordered_residual is not None:
            bordered.append(record.bordered_residual)
    bordered_max = max(bordered) if bordered else None

    kappa_ok, _ = check_kappa_decomposition(branch, options.kappa_samples, seed, settings)
    exponents = [check_jacobian_exponent(branch, j, seed, settings) for j in range(branch.N)]
    predicted = branch.predicted_exponents()
    exponents_ok = all(abs(a - b) <= 1e-3 for a, b in zip(exponents, predicted))
    margins = lemma3_margins(branch)

    alpha = check_alpha_chart_nonstationary(branch, options.alpha_samples, seed, settings)
    decay, _ = alpha_chart_decay(branch, options.decay_mu, settings=settings) if alpha.applicable else (None, [])
    alpha_ok = not alpha.applicable or (alpha.min_grad is not None and alpha.min_grad > 0.0)
    decay_ok = decay is None or decay >= branch.kappa + 0.8

    passed = (
        factor_ok
        and discrepancies == 0
        and nondegenerate
        and (bordered_max is None or bordered_max <= 1e-6)
        and kappa_ok
        and exponents_ok
        and all(m >= 0 for m in margins)
        and alpha_ok
        and decay_ok
    )
    cert = BranchCertificate(
        branch=label,
        numerical_data=branch.numerical_data(),
        factorization_residual=factorization,
        theorem1_pass=discrepancies == 0,
        theorem1_discrepancies=discrepancies,
        theorem2_kernel_dims=kernel_dims,
        theorem2_expected_dim=layout.dim - 2 * branch.kappa,
        bordered_max_residual=bordered_max,
        jacobian_exponents=exponents,
        predicted_exponents=predicted,
        lemma3_margins=margins,
        lemma3_pass=all(m >= 0 for m in margins),
        kappa_decomposition_pass=kappa_ok,
        alpha_chart_min_grad=alpha.min_grad,
        alpha_chart_decay_exponent=decay,
        passed=passed,
    )
    (logger.info if passed else logger.warning)(f"{'✅' if passed else '⚠️'} 分支 {label} 证书{'通过' if passed else '未通过'}")
    return cert
