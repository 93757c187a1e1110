"""
群作用模型
李代数生成元、迷向代数、主轨道维数与基于采样的轨道型分层
"""
from collections import OrderedDict
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from loguru import logger

from engine.settings import NumericsSettings, get_settings
from shared.errors import ActionStructureError
from shared.models import GroupAction, IsotropyData, Stratum, StratumSignature, ValidationReport
from shared.utils import null_space_rows, orthonormal_rows, substream

# g 上的内积 ⟨A, B⟩ = ½ tr(ᵗAB)；单位速度旋转生成元在此度量下长度为 1
METRIC_SCALE = 0.5


def _check_shapes(action: GroupAction) -> np.ndarray:
    gens = action.raw_generators()
    if gens.ndim != 3 or gens.shape != (action.d, action.n, action.n):
        raise ActionStructureError(
            f"生成元形状 {gens.shape} 与声明的 d={action.d}, n={action.n} 不一致"
        )
    return gens


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """g 上的内积"""
    return METRIC_SCALE * float(np.sum(a * b))


def generator_basis(action: GroupAction) -> np.ndarray:
    """
    在 ½tr(ᵗAB) 度量下正交化后的生成元，形状 (d, n, n)

    归一化约定：ℝ² 上的 [[0, −1], [1, 0]] 长度为 1，so(3) 的 L_x, L_y, L_z 两两正交且长度为 1。

    已经正交归一的输入保持不变（QR 对角取正）。结果缓存在模型上。
    """
    if action._basis is not None:
        return action._basis
    gens = _check_shapes(action)
    d, n = action.d, action.n
    flat = gens.reshape(d, n * n) * np.sqrt(METRIC_SCALE)
    q, r = np.linalg.qr(flat.T)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    basis = (q.T / np.sqrt(METRIC_SCALE)).reshape(d, n, n)
    basis.setflags(write=False)
    action._basis = basis
    return basis


def algebra_element(action: GroupAction, t: np.ndarray) -> np.ndarray:
    """X = Σ t_i X_i，支持批量 t (..., d)"""
    return np.einsum("...i,ijk->...jk", np.asarray(t, dtype=float), generator_basis(action))


def bracket_coefficients(action: GroupAction, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """[A, B] 在正交基下的系数"""
    comm = a @ b - b @ a
    basis = generator_basis(action)
    return METRIC_SCALE * np.einsum("ijk,jk->i", basis, comm)


def validate_action(action: GroupAction, settings: Optional[NumericsSettings] = None) -> ValidationReport:
    """
    检查反对称性、线性无关性与李括号封闭性

    Args:
        action: 群作用
        settings: 数值阈值

    Returns:
        校验报告，violations 为空表示通过
    """
    settings = settings or get_settings()
    gens = _check_shapes(action)
    d = action.d

    skew = float(np.max(np.abs(gens + np.transpose(gens, (0, 2, 1)))))

    gram = METRIC_SCALE * np.einsum("ijk,ljk->il", gens, gens)
    eigs = np.linalg.eigvalsh(gram)
    gram_scale = max(float(np.max(np.abs(eigs))), 1e-300)
    gram_min = float(eigs[0] / gram_scale)

    violations: List[str] = []
    if skew > settings.skew_tol:
        violations.append(f"skewness: 反对称残差 {skew:.3e}")
    if gram_min <= settings.rank_rtol:
        violations.append(f"independence: Gram 最小特征值 {gram_min:.3e}")

    bracket = 0.0
    if not violations:
        flat = gens.reshape(d, -1).T
        norm_scale = max(1.0, float(np.max(np.linalg.norm(flat, axis=0))))
        for i in range(d):
            for j in range(i + 1, d):
                comm = (gens[i] @ gens[j] - gens[j] @ gens[i]).reshape(-1)
                coeffs, *_ = np.linalg.lstsq(flat, comm, rcond=None)
                bracket = max(bracket, float(np.linalg.norm(flat @ coeffs - comm)) / norm_scale)
        if bracket > settings.bracket_tol:
            violations.append(f"closure: 李括号残差 {bracket:.3e}")

    report = ValidationReport(
        skew_residual=skew,
        gram_min_eigenvalue=gram_min,
        bracket_residual=bracket,
        violations=violations,
    )
    if violations:
        logger.warning(f"⚠️ 群作用 {action.name or '?'} 校验失败: {violations}")
    return report


def orbit_matrix(action: GroupAction, x: np.ndarray) -> np.ndarray:
    """n×d 矩阵，列为 X_i x"""
    return np.einsum("ijk,k->ji", generator_basis(action), np.asarray(x, dtype=float))


def isotropy_algebra(action: GroupAction, x: np.ndarray, settings: Optional[NumericsSettings] = None) -> IsotropyData:
    """
    g_x：映射 X ↦ Xx 的零空间

    Args:
        action: 群作用
        x: ℝⁿ 中的点

    Returns:
        迷向代数数据
    """
    settings = settings or get_settings()
    x = np.asarray(x, dtype=float)
    _, null = null_space_rows(orbit_matrix(action, x), settings.rank_rtol)
    return IsotropyData(base_point=x, algebra_basis=null, dimension=null.shape[0])


def isotropy_algebra_pair(
    action: GroupAction,
    x: np.ndarray,
    xi: np.ndarray,
    settings: Optional[NumericsSettings] = None,
) -> IsotropyData:
    """g_(x,ξ)：同时零化 x 与 ξ 的代数元"""
    settings = settings or get_settings()
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    stacked = np.vstack([orbit_matrix(action, x), orbit_matrix(action, xi)])
    _, null = null_space_rows(stacked, settings.rank_rtol)
    return IsotropyData(base_point=np.concatenate([x, xi]), algebra_basis=null, dimension=null.shape[0])


def principal_orbit_dimension(
    action: GroupAction,
    sample_count: int = 100,
    seed: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> int:
    """
    主轨道维数 κ = max (d − dim g_x)，x 为伪随机单位向量

    主轨道型点开稠，所以少量样本以压倒性概率给出真值。
    """
    if sample_count < 1:
        raise ValueError("sample_count 必须 ≥ 1")
    settings = settings or get_settings()
    rng = np.random.Generator(np.random.PCG64(seed))
    points = rng.standard_normal((sample_count, action.n))
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    kappa = 0
    for x in points:
        kappa = max(kappa, action.d - isotropy_algebra(action, x, settings).dimension)
    logger.debug(f"κ = {kappa}（{sample_count} 个样本，seed={seed}）")
    return kappa


def fixed_subspace(action: GroupAction, algebra_rows: np.ndarray, settings: Optional[NumericsSettings] = None) -> np.ndarray:
    """{v : Yv = 0, Y ∈ 子代数} 的正交基（按行）"""
    settings = settings or get_settings()
    algebra_rows = np.asarray(algebra_rows, dtype=float).reshape(-1, action.d)
    if algebra_rows.shape[0] == 0:
        return np.eye(action.n)
    mats = algebra_element(action, algebra_rows)
    _, null = null_space_rows(mats.reshape(-1, action.n), settings.rank_rtol)
    return null


def invariant_hull(action: GroupAction, rows: np.ndarray, settings: Optional[NumericsSettings] = None) -> np.ndarray:
    """包含给定子空间的最小 G 不变子空间"""
    settings = settings or get_settings()
    basis = generator_basis(action)
    span = orthonormal_rows(rows, settings.rank_rtol) if np.size(rows) else np.zeros((0, action.n))
    while span.shape[0]:
        moved = np.einsum("ijk,rk->irj", basis, span).reshape(-1, action.n)
        grown = orthonormal_rows(np.vstack([span, moved]), settings.rank_rtol)
        if grown.shape[0] == span.shape[0]:
            break
        span = grown
    return span


def _projector(rows: np.ndarray, n: int) -> np.ndarray:
    if rows.shape[0] == 0:
        return np.zeros((n, n))
    return rows.T @ rows


def stratify_sample(
    action: GroupAction,
    samples: Iterable[np.ndarray],
    settings: Optional[NumericsSettings] = None,
) -> "OrderedDict[StratumSignature, Stratum]":
    """
    按 (迷向维数, 不动子空间维数) 对样本分组

    维数相同但不动子空间的 G 不变包络不同的点被分为不同 variant。
    结果按迷向维数降序、不动子空间维数降序、首次出现顺序排列。

    Args:
        action: 群作用
        samples: ℝⁿ 中的样本点

    Returns:
        签名 → 层
    """
    settings = settings or get_settings()
    groups: Dict[Tuple[int, int], List[Tuple[np.ndarray, np.ndarray, List[np.ndarray]]]] = {}
    for x in samples:
        x = np.asarray(x, dtype=float)
        iso = isotropy_algebra(action, x, settings)
        fixed = fixed_subspace(action, iso.algebra_basis, settings)
        hull = invariant_hull(action, fixed, settings)
        proj = _projector(hull, action.n)
        variants = groups.setdefault((iso.dimension, fixed.shape[0]), [])
        for known_proj, _, points in variants:
            if np.max(np.abs(known_proj - proj)) < 1e-6:
                points.append(x)
                break
        else:
            variants.append((proj, hull, [x]))

    strata: "OrderedDict[StratumSignature, Stratum]" = OrderedDict()
    for key in sorted(groups, key=lambda k: (-k[0], -k[1])):
        for variant, (_, hull, points) in enumerate(groups[key]):
            sig = StratumSignature(isotropy_dim=key[0], fixed_subspace_dim=key[1], variant=variant)
            strata[sig] = Stratum(signature=sig, hull=hull, representatives=points)
    logger.debug(f"分层完成: {[s.label() for s in strata]}")
    return strata


def candidate_elements(action: GroupAction, seed: int = 0, random_count: int = 8) -> np.ndarray:
    """用于搜索奇异方向的代数元系数：基元、两两和差与若干随机元"""
    d = action.d
    rows: List[np.ndarray] = list(np.eye(d))
    for i in range(d):
        for j in range(i + 1, d):
            rows.append(np.eye(d)[i] + np.eye(d)[j])
            rows.append(np.eye(d)[i] - np.eye(d)[j])
    rng = substream(seed, stream=7)
    rows.extend(rng.standard_normal((random_count, d)))
    return np.asarray(rows)


def structured_samples(
    action: GroupAction,
    count: int = 64,
    seed: int = 0,
    settings: Optional[NumericsSettings] = None,
) -> List[np.ndarray]:
    """
    原点、随机点，以及候选代数元核中的随机点

    纯随机样本几乎不落在奇异层上，核中的点用于覆盖坐标平面一类的层。
    """
    settings = settings or get_settings()
    rng = substream(seed, stream=3)
    points: List[np.ndarray] = [np.zeros(action.n)]
    points.extend(rng.standard_normal((count, action.n)))
    for coeffs in candidate_elements(action, seed):
        mat = algebra_element(action, coeffs)
        _, kernel = null_space_rows(mat, settings.rank_rtol)
        if 0 < kernel.shape[0] < action.n:
            for _ in range(2):
                points.append(rng.standard_normal(kernel.shape[0]) @ kernel)
    return points


def shipped_action(name: str) -> GroupAction:
    """
    内置示例：so2（SO(2) 作用于 ℝ²）、so3（SO(3) 作用于 ℝ³）、t2（T² 作用于 ℝ⁴）
    """
    j = [[0.0, -1.0], [1.0, 0.0]]
    if name == "so2":
        return GroupAction(n=2, d=1, generators=[j], name="SO(2) on R^2")
    if name == "so3":
        lx = [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]
        ly = [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]
        lz = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
        return GroupAction(n=3, d=3, generators=[lx, ly, lz], name="SO(3) on R^3")
    if name == "t2":
        a = np.zeros((4, 4))
        a[:2, :2] = j
        b = np.zeros((4, 4))
        b[2:, 2:] = j
        return GroupAction(n=4, d=2, generators=[a.tolist(), b.tolist()], name="T^2 on R^4")
    raise KeyError(f"未知的内置作用: {name}")


def rotate_basis(action: GroupAction, seed: int) -> GroupAction:
    """同一李代数在随机正交变换后的基"""
    rng = substream(seed, stream=11)
    q, _ = np.linalg.qr(rng.standard_normal((action.d, action.d)))
    gens = np.einsum("ij,jkl->ikl", q, generator_basis(action))
    return GroupAction(n=action.n, d=action.d, generators=gens.tolist(), name=f"{action.name} (rotated)")
