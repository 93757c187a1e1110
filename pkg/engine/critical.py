"""
正则临界流形 Reg Crit(ψ)
Gauss–Newton 投影、横截 Hessian 以及领头系数 L₀ 的曲面积分
"""
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
from loguru import logger

from engine.action_model import algebra_element, generator_basis, isotropy_algebra_pair
from engine.oracle import GAUSSIAN_CUTOFF, amplitude_boxes, eval_amplitude, is_planar_rotation
from engine.phase import hess_psi_array, is_critical, moment_map, split_point, to_point
from engine.settings import NumericsSettings, get_settings
from shared.errors import CleanIntersectionError, PreconditionViolation
from shared.models import (
    Amplitude,
    CritSample,
    GroupAction,
    L0Result,
    PhasePoint,
    ProfileKind,
    ProjectionResult,
    SurfaceMethod,
    SurfaceQuadrature,
)
from shared.utils import chunk_ranges, gauss_legendre, pairwise_sum, substream, unit_ball_volume


# ============ 残差与正则性 ============

def residual_array(action: GroupAction, z: np.ndarray) -> np.ndarray:
    """(J(x,ξ); Xx; Xξ)，形状 (..., d+2n)"""
    x, xi, t = split_point(action, z)
    mat = algebra_element(action, t)
    return np.concatenate(
        [moment_map(action, x, xi), np.einsum("...jk,...k->...j", mat, x), np.einsum("...jk,...k->...j", mat, xi)],
        axis=-1,
    )


def residual_jacobian(action: GroupAction, z: np.ndarray) -> np.ndarray:
    """残差对 (x, ξ, t) 的雅可比，形状 (..., d+2n, 2n+d)"""
    n, d = action.n, action.d
    basis = generator_basis(action)
    x, xi, t = split_point(action, z)
    mat = algebra_element(action, t)
    jac = np.zeros(x.shape[:-1] + (d + 2 * n, 2 * n + d))
    jac[..., :d, :n] = np.einsum("ikj,...k->...ij", basis, xi)       # ∂J_i/∂x = ᵗX_i ξ
    jac[..., :d, n:2 * n] = np.einsum("ijk,...k->...ij", basis, x)   # ∂J_i/∂ξ = X_i x
    jac[..., d:d + n, :n] = mat
    jac[..., d:d + n, 2 * n:] = np.einsum("ijk,...k->...ji", basis, x)
    jac[..., d + n:, n:2 * n] = mat
    jac[..., d + n:, 2 * n:] = np.einsum("ijk,...k->...ji", basis, xi)
    return jac


def orbit_pair_matrix(action: GroupAction, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """按列为 (X_i x; X_i ξ) 的 2n×d 矩阵，支持批量"""
    basis = generator_basis(action)
    return np.concatenate(
        [np.einsum("ijk,...k->...ji", basis, x), np.einsum("ijk,...k->...ji", basis, xi)],
        axis=-2,
    )


def is_regular(
    action: GroupAction,
    x: np.ndarray,
    xi: np.ndarray,
    kappa: int,
    settings: Optional[NumericsSettings] = None,
) -> bool:
    """
    (x, ξ) 是否属于主轨道型：dim g_(x,ξ) = d − κ

    Raises:
        PreconditionViolation: (x, ξ) 不在 Ω 上
    """
    settings = settings or get_settings()
    m = float(np.linalg.norm(moment_map(action, x, xi)))
    if m > settings.omega_tol:
        raise PreconditionViolation(f"(x, ξ) 不在 Ω 上：|J| = {m:.3e}")
    return isotropy_algebra_pair(action, x, xi, settings).dimension == action.d - kappa


def _singular_values_kappa(action: GroupAction, z: np.ndarray, kappa: int) -> np.ndarray:
    x, xi, _ = split_point(action, z)
    s = np.linalg.svd(orbit_pair_matrix(action, x, xi), compute_uv=False)
    return s[..., kappa - 1] if kappa > 0 else np.full(s.shape[:-1], np.inf)


def project_to_crit(
    action: GroupAction,
    seed_point: PhasePoint,
    kappa: int,
    settings: Optional[NumericsSettings] = None,
) -> ProjectionResult:
    """
    Gauss–Newton 投影到 Crit(ψ)

    收敛判据为残差 ≤ newton_tol；收敛点的第 κ 个轨道奇异值低于 singular_margin
    或不是主轨道型时标记为 singular，由调用方重新采样。

    Args:
        action: 群作用
        seed_point: 初始点
        kappa: 主轨道维数

    Returns:
        投影结果
    """
    settings = settings or get_settings()
    z = seed_point.stacked().astype(float)
    res = float(np.linalg.norm(residual_array(action, z)))
    iterations = 0
    while res > settings.newton_tol and iterations < settings.newton_max_iter:
        step, *_ = np.linalg.lstsq(residual_jacobian(action, z), -residual_array(action, z), rcond=1e-10)
        z = z + step
        iterations += 1
        res = float(np.linalg.norm(residual_array(action, z)))

    converged = res <= settings.newton_tol
    if not converged:
        logger.debug(f"Gauss–Newton 未收敛：残差 {res:.3e}，{iterations} 次迭代")
        return ProjectionResult(point=None, converged=False, iterations=iterations, residual=res)

    point = to_point(action, z)
    singular = bool(_singular_values_kappa(action, z, kappa) < settings.singular_margin)
    if not singular:
        singular = not is_regular(action, point.x, point.xi, kappa, settings)
    return ProjectionResult(point=point, converged=True, singular=singular, iterations=iterations, residual=res)


def project_batch(
    action: GroupAction,
    z: np.ndarray,
    kappa: int,
    settings: Optional[NumericsSettings] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    批量 Gauss–Newton（伪逆步）

    Returns:
        (投影后的点, 是否收敛, 是否奇异)
    """
    settings = settings or get_settings()
    z = np.array(z, dtype=float)
    res = np.linalg.norm(residual_array(action, z), axis=-1)
    for _ in range(settings.newton_max_iter):
        active = res > settings.newton_tol
        if not np.any(active):
            break
        za = z[active]
        step = -np.einsum("bij,bj->bi", np.linalg.pinv(residual_jacobian(action, za), rcond=1e-10), residual_array(action, za))
        z[active] = za + step
        res[active] = np.linalg.norm(residual_array(action, z[active]), axis=-1)
    converged = res <= settings.newton_tol
    x, xi, _ = split_point(action, z)
    s = np.linalg.svd(orbit_pair_matrix(action, x, xi), compute_uv=False)
    tol = settings.rank_rtol * np.maximum(s[..., 0], 1.0)
    rank = np.sum(s > tol[..., None], axis=-1)
    singular = (_singular_values_kappa(action, z, kappa) < settings.singular_margin) | (rank != kappa)
    return z, converged, singular


# ============ 横截 Hessian ============

def _transversal_spectrum(action: GroupAction, z: np.ndarray, kappa: int) -> np.ndarray:
    """按模降序的 2κ 个非零特征值，支持批量"""
    eig = np.linalg.eigvalsh(hess_psi_array(action, *split_point(action, z)))
    order = np.argsort(-np.abs(eig), axis=-1)
    return np.take_along_axis(eig, order, axis=-1)[..., :2 * kappa]


def transversal_hessian(
    action: GroupAction,
    p: PhasePoint,
    kappa: int,
    settings: Optional[NumericsSettings] = None,
) -> CritSample:
    """
    Hessian 在法空间上的限制：行列式绝对值与符号差

    |λ| ≤ kernel_rtol·max|λ| 的特征方向视为切方向。

    Raises:
        PreconditionViolation: p 不是正则临界点
        CleanIntersectionError: 切空间维数不等于 2n+d−2κ
    """
    settings = settings or get_settings()
    if not is_critical(action, p, settings=settings).is_critical:
        raise PreconditionViolation("p 不是临界点")
    if not is_regular(action, p.x, p.xi, kappa, settings):
        raise PreconditionViolation("p 不在正则层上")

    eig = np.linalg.eigvalsh(hess_psi_array(action, p.x, p.xi, p.t))
    scale = float(np.max(np.abs(eig))) if eig.size else 0.0
    nonzero = eig[np.abs(eig) > settings.kernel_rtol * scale]
    total = 2 * action.n + action.d
    tangent_dim = total - nonzero.size
    expected = total - 2 * kappa
    if tangent_dim != expected:
        raise CleanIntersectionError(
            f"Hessian 核维数 {tangent_dim} ≠ 2n+d−2κ = {expected}",
            tangent_dim=tangent_dim,
            expected_dim=expected,
        )
    return CritSample(
        point=p,
        tangent_dim=tangent_dim,
        nonzero_spectrum=[float(v) for v in nonzero],
        transversal_det_abs=float(np.prod(np.abs(nonzero))),
        signature=int(np.sum(nonzero > 0) - np.sum(nonzero < 0)),
    )


# ============ L₀ ============

def integrate_L0(
    action: GroupAction,
    amplitude: Amplitude,
    kappa: int,
    quad: SurfaceQuadrature,
    seed: int = 0,
    threads: Optional[int] = None,
    settings: Optional[NumericsSettings] = None,
) -> L0Result:
    """
    L₀ = ∫_{Reg C} a / |det Hess_N|^{1/2} dσ

    Args:
        action: 群作用
        amplitude: 振幅
        kappa: 主轨道维数
        quad: 曲面积分设置
        seed: quad.seed 为空时使用的种子
        threads: 工作线程数，只影响耗时

    Returns:
        L₀ 与误差估计
    """
    settings = settings or get_settings()
    logger.info(f"📐 计算 L₀（{quad.method.value}）")
    if quad.method == SurfaceMethod.CHART_GRID:
        result = _chart_grid_L0(action, amplitude, kappa, quad.grid_nodes, settings)
    else:
        seed = quad.seed if quad.seed is not None else seed
        threads = threads or settings.threads
        result = _slab_L0(action, amplitude, kappa, quad.eps_slab, quad.budget, seed, threads, settings)
        if quad.eps_sweep:
            sweep: Dict[str, float] = {}
            for eps in sorted(quad.eps_sweep):
                sweep[f"{eps:g}"] = _slab_L0(action, amplitude, kappa, eps, quad.budget, seed, threads, settings).L0
            eps1, eps2 = sorted(quad.eps_sweep)[:2] if len(quad.eps_sweep) >= 2 else (None, None)
            richardson = None
            if eps1 is not None:
                l1, l2 = sweep[f"{eps1:g}"], sweep[f"{eps2:g}"]
                richardson = (eps2**2 * l1 - eps1**2 * l2) / (eps2**2 - eps1**2)
            result = result.model_copy(update={"sweep": sweep, "richardson": richardson})
    if result.n_accepted == 0:
        logger.warning("⚠️ 振幅支撑与 Reg C 不相交，L₀ = 0")
    logger.info(f"✅ L₀ = {result.L0:.6e} ± {result.stderr_estimate:.1e}")
    return result


def _effective_radius(amplitude: Amplitude, block: str) -> float:
    factor = getattr(amplitude, block)
    return factor.radius * (1.0 if amplitude.profile_of(block) == ProfileKind.BUMP else GAUSSIAN_CUTOFF)


def _chart_grid_once(action: GroupAction, amplitude: Amplitude, kappa: int, nodes: int) -> Tuple[float, int, List[int]]:
    x0 = np.asarray(amplitude.x.center, dtype=float)
    xi0 = np.asarray(amplitude.xi.center, dtype=float)
    rx = _effective_radius(amplitude, "x")
    rxi = _effective_radius(amplitude, "xi")
    norm0 = float(np.linalg.norm(x0))
    if rx < norm0:
        theta0 = math.atan2(x0[1], x0[0])
        spread = math.asin(rx / norm0)
        th_lo, th_hi = theta0 - spread, theta0 + spread
    else:
        th_lo, th_hi = -math.pi, math.pi
    r, wr = gauss_legendre(nodes, max(0.0, norm0 - rx), norm0 + rx)
    theta, wth = gauss_legendre(nodes, th_lo, th_hi)
    gen = generator_basis(action)[0]

    total = 0.0
    accepted = 0
    signatures: set = set()
    for th, w_th in zip(theta, wth):
        unit = np.array([math.cos(th), math.sin(th)])
        # ξ = s·x̂ 落在 ξ 球内的 s 区间
        along = float(xi0 @ unit)
        across = float(xi0 @ (gen @ unit))
        disc = rxi**2 - across**2
        if disc <= 0.0:
            continue
        half = math.sqrt(disc)
        s, ws = gauss_legendre(nodes, along - half, along + half)
        rr, ss = np.meshgrid(r, s, indexing="ij")
        x = rr[..., None] * unit
        xi = ss[..., None] * unit
        t = np.zeros(rr.shape + (1,))
        a = eval_amplitude(amplitude, x, xi, t)
        keep = a != 0.0
        if not np.any(keep):
            continue
        # 切向量 ∂r = (x̂, 0, 0)，∂θ = (r x̂′, s x̂′, 0)，∂s = (0, x̂, 0)
        tang = np.zeros(rr.shape + (3, 5))
        dunit = np.array([-math.sin(th), math.cos(th)])
        tang[..., 0, :2] = unit
        tang[..., 1, :2] = rr[..., None] * dunit
        tang[..., 1, 2:4] = ss[..., None] * dunit
        tang[..., 2, 2:4] = unit
        gram = np.einsum("...ik,...jk->...ij", tang, tang)
        area = np.sqrt(np.linalg.det(gram))
        z = np.concatenate([x, xi, t], axis=-1)
        spectrum = _transversal_spectrum(action, z[keep], kappa)
        det = np.prod(np.abs(spectrum), axis=-1)
        signatures.update(np.unique(np.sum(spectrum > 0, axis=-1) - np.sum(spectrum < 0, axis=-1)).tolist())
        weights = (wr[:, None] * ws[None, :] * w_th)[keep]
        total += float(np.sum(weights * a[keep] * area[keep] / np.sqrt(det)))
        accepted += int(np.count_nonzero(keep))
    return total, accepted, sorted(int(s) for s in signatures)


def _chart_grid_L0(
    action: GroupAction,
    amplitude: Amplitude,
    kappa: int,
    nodes: int,
    settings: NumericsSettings,
) -> L0Result:
    """SO(2)/ℝ² 的显式参数化 (r, θ, s) ↦ (r x̂, s x̂, 0)"""
    if not is_planar_rotation(action):
        raise PreconditionViolation("chart_grid 只适用于 SO(2) 在 ℝ² 上的作用")
    coarse, _, _ = _chart_grid_once(action, amplitude, kappa, nodes)
    fine, accepted, signatures = _chart_grid_once(action, amplitude, kappa, math.ceil(1.5 * nodes))
    return L0Result(
        L0=fine,
        stderr_estimate=abs(fine - coarse),
        method=SurfaceMethod.CHART_GRID,
        n_accepted=accepted,
        signatures=signatures,
    )


def _defining_rows(action: GroupAction, z0: np.ndarray, kappa: int) -> np.ndarray:
    """列主元 QR 选出 2κ 个独立的残差分量"""
    jac = residual_jacobian(action, z0)
    _, _, piv = scipy.linalg.qr(jac.T, pivoting=True)
    return np.sort(piv[:2 * kappa])


def _slab_box(
    action: GroupAction,
    amplitude: Amplitude,
    kappa: int,
    z0: np.ndarray,
    rows: np.ndarray,
    eps: float,
    settings: NumericsSettings,
) -> np.ndarray:
    boxes = amplitude_boxes(amplitude)
    box = np.vstack([boxes["x"], boxes["xi"], boxes["t"]])
    if action.d == kappa:
        # t 方向完全横截：t 盒收缩到薄层宽度
        dt = residual_jacobian(action, z0)[rows][:, 2 * action.n:]
        s = np.linalg.svd(dt, compute_uv=False)
        sigma = max(float(s[-1]) if s.size else 0.0, 1e-3)
        half = settings.slab_t_factor * eps / sigma
        t0 = z0[2 * action.n:]
        lo = np.maximum(box[2 * action.n:, 0], t0 - half)
        hi = np.minimum(box[2 * action.n:, 1], t0 + half)
        box[2 * action.n:] = np.stack([lo, hi], axis=1)
    return box


def _slab_shard(
    action: GroupAction,
    amplitude: Amplitude,
    kappa: int,
    box: np.ndarray,
    rows: np.ndarray,
    eps: float,
    seed: int,
    shard: int,
    count: int,
    settings: NumericsSettings,
) -> Dict[str, object]:
    rng = substream(seed, 1, shard)
    z = box[:, 0] + rng.random((count, box.shape[0])) * (box[:, 1] - box[:, 0])
    f = residual_array(action, z)[:, rows]
    kept = np.linalg.norm(f, axis=-1) < eps
    out: Dict[str, object] = {"sum": 0.0, "sum_sq": 0.0, "kept": 0, "bad": 0, "edge": 0, "signatures": set()}
    if not np.any(kept):
        return out
    zk = z[kept]
    df = residual_jacobian(action, zk)[:, rows, :]
    jf = np.sqrt(np.abs(np.linalg.det(np.einsum("bik,bjk->bij", df, df))))
    proj, converged, singular = project_batch(action, zk, kappa, settings)
    good = converged & ~singular
    values = np.zeros(zk.shape[0])
    if np.any(good):
        pg = proj[good]
        a = eval_amplitude(amplitude, *split_point(action, pg))
        spectrum = _transversal_spectrum(action, pg, kappa)
        det = np.prod(np.abs(spectrum), axis=-1)
        values[good] = a * jf[good] / np.sqrt(det)
        live = a != 0.0
        if np.any(live):
            sig = np.sum(spectrum[live] > 0, axis=-1) - np.sum(spectrum[live] < 0, axis=-1)
            out["signatures"] = set(np.unique(sig).tolist())
    t_half = 0.5 * (box[2 * action.n:, 1] - box[2 * action.n:, 0])
    t_mid = 0.5 * (box[2 * action.n:, 1] + box[2 * action.n:, 0])
    edge = np.any(np.abs(zk[:, 2 * action.n:] - t_mid) > 0.98 * t_half, axis=-1) & (values != 0.0)
    out.update(
        sum=float(np.sum(values)),
        sum_sq=float(np.sum(values**2)),
        kept=int(zk.shape[0]),
        bad=int(np.count_nonzero(~good)),
        edge=int(np.count_nonzero(edge)),
    )
    return out


def _slab_L0(
    action: GroupAction,
    amplitude: Amplitude,
    kappa: int,
    eps: float,
    budget: int,
    seed: int,
    threads: int,
    settings: NumericsSettings,
) -> L0Result:
    """
    薄层 Monte Carlo：|F| < ε 的样本投影到流形后按余面积因子 J_F 加权
    """
    center = np.concatenate([amplitude.x.center, amplitude.xi.center, amplitude.t.center]).astype(float)
    projected = project_to_crit(action, to_point(action, center), kappa, settings)
    z0 = projected.point.stacked() if projected.converged and projected.point is not None else center
    rows = _defining_rows(action, z0, kappa)
    box = _slab_box(action, amplitude, kappa, z0, rows, eps, settings)
    box_vol = float(np.prod(box[:, 1] - box[:, 0]))
    ball = unit_ball_volume(2 * kappa) * eps ** (2 * kappa)
    logger.debug(f"薄层 ε={eps:g}：定义分量 {rows.tolist()}，盒体积 {box_vol:.3e}")

    shards = chunk_ranges(budget, settings.shard_size)

    def run(item: Tuple[int, Tuple[int, int]]) -> Dict[str, object]:
        index, (lo, hi) = item
        return _slab_shard(action, amplitude, kappa, box, rows, eps, seed, index, hi - lo, settings)

    if threads <= 1 or len(shards) <= 1:
        parts = [run(item) for item in enumerate(shards)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, enumerate(shards)))

    total = pairwise_sum([p["sum"] for p in parts])
    total_sq = pairwise_sum([p["sum_sq"] for p in parts])
    kept = sum(int(p["kept"]) for p in parts)
    bad = sum(int(p["bad"]) for p in parts)
    edge = sum(int(p["edge"]) for p in parts)
    signatures = sorted(set().union(*[p["signatures"] for p in parts]))

    scale = box_vol / ball / budget
    L0 = scale * total
    mean = total / budget
    var = max(total_sq / budget - mean**2, 0.0)
    stderr = box_vol / ball * math.sqrt(var / budget)
    contamination = bad / kept if kept else 0.0
    if contamination > 0.0:
        logger.warning(f"⚠️ 薄层 ε={eps:g} 中 {contamination:.2%} 的样本投影到奇异层或未收敛")
    if edge:
        logger.warning(f"⚠️ {edge} 个有效样本贴近收缩后的 t 盒边界，薄层可能被截断")
    return L0Result(
        L0=L0,
        stderr_estimate=stderr,
        method=SurfaceMethod.SLAB_MONTE_CARLO,
        n_accepted=kept - bad,
        contamination_fraction=contamination,
        signatures=[int(s) for s in signatures],
    )
