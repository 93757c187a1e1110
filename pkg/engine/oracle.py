"""
I(μ) 的数值求值
纤维 Fourier 约化 + (x, ξ) 张量 Gauss–Legendre；小维数时的全张量路径；SO(2)/ℝ² 余面积半解析解
"""
import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.interpolate import CubicSpline
from scipy.special import jv

from engine.action_model import generator_basis
from engine.phase import moment_map
from engine.settings import NumericsSettings, get_settings
from shared.errors import (
    FourierTableRangeError,
    NonSeparableAmplitudeError,
    PreconditionViolation,
    QuadratureAccuracyError,
)
from shared.models import (
    Amplitude,
    AmplitudeFactor,
    GroupAction,
    IntegralEstimate,
    ProfileKind,
    QuadratureSpec,
    ReductionKind,
    SemianalyticResult,
)
from shared.utils import chunk_ranges, gauss_legendre, pairwise_sum, unit_ball_volume

# gaussian 因子的有效支撑：中心 ± GAUSSIAN_CUTOFF·w，截断处 e^{-32}
GAUSSIAN_CUTOFF = 8.0
BLOCKS = ("x", "xi", "t")


# ============ 振幅 ============

def bump_profile(r: np.ndarray) -> np.ndarray:
    """ρ(r) = exp(1 − 1/(1 − r²))，r ≥ 1 时精确为 0"""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


def gaussian_profile(r: np.ndarray) -> np.ndarray:
    """exp(−r²/2)，r 以宽度 w 为单位"""
    return np.exp(-0.5 * np.asarray(r, dtype=float) ** 2)


def factor_value(factor: AmplitudeFactor, profile: ProfileKind, y: np.ndarray) -> np.ndarray:
    """单个分块因子在 y (..., k) 处的值"""
    y = np.asarray(y, dtype=float)
    center = np.asarray(factor.center, dtype=float)
    r = np.linalg.norm(y - center, axis=-1) / factor.radius
    if profile == ProfileKind.BUMP:
        return bump_profile(r)
    return gaussian_profile(r)


def _check_dims(action: GroupAction, a: Amplitude) -> None:
    dims = {"x": action.n, "xi": action.n, "t": action.d}
    for block in BLOCKS:
        got = len(getattr(a, block).center)
        if got != dims[block]:
            raise PreconditionViolation(f"振幅 {block} 因子中心维数 {got}，期望 {dims[block]}")


def eval_amplitude(a: Amplitude, x: np.ndarray, xi: np.ndarray, t: np.ndarray) -> np.ndarray:
    """
    a(x, ξ, t) = scale·a_x(x)·a_ξ(ξ)·b(t)

    Args:
        a: 振幅
        x, xi, t: 求值点，支持批量

    Returns:
        振幅值；bump 支撑外精确为 0
    """
    return (
        a.scale
        * factor_value(a.x, a.profile_of("x"), x)
        * factor_value(a.xi, a.profile_of("xi"), xi)
        * factor_value(a.t, a.profile_of("t"), t)
    )


def factor_box(factor: AmplitudeFactor, profile: ProfileKind) -> np.ndarray:
    """因子的包围盒，形状 (k, 2)"""
    center = np.asarray(factor.center, dtype=float)
    half = factor.radius * (1.0 if profile == ProfileKind.BUMP else GAUSSIAN_CUTOFF)
    return np.stack([center - half, center + half], axis=1)


def amplitude_boxes(a: Amplitude, spec: Optional[QuadratureSpec] = None) -> Dict[str, np.ndarray]:
    """各分块的求积盒；spec.domain_boxes 中给出的分块优先"""
    boxes = {block: factor_box(getattr(a, block), a.profile_of(block)) for block in BLOCKS}
    if spec is not None and spec.domain_boxes:
        for block, box in spec.domain_boxes.items():
            if block not in boxes:
                raise PreconditionViolation(f"未知的分块: {block}")
            boxes[block] = np.asarray(box, dtype=float).reshape(-1, 2)
    return boxes


def _radial_mass(profile: ProfileKind, radius: float, dim: int) -> float:
    if profile == ProfileKind.GAUSSIAN:
        return float((2.0 * np.pi) ** (dim / 2.0) * radius**dim)
    r, w = gauss_legendre(512, 0.0, 1.0)
    sphere = dim * unit_ball_volume(dim)
    return float(sphere * radius**dim * np.sum(w * bump_profile(r) * r ** (dim - 1)))


def factor_mass(a: Amplitude, block: str) -> float:
    """∫ 因子"""
    factor: AmplitudeFactor = getattr(a, block)
    return _radial_mass(a.profile_of(block), factor.radius, len(factor.center))


def amplitude_mass(a: Amplitude) -> float:
    """‖a‖₁ = |scale|·Π ∫ 因子"""
    return abs(a.scale) * factor_mass(a, "x") * factor_mass(a, "xi") * factor_mass(a, "t")


# ============ X 因子的 Fourier 变换 ============

class FourierTable:
    """
    单位半径 bump 的 d 维径向 Fourier 变换 B₁(κ) = ∫_{|u|<1} ρ(|u|) e^{iκ·u} du

    d = 1 时用余弦积分，d ≥ 2 用 Hankel 型径向积分；
    在 [0, kmax] 上以步长 step 制表并三次样条插值。
    """

    def __init__(self, dim: int, kmax: float, step: float, nodes: int, tail_tol: float):
        self.dim = dim
        self.kmax = kmax
        self.grid = np.arange(0.0, kmax + 0.5 * step, step)
        r, w = gauss_legendre(nodes, 0.0, 1.0)
        self._r = r
        self._w = w * bump_profile(r)
        values = np.concatenate([self.direct(self.grid[lo:hi]) for lo, hi in chunk_ranges(self.grid.size, 1024)])
        self.values = values
        self.spline = CubicSpline(self.grid, values)
        tail_start = int(0.95 * self.grid.size)
        self.tail = float(np.max(np.abs(values[tail_start:])) / abs(values[0]))
        self.tail_ok = self.tail < tail_tol
        logger.debug(f"Fourier 表 d={dim}: {self.grid.size} 点, 尾部 {self.tail:.2e}")

    def direct(self, kappa: np.ndarray) -> np.ndarray:
        """直接径向求积"""
        kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
        if self.dim == 1:
            return 2.0 * np.cos(np.outer(kappa, self._r)) @ self._w
        nu = self.dim / 2.0 - 1.0
        out = np.empty_like(kappa)
        zero = kappa == 0.0
        out[zero] = self.dim * unit_ball_volume(self.dim) * np.sum(self._w * self._r ** (self.dim - 1))
        k = kappa[~zero]
        if k.size:
            radial = jv(nu, np.outer(k, self._r)) * self._r ** (self.dim / 2.0)
            out[~zero] = (2.0 * np.pi) ** (self.dim / 2.0) * k ** (-nu) * (radial @ self._w)
        return out

    def __call__(self, kappa: np.ndarray) -> Tuple[np.ndarray, int]:
        """
        插值求值

        Returns:
            (B₁(κ), 超出表范围并按 0 处理的点数)
        """
        kappa = np.abs(np.asarray(kappa, dtype=float))
        beyond = kappa > self.kmax
        flagged = int(np.count_nonzero(beyond))
        if flagged and not self.tail_ok:
            raise FourierTableRangeError(
                f"频率 {float(np.max(kappa)):.1f} 超出 Fourier 表范围 {self.kmax}，且尾部 {self.tail:.2e} 未衰减"
            )
        out = np.zeros_like(kappa)
        out[~beyond] = self.spline(kappa[~beyond])
        return out, flagged


@lru_cache(maxsize=8)
def get_fourier_table(dim: int, kmax: float, step: float, nodes: int, tail_tol: float) -> FourierTable:
    return FourierTable(dim, kmax, step, nodes, tail_tol)


def _table_for(dim: int, settings: NumericsSettings) -> FourierTable:
    return get_fourier_table(
        dim,
        settings.fourier_table_kmax,
        settings.fourier_table_step,
        settings.fourier_table_nodes,
        settings.fourier_tail_tol,
    )


def x_factor_transform(a: Amplitude, k: np.ndarray, settings: Optional[NumericsSettings] = None) -> Tuple[np.ndarray, int]:
    """
    b̂(k) = ∫ b(t) e^{i t·k} dt（以 0 为中心的径向 b 为实偶函数）

    Args:
        a: 振幅
        k: 频率，形状 (..., d)

    Returns:
        (b̂(k), 越界按 0 处理的点数)
    """
    settings = settings or get_settings()
    if np.any(np.asarray(a.t.center, dtype=float) != 0.0):
        raise NonSeparableAmplitudeError("X 因子不是以 0 为中心的径向函数，无法做纤维 Fourier 约化")
    k = np.asarray(k, dtype=float)
    dim = k.shape[-1]
    kn = np.linalg.norm(k, axis=-1)
    radius = a.t.radius
    if a.profile_of("t") == ProfileKind.GAUSSIAN:
        return (2.0 * np.pi) ** (dim / 2.0) * radius**dim * np.exp(-0.5 * (radius * kn) ** 2), 0
    values, flagged = _table_for(dim, settings)(radius * kn)
    return radius**dim * values, flagged


def fourier_reduce_X(
    action: GroupAction,
    a: Amplitude,
    x: np.ndarray,
    xi: np.ndarray,
    mu: float,
    settings: Optional[NumericsSettings] = None,
) -> np.ndarray:
    """∫ b(t) e^{i t·J(x,ξ)/μ} dt，支持批量 (x, ξ)"""
    values, _ = x_factor_transform(a, moment_map(action, x, xi) / mu, settings)
    return values.astype(complex)


# ============ I(μ) ============

def _sup_moment(action: GroupAction, box_x: np.ndarray, box_xi: np.ndarray) -> float:
    """盒顶点上的 sup |J|"""
    def vertices(box: np.ndarray) -> np.ndarray:
        grids = np.meshgrid(*[row for row in box], indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)

    vx, vxi = vertices(box_x), vertices(box_xi)
    m = np.einsum("ijk,bj,ak->abi", generator_basis(action), vxi, vx)
    return float(np.max(np.linalg.norm(m, axis=-1)))


def node_count(spec: QuadratureSpec, side: float, sup_m: float, mu: float) -> int:
    """max(nodes_per_dim, ⌈node_factor·边长·sup|J|/μ/2π⌉)"""
    need = math.ceil(spec.node_factor * side * sup_m / mu / (2.0 * math.pi))
    return max(spec.nodes_per_dim, need)


def tensor_rule(box: np.ndarray, count: int) -> Tuple[np.ndarray, np.ndarray]:
    """盒上的张量 Gauss–Legendre：(节点 (N^k, k), 权重 (N^k,))"""
    rules = [gauss_legendre(count, lo, hi) for lo, hi in box]
    grids = np.meshgrid(*[z for z, _ in rules], indexing="ij")
    wgrids = np.meshgrid(*[w for _, w in rules], indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=1)
    weights = np.prod(np.stack([g.reshape(-1) for g in wgrids], axis=1), axis=1)
    return nodes, weights


def _block_rule(a: Amplitude, block: str, box: np.ndarray, count: int) -> Tuple[np.ndarray, np.ndarray]:
    """带振幅因子的权重，剔除因子为 0 的节点"""
    nodes, weights = tensor_rule(box, count)
    w = weights * factor_value(getattr(a, block), a.profile_of(block), nodes)
    keep = w != 0.0
    return nodes[keep], w[keep]


def _run_slabs(tasks: List[Callable[[], complex]], threads: int) -> complex:
    if threads <= 1 or len(tasks) <= 1:
        partials = [task() for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(lambda task: task(), tasks))
    return complex(pairwise_sum(partials))


def _evaluate_once(
    action: GroupAction,
    a: Amplitude,
    mu: float,
    boxes: Dict[str, np.ndarray],
    n_xxi: int,
    n_t: int,
    reduction: ReductionKind,
    threads: int,
    settings: NumericsSettings,
) -> Tuple[complex, int]:
    x_nodes, x_w = _block_rule(a, "x", boxes["x"], n_xxi)
    xi_nodes, xi_w = _block_rule(a, "xi", boxes["xi"], n_xxi)
    if x_nodes.shape[0] == 0 or xi_nodes.shape[0] == 0:
        return 0j, 0
    basis = generator_basis(action)

    t_nodes: Optional[np.ndarray] = None
    t_w: Optional[np.ndarray] = None
    if reduction == ReductionKind.FULL_TENSOR:
        t_nodes, t_w = _block_rule(a, "t", boxes["t"], n_t)
        if t_nodes.shape[0] == 0:
            return 0j, 0
        # 每个切片约 2^22 个复数
        chunk = max(1, (1 << 22) // max(1, xi_nodes.shape[0] * t_nodes.shape[0]))
    else:
        chunk = max(1, (1 << 20) // max(1, xi_nodes.shape[0]))

    flagged_total = [0] * len(chunk_ranges(x_nodes.shape[0], chunk))

    def make_task(index: int, lo: int, hi: int) -> Callable[[], complex]:
        def task() -> complex:
            xs = x_nodes[lo:hi]
            xx = np.einsum("ijk,ak->aij", basis, xs)           # X_i x
            m = np.einsum("aij,bj->abi", xx, xi_nodes)         # J(x_a, ξ_b)
            if reduction == ReductionKind.FULL_TENSOR:
                phase = np.exp(1j * np.einsum("abi,ci->abc", m, t_nodes) / mu)
                inner = phase @ t_w
            else:
                inner, flagged = x_factor_transform(a, m / mu, settings)
                flagged_total[index] = flagged
            return complex(x_w[lo:hi] @ (inner @ xi_w))
        return task

    tasks = [make_task(i, lo, hi) for i, (lo, hi) in enumerate(chunk_ranges(x_nodes.shape[0], chunk))]
    value = a.scale * _run_slabs(tasks, threads)
    return value, int(sum(flagged_total))


def eval_I(
    action: GroupAction,
    a: Amplitude,
    mu: float,
    spec: QuadratureSpec,
    threads: Optional[int] = None,
    settings: Optional[NumericsSettings] = None,
) -> IntegralEstimate:
    """
    I(μ) = ∫∫∫ e^{iψ/μ} a dX dξ dx

    两条路径共用同一 (x, ξ) 网格：fourier_reduced 用 b̂(J/μ)，full_tensor 对 t 也做张量求积。
    误差估计为与 refine_factor 倍加密网格的差。

    Args:
        action: 群作用
        a: 振幅
        mu: μ > 0
        spec: 求积设置
        threads: 工作线程数，只影响耗时

    Returns:
        加密网格上的值与误差估计

    Raises:
        QuadratureAccuracyError: 加密差异超过 rel_tol
    """
    settings = settings or get_settings()
    threads = threads or settings.threads
    if mu <= 0:
        raise PreconditionViolation("μ 必须为正")
    _check_dims(action, a)
    if spec.reduction == ReductionKind.FULL_TENSOR and 2 * action.n + action.d > 5:
        raise PreconditionViolation(f"full_tensor 只允许 2n+d ≤ 5，当前 {2 * action.n + action.d}")

    boxes = amplitude_boxes(a, spec)
    sup_m = _sup_moment(action, boxes["x"], boxes["xi"])
    side_xxi = float(max(np.max(boxes["x"][:, 1] - boxes["x"][:, 0]), np.max(boxes["xi"][:, 1] - boxes["xi"][:, 0])))
    side_t = float(np.max(boxes["t"][:, 1] - boxes["t"][:, 0]))
    n_xxi = node_count(spec, side_xxi, sup_m, mu)
    n_t = node_count(spec, side_t, sup_m, mu)

    coarse, _ = _evaluate_once(action, a, mu, boxes, n_xxi, n_t, spec.reduction, threads, settings)
    fine_xxi = math.ceil(spec.refine_factor * n_xxi)
    fine_t = math.ceil(spec.refine_factor * n_t)
    fine, flagged = _evaluate_once(action, a, mu, boxes, fine_xxi, fine_t, spec.reduction, threads, settings)
    err = abs(fine - coarse)
    if flagged:
        logger.warning(f"⚠️ μ={mu:.4g}: {flagged} 个节点的频率超出 Fourier 表，按 0 处理")

    logger.debug(f"I({mu:.4g}) = {fine:.6e}, err {err:.2e}, 节点 {n_xxi}/{fine_xxi} 每维 ({spec.reduction.value})")
    if spec.check_accuracy:
        floor = 1e-12 * amplitude_mass(a)
        if err > spec.rel_tol * max(abs(fine), floor):
            raise QuadratureAccuracyError(
                f"μ={mu:.4g} 处振荡未解析：加密差 {err:.3e}，|I| = {abs(fine):.3e}",
                mu=mu,
            )
    return IntegralEstimate(
        mu=mu,
        re=fine.real,
        im=fine.imag,
        err_estimate=err,
        method=spec.reduction.value,
        nodes_per_dim=fine_xxi,
    )


# ============ SO(2)/ℝ² 余面积半解析 ============

def is_planar_rotation(action: GroupAction) -> bool:
    """作用是否为 SO(2) 在 ℝ² 上的旋转"""
    if action.n != 2 or action.d != 1:
        return False
    gen = generator_basis(action)[0]
    return bool(np.allclose(np.abs(gen), [[0.0, 1.0], [1.0, 0.0]], atol=1e-12))


class So2CoareaOracle:
    """
    SO(2)/ℝ² 上按矩映射水平集分解

    坐标 x = r·x̂(θ)，ξ = q·x̂ + (s/r)·X₁x̂，此时 J = s 且 dx dξ = dr dθ dq ds。
    A(s) = ∫ a₁ dr dθ dq 在 s 网格上制表后样条插值。
    """

    def __init__(self, action: GroupAction, a: Amplitude, nodes: int = 64, s_points: int = 401):
        if not is_planar_rotation(action):
            raise PreconditionViolation("半解析解只适用于 SO(2) 在 ℝ² 上的作用")
        _check_dims(action, a)
        self.action = action
        self.a = a
        self.generator = generator_basis(action)[0]
        boxes = amplitude_boxes(a)
        self.s_max = max(_sup_moment(action, boxes["x"], boxes["xi"]), 1e-12)
        self._setup_grid(nodes)
        self.s_grid = np.linspace(-self.s_max, self.s_max, s_points)
        self.A_values = np.array([self._level_integral(s) for s in self.s_grid])
        self.A_spline = CubicSpline(self.s_grid, self.A_values)

    def _setup_grid(self, nodes: int) -> None:
        a = self.a
        x0 = np.asarray(a.x.center, dtype=float)
        rx = a.x.radius * (1.0 if a.profile_of("x") == ProfileKind.BUMP else GAUSSIAN_CUTOFF)
        rxi = a.xi.radius * (1.0 if a.profile_of("xi") == ProfileKind.BUMP else GAUSSIAN_CUTOFF)
        norm0 = float(np.linalg.norm(x0))
        r_lo, r_hi = max(0.0, norm0 - rx), norm0 + rx
        if rx < norm0:
            theta0 = math.atan2(x0[1], x0[0])
            spread = math.asin(rx / norm0)
            th_lo, th_hi = theta0 - spread, theta0 + spread
        else:
            th_lo, th_hi = -math.pi, math.pi
        self.r, self.wr = gauss_legendre(nodes, r_lo, r_hi)
        self.theta, self.wtheta = gauss_legendre(nodes, th_lo, th_hi)
        self.unit = np.stack([np.cos(self.theta), np.sin(self.theta)], axis=1)
        self.rot = self.unit @ self.generator.T
        xi0 = np.asarray(a.xi.center, dtype=float)
        # q 的区间随 θ 变化：ξ₀·x̂ ± 半径
        center_q = self.unit @ xi0
        self.q_nodes = np.empty((nodes, nodes))
        self.q_weights = np.empty((nodes, nodes))
        for j, c in enumerate(center_q):
            self.q_nodes[j], self.q_weights[j] = gauss_legendre(nodes, c - rxi, c + rxi)
        # x 因子与 (r, θ) 无关于 s，预先计算
        x = self.r[:, None, None] * self.unit[None, :, :]
        self.ax = factor_value(a.x, a.profile_of("x"), x) * self.wr[:, None] * self.wtheta[None, :]

    def _level_integral(self, s: float) -> float:
        a = self.a
        # ξ[r, θ, q] = q·x̂(θ) + (s/r)·X₁x̂(θ)
        xi = (
            self.q_nodes[None, :, :, None] * self.unit[None, :, None, :]
            + (s / self.r)[:, None, None, None] * self.rot[None, :, None, :]
        )
        axi = factor_value(a.xi, a.profile_of("xi"), xi)
        return float(np.sum(self.ax[:, :, None] * self.q_weights[None, :, :] * axi))

    def A(self, s: np.ndarray) -> np.ndarray:
        """A(s)，支撑外为 0"""
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        inside = np.abs(s) <= self.s_max
        out[inside] = self.A_spline(s[inside])
        return out

    def evaluate(self, mu: float, per_panel: int = 16, settings: Optional[NumericsSettings] = None) -> SemianalyticResult:
        """I(μ) = μ ∫ b̂(u) A(μu) du"""
        settings = settings or get_settings()
        a = self.a
        u_max = self.s_max / mu
        if a.profile_of("t") == ProfileKind.BUMP:
            u_max = min(u_max, settings.fourier_table_kmax / a.t.radius)
        else:
            u_max = min(u_max, 40.0 / a.t.radius)
        # b̂ 在 u 上的振荡周期约 2π/R
        panels = max(8, math.ceil(2.0 * u_max * a.t.radius / math.pi))
        edges = np.linspace(-u_max, u_max, panels + 1)
        u_parts, w_parts = zip(*[gauss_legendre(per_panel, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])])
        u = np.concatenate(u_parts)
        w = np.concatenate(w_parts)
        bhat, _ = x_factor_transform(a, u[:, None], settings)
        value = a.scale * mu * complex(np.sum(w * bhat * self.A(mu * u)))
        b0 = float(factor_value(a.t, a.profile_of("t"), np.zeros(1)))
        A0 = float(self.A(np.zeros(1))[0])
        slope = 2.0 * math.pi * a.scale * b0 * A0
        return SemianalyticResult(mu=mu, re=value.real, im=value.imag, slope=slope, A0=A0, b0=b0)


def eval_I_semianalytic_so2(
    action: GroupAction,
    a: Amplitude,
    mu: float,
    nodes: int = 64,
    settings: Optional[NumericsSettings] = None,
) -> SemianalyticResult:
    """
    SO(2)/ℝ² 的余面积半解析 I(μ) 及其 μ→0 斜率 2π b(0) A(0)

    Raises:
        PreconditionViolation: 作用不是 SO(2)/ℝ²
        NonSeparableAmplitudeError: X 因子不以 0 为中心
    """
    return So2CoareaOracle(action, a, nodes=nodes).evaluate(mu, settings=settings)
