"""
矩映射相位 ψ(x, ξ, X) = ⟨Xx, ξ⟩
梯度、完整 Hessian 与临界性判定；数组接口支持前导批量维
"""
from typing import Optional, Tuple

import numpy as np

from engine.action_model import algebra_element, bracket_coefficients, generator_basis
from engine.settings import NumericsSettings, get_settings
from shared.models import CriticalityReport, GroupAction, PhasePoint
from shared.utils import central_gradient


def _arrays(p: PhasePoint) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return np.asarray(p.x, dtype=float), np.asarray(p.xi, dtype=float), np.asarray(p.t, dtype=float)


def moment_map(action: GroupAction, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """
    J(x, ξ)_i = ⟨X_i x, ξ⟩

    Args:
        action: 群作用
        x: 位置，形状 (..., n)
        xi: 余向量，形状 (..., n)

    Returns:
        形状 (..., d)
    """
    basis = generator_basis(action)
    return np.einsum("ijk,...j,...k->...i", basis, np.asarray(xi, dtype=float), np.asarray(x, dtype=float))


def psi_array(action: GroupAction, x: np.ndarray, xi: np.ndarray, t: np.ndarray) -> np.ndarray:
    """ψ = t · J(x, ξ)"""
    return np.einsum("...i,...i->...", np.asarray(t, dtype=float), moment_map(action, x, xi))


def psi(action: GroupAction, p: PhasePoint) -> float:
    x, xi, t = _arrays(p)
    return float(psi_array(action, x, xi, t))


def grad_psi_array(action: GroupAction, x: np.ndarray, xi: np.ndarray, t: np.ndarray) -> np.ndarray:
    """按 (x, ξ, t) 顺序拼接的梯度 (ᵗXξ, Xx, J(x, ξ))"""
    mat = algebra_element(action, t)
    dx = np.einsum("...kj,...k->...j", mat, xi)
    dxi = np.einsum("...jk,...k->...j", mat, x)
    return np.concatenate([dx, dxi, moment_map(action, x, xi)], axis=-1)


def grad_psi(action: GroupAction, p: PhasePoint) -> np.ndarray:
    x, xi, t = _arrays(p)
    return grad_psi_array(action, x, xi, t)


def hess_psi_array(action: GroupAction, x: np.ndarray, xi: np.ndarray, t: np.ndarray) -> np.ndarray:
    """
    Hessian 分块矩阵，形状 (..., 2n+d, 2n+d)

    H[x, ξ] = ᵗX，H[x_a, t_i] = (ᵗX_i ξ)_a，H[ξ_b, t_i] = (X_i x)_b，其余块为 0。
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    t = np.asarray(t, dtype=float)
    n, d = action.n, action.d
    basis = generator_basis(action)
    batch = np.broadcast_shapes(x.shape[:-1], xi.shape[:-1], t.shape[:-1])
    mat = algebra_element(action, t)
    hess = np.zeros(batch + (2 * n + d, 2 * n + d))

    hess[..., :n, n:2 * n] = np.swapaxes(mat, -1, -2)
    hess[..., n:2 * n, :n] = mat
    x_t = np.einsum("ikj,...k->...ji", basis, xi)   # (ᵗX_i ξ)_j
    xi_t = np.einsum("ijk,...k->...ji", basis, x)   # (X_i x)_j
    hess[..., :n, 2 * n:] = x_t
    hess[..., 2 * n:, :n] = np.swapaxes(x_t, -1, -2)
    hess[..., n:2 * n, 2 * n:] = xi_t
    hess[..., 2 * n:, n:2 * n] = np.swapaxes(xi_t, -1, -2)
    return hess


def hess_psi(action: GroupAction, p: PhasePoint) -> np.ndarray:
    x, xi, t = _arrays(p)
    return hess_psi_array(action, x, xi, t)


def split_point(action: GroupAction, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """将拼接坐标 (..., 2n+d) 拆为 (x, ξ, t)"""
    n = action.n
    z = np.asarray(z, dtype=float)
    return z[..., :n], z[..., n:2 * n], z[..., 2 * n:]


def to_point(action: GroupAction, z: np.ndarray) -> PhasePoint:
    x, xi, t = split_point(action, z)
    return PhasePoint(x=x.copy(), xi=xi.copy(), t=t.copy())


def fd_gradient(action: GroupAction, p: PhasePoint, step: float = 1e-5) -> np.ndarray:
    """ψ 的中心差分梯度，用于与解析式对照"""
    return central_gradient(lambda z: float(psi_array(action, *split_point(action, z))), p.stacked(), step)


def fd_hessian(action: GroupAction, p: PhasePoint, step: float = 1e-5) -> np.ndarray:
    """解析梯度的中心差分雅可比（对称化前）"""
    z0 = p.stacked()
    cols = []
    for i in range(z0.size):
        e = np.zeros_like(z0)
        e[i] = step
        plus = grad_psi_array(action, *split_point(action, z0 + e))
        minus = grad_psi_array(action, *split_point(action, z0 - e))
        cols.append((plus - minus) / (2.0 * step))
    return np.stack(cols, axis=1)


def criticality_scale(p: PhasePoint) -> float:
    x, xi, t = _arrays(p)
    return float((1.0 + np.linalg.norm(x)) * (1.0 + np.linalg.norm(xi)) * (1.0 + np.linalg.norm(t)))


def is_critical(
    action: GroupAction,
    p: PhasePoint,
    tol: Optional[float] = None,
    settings: Optional[NumericsSettings] = None,
) -> CriticalityReport:
    """
    临界性判定：‖∇ψ‖ ≤ tol·scale

    同时独立检查 (x, ξ) ∈ Ω 与 X ∈ g_(x,ξ)，两者的合取应与梯度判定一致。

    Args:
        action: 群作用
        p: 相空间点
        tol: 绝对容差（按尺度归一化），默认取配置中的 crit_tol

    Returns:
        判定结果与诊断
    """
    settings = settings or get_settings()
    tol = settings.crit_tol if tol is None else tol
    x, xi, t = _arrays(p)
    scale = criticality_scale(p)
    grad_norm = float(np.linalg.norm(grad_psi_array(action, x, xi, t)))
    mat = algebra_element(action, t)
    in_omega = float(np.linalg.norm(moment_map(action, x, xi))) <= tol * scale
    in_isotropy = max(float(np.linalg.norm(mat @ x)), float(np.linalg.norm(mat @ xi))) <= tol * scale
    return CriticalityReport(
        is_critical=grad_norm <= tol * scale,
        gradient_norm=grad_norm,
        scale=scale,
        in_omega=in_omega,
        in_isotropy=in_isotropy,
    )


def fundamental_field(action: GroupAction, y: np.ndarray, p: PhasePoint) -> np.ndarray:
    """
    Y ∈ g 在 (x, ξ, X) 上的无穷小作用 (Yx, Yξ, [Y, X])

    Args:
        action: 群作用
        y: Y 的系数
        p: 相空间点

    Returns:
        拼接坐标中的切向量
    """
    x, xi, t = _arrays(p)
    ymat = algebra_element(action, y)
    comm = bracket_coefficients(action, ymat, algebra_element(action, t))
    return np.concatenate([ymat @ x, ymat @ xi, comm])
