"""
共享数值工具函数
"""
import hashlib
import json
from functools import lru_cache
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import gamma


def rank_threshold(singular_values: np.ndarray, rtol: float) -> float:
    """
    秩判定阈值：rtol·max(最大奇异值, 1)

    Args:
        singular_values: 奇异值数组
        rtol: 相对阈值

    Returns:
        阈值
    """
    smax = float(np.max(singular_values)) if singular_values.size else 0.0
    return rtol * max(smax, 1.0)


def null_space_rows(matrix: np.ndarray, rtol: float) -> Tuple[int, np.ndarray]:
    """
    计算矩阵的数值秩和零空间正交基（按行返回）

    Args:
        matrix: m×k 矩阵
        rtol: 相对奇异值阈值

    Returns:
        (数值秩, 零空间基, 形状 (k - rank)×k)
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    cols = matrix.shape[1]
    if matrix.shape[0] == 0:
        return 0, np.eye(cols)
    _, s, vt = np.linalg.svd(matrix, full_matrices=True)
    rank = int(np.sum(s > rank_threshold(s, rtol)))
    return rank, vt[rank:].copy()


def orthonormal_rows(vectors: np.ndarray, rtol: float) -> np.ndarray:
    """
    行空间的正交基

    Args:
        vectors: 按行排列的向量
        rtol: 相对奇异值阈值

    Returns:
        正交基（按行）
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    if vectors.shape[0] == 0:
        return np.zeros((0, vectors.shape[1]))
    _, s, vt = np.linalg.svd(vectors, full_matrices=False)
    # 行向量全为 0 时整体视为空
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((0, vectors.shape[1]))
    rank = int(np.sum(s > rtol * max(s[0], 1e-300)))
    return vt[:rank].copy()


def orthogonal_complement(rows: np.ndarray, dim: int, rtol: float) -> np.ndarray:
    """
    行空间在 ℝ^dim 中的正交补（按行）

    Args:
        rows: 张成子空间的向量
        dim: 环境维数
        rtol: 相对奇异值阈值

    Returns:
        正交补的正交基
    """
    rows = np.asarray(rows, dtype=float).reshape(-1, dim)
    basis = orthonormal_rows(rows, rtol) if rows.shape[0] else np.zeros((0, dim))
    if basis.shape[0] == 0:
        return np.eye(dim)
    _, vt = null_space_rows(basis, rtol)
    return vt


def align_frame(frame: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """
    将子空间的正交标架旋转到与参考标架最接近的位置（Procrustes 对齐）

    Args:
        frame: 新子空间的正交基（按行）
        reference: 参考正交基（按行，行数相同）

    Returns:
        对齐后的正交基
    """
    if frame.shape[0] == 0:
        return frame
    u, _, vt = np.linalg.svd(reference @ frame.T)
    return (u @ vt) @ frame


def substream(seed: int, stream: int, shard: int = 0) -> np.random.Generator:
    """
    按 (seed, stream, shard) 派生确定性的随机数子流

    Args:
        seed: 64 位种子
        stream: 用途编号
        shard: 分片编号

    Returns:
        PCG64 随机数生成器
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(shard)))
    return np.random.Generator(np.random.PCG64(sequence))


def pairwise_sum(values: Sequence[Any]) -> Any:
    """
    确定性的成对求和，与分片的计算顺序无关

    Args:
        values: 有序的部分和序列

    Returns:
        总和
    """
    items = list(values)
    if not items:
        return 0.0
    while len(items) > 1:
        paired = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            paired.append(items[-1])
        items = paired
    return items[0]


def config_hash(payload: Dict[str, Any]) -> str:
    """
    配置内容的 SHA-256 摘要（键排序后的规范 JSON）

    Args:
        payload: 可 JSON 序列化的配置字典

    Returns:
        十六进制摘要
    """
    content = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(content.encode()).hexdigest()


@lru_cache(maxsize=64)
def _leggauss(count: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = leggauss(count)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre(count: int, lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    区间 [lo, hi] 上的 Gauss–Legendre 节点与权重

    Args:
        count: 节点数
        lo: 下限
        hi: 上限

    Returns:
        (节点, 权重)
    """
    nodes, weights = _leggauss(int(count))
    half = 0.5 * (hi - lo)
    return lo + half * (nodes + 1.0), half * weights


def graded_panels(limit: float, ratio: float, levels: int) -> np.ndarray:
    """
    [0, limit] 上向 0 几何加密的分段端点
    """
    edges = limit * ratio ** np.arange(levels, -1, -1, dtype=float)
    return np.concatenate([[0.0], edges])


def composite_gauss_legendre(edges: np.ndarray, per_panel: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    分段 Gauss–Legendre 规则

    Args:
        edges: 递增的分段端点
        per_panel: 每段节点数

    Returns:
        (节点, 权重)
    """
    nodes: List[np.ndarray] = []
    weights: List[np.ndarray] = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        z, w = gauss_legendre(per_panel, lo, hi)
        nodes.append(z)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def sinc(z: np.ndarray) -> np.ndarray:
    """sin(z)/z，z = 0 处取 1"""
    return np.sinc(np.asarray(z) / np.pi)


def central_gradient(f: Callable[[np.ndarray], float], z: np.ndarray, step: float) -> np.ndarray:
    """
    中心差分梯度

    Args:
        f: 标量函数
        z: 求值点
        step: 步长

    Returns:
        梯度向量
    """
    z = np.asarray(z, dtype=float)
    grad = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = step
        grad[i] = (f(z + e) - f(z - e)) / (2.0 * step)
    return grad


def _central_hessian_once(f: Callable[[np.ndarray], float], z: np.ndarray, step: float) -> np.ndarray:
    dim = z.size
    hess = np.empty((dim, dim))
    f0 = f(z)
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = step
        hess[i, i] = (f(z + ei) - 2.0 * f0 + f(z - ei)) / step**2
        for j in range(i + 1, dim):
            ej = np.zeros(dim)
            ej[j] = step
            value = (
                f(z + ei + ej) - f(z + ei - ej) - f(z - ei + ej) + f(z - ei - ej)
            ) / (4.0 * step**2)
            hess[i, j] = hess[j, i] = value
    return hess


def central_hessian(
    f: Callable[[np.ndarray], float],
    z: np.ndarray,
    step: float,
    richardson: bool = True,
) -> np.ndarray:
    """
    中心差分 Hessian，可选一次 Richardson 外推

    Args:
        f: 标量函数
        z: 求值点
        step: 步长
        richardson: 是否用 step 与 step/2 外推

    Returns:
        对称 Hessian 矩阵
    """
    z = np.asarray(z, dtype=float)
    coarse = _central_hessian_once(f, z, step)
    if not richardson:
        return coarse
    fine = _central_hessian_once(f, z, 0.5 * step)
    return (4.0 * fine - coarse) / 3.0


def unit_ball_volume(dim: int) -> float:
    """dim 维单位球体积"""
    return float(np.pi ** (dim / 2.0) / gamma(dim / 2.0 + 1.0))


def chunk_ranges(total: int, size: int) -> List[Tuple[int, int]]:
    """把 [0, total) 切成固定大小的分片"""
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def as_vector(values: Optional[Sequence[float]], dim: int) -> np.ndarray:
    """转为长度 dim 的浮点向量，None 视为零向量"""
    if values is None:
        return np.zeros(dim)
    vector = np.asarray(values, dtype=float).reshape(-1)
    if vector.size != dim:
        raise ValueError(f"期望长度 {dim}，实际 {vector.size}")
    return vector
