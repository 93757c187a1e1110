"""
正则临界流形与 L₀ 测试
"""
import numpy as np
import pytest

from engine.action_model import rotate_basis, shipped_action
from engine.critical import (
    _defining_rows,
    _slab_box,
    _slab_shard,
    integrate_L0,
    is_regular,
    project_to_crit,
    transversal_hessian,
)
from engine.oracle import eval_I_semianalytic_so2
from engine.phase import is_critical
from shared.errors import PreconditionViolation
from shared.models import Amplitude, AmplitudeFactor, PhasePoint, SurfaceMethod, SurfaceQuadrature

KAPPA = {"so2": 1, "so3": 2, "t2": 2}


def _regular_amplitude(name):
    """支撑避开奇异层的 bump 振幅"""
    centers = {
        "so2": ([1.0, 0.0], [1.0, 0.0], [0.0]),
        "so3": ([1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
        "t2": ([1.0, 0.0, 1.0, 0.0], [1.0, 0.0, 1.0, 0.0], [0.0, 0.0]),
    }
    x, xi, t = centers[name]
    return Amplitude(
        x=AmplitudeFactor(center=x, radius=0.5),
        xi=AmplitudeFactor(center=xi, radius=0.5),
        t=AmplitudeFactor(center=t, radius=1.0),
    )


def _slab(eps, budget, sweep=()):
    return SurfaceQuadrature(
        method=SurfaceMethod.SLAB_MONTE_CARLO, eps_slab=eps, budget=budget, eps_sweep=list(sweep)
    )


def test_transversal_hessian_on_rotation_orbit(so2):
    p = PhasePoint(x=[1.0, 0.0], xi=[2.0, 0.0], t=[0.0])
    sample = transversal_hessian(so2, p, kappa=1)
    assert sample.tangent_dim == 3
    assert sample.transversal_det_abs == pytest.approx(5.0)
    assert sample.signature == 0
    assert np.allclose(sorted(sample.nonzero_spectrum), [-np.sqrt(5.0), np.sqrt(5.0)])


def test_transversal_hessian_needs_critical_point(so2):
    p = PhasePoint(x=[1.0, 0.0], xi=[0.0, 1.0], t=[0.0])
    with pytest.raises(PreconditionViolation):
        transversal_hessian(so2, p, kappa=1)


def test_transversal_hessian_rejects_singular_stratum(so2):
    # 原点是临界点但迷向为整个 g
    p = PhasePoint(x=[0.0, 0.0], xi=[0.0, 0.0], t=[0.0])
    with pytest.raises(PreconditionViolation):
        transversal_hessian(so2, p, kappa=1)


def test_so3_transversal_hessian(so3):
    p = PhasePoint(x=[0.0, 0.0, 1.0], xi=[0.0, 0.0, 2.0], t=[0.0, 0.0, 0.7])
    sample = transversal_hessian(so3, p, kappa=2)
    assert sample.tangent_dim == 2 * 3 + 3 - 4
    assert len(sample.nonzero_spectrum) == 4


def test_is_regular(so2, t2):
    assert is_regular(so2, np.array([1.0, 0.0]), np.array([2.0, 0.0]), kappa=1)
    assert not is_regular(so2, np.zeros(2), np.zeros(2), kappa=1)
    assert not is_regular(t2, np.array([1.0, 0.0, 0.0, 0.0]), np.array([0.5, 0.0, 0.0, 0.0]), kappa=2)


def test_is_regular_off_omega(so2):
    with pytest.raises(PreconditionViolation):
        is_regular(so2, np.array([1.0, 0.0]), np.array([0.0, 1.0]), kappa=1)


def test_projection_converges(so2):
    seed = PhasePoint(x=[1.0, 0.05], xi=[2.0, 0.1], t=[0.05])
    result = project_to_crit(so2, seed, kappa=1)
    assert result.converged
    assert not result.singular
    assert result.residual <= 1e-12
    assert is_critical(so2, result.point).is_critical


def test_projection_near_origin_is_singular(so2):
    seed = PhasePoint(x=[1e-4, 0.0], xi=[1e-4, 1e-5], t=[0.0])
    result = project_to_crit(so2, seed, kappa=1)
    assert result.converged
    assert result.singular


def test_chart_grid_requires_planar_rotation(so3, reference_amplitude):
    quad = SurfaceQuadrature(method=SurfaceMethod.CHART_GRID)
    with pytest.raises(PreconditionViolation):
        integrate_L0(so3, reference_amplitude, 2, quad)


def test_chart_grid_is_stable(so2, reference_amplitude):
    quad = SurfaceQuadrature(method=SurfaceMethod.CHART_GRID, grid_nodes=48)
    result = integrate_L0(so2, reference_amplitude, 1, quad)
    assert result.L0 > 0.0
    assert result.n_accepted > 0
    assert result.signatures == [0]
    assert result.stderr_estimate <= 1e-3 * result.L0


@pytest.mark.slow
def test_surface_methods_agree_with_coarea(so2, reference_amplitude):
    grid = integrate_L0(so2, reference_amplitude, 1, SurfaceQuadrature(method=SurfaceMethod.CHART_GRID, grid_nodes=64))
    slab = integrate_L0(
        so2,
        reference_amplitude,
        1,
        SurfaceQuadrature(method=SurfaceMethod.SLAB_MONTE_CARLO, eps_slab=0.01, budget=2_000_000),
        seed=7,
    )
    semi = eval_I_semianalytic_so2(so2, reference_amplitude, mu=0.1)
    l0_semi = semi.slope / (2.0 * np.pi)
    assert grid.L0 == pytest.approx(l0_semi, rel=1e-3)
    assert slab.L0 == pytest.approx(grid.L0, rel=0.02)


@pytest.mark.parametrize("name", ["so2", "so3", "t2"])
def test_transversal_determinant_is_basis_independent(name):
    action = shipped_action(name)
    rotated = rotate_basis(action, seed=5)
    amplitude = _regular_amplitude(name)
    p = PhasePoint(x=amplitude.x.center, xi=amplitude.xi.center, t=np.zeros(action.d))
    assert is_critical(action, p).is_critical and is_critical(rotated, p).is_critical
    a = transversal_hessian(action, p, KAPPA[name])
    b = transversal_hessian(rotated, p, KAPPA[name])
    assert b.transversal_det_abs == pytest.approx(a.transversal_det_abs, rel=1e-8)
    assert b.signature == a.signature


def test_chart_grid_is_basis_independent(so2, reference_amplitude):
    quad = SurfaceQuadrature(method=SurfaceMethod.CHART_GRID, grid_nodes=32)
    base = integrate_L0(so2, reference_amplitude, 1, quad)
    for seed in (1, 2):
        rotated = integrate_L0(rotate_basis(so2, seed), reference_amplitude, 1, quad)
        assert rotated.L0 == pytest.approx(base.L0, rel=1e-10)


def test_slab_is_independent_of_thread_count(so2, reference_amplitude, settings):
    quad = _slab(0.02, 300_000)
    one = integrate_L0(so2, reference_amplitude, 1, quad, seed=11, threads=1, settings=settings)
    four = integrate_L0(so2, reference_amplitude, 1, quad, seed=11, threads=4, settings=settings)
    assert one.n_accepted > 0
    assert one.L0 == four.L0
    assert one.stderr_estimate == four.stderr_estimate
    assert one.signatures == four.signatures == [0]


def test_slab_shards_do_not_depend_on_evaluation_order(so2, reference_amplitude, settings):
    z0 = np.array([1.0, 0.0, 1.0, 0.0, 0.0])
    rows = _defining_rows(so2, z0, 1)
    box = _slab_box(so2, reference_amplitude, 1, z0, rows, 0.05, settings)

    def shard(index):
        return _slab_shard(so2, reference_amplitude, 1, box, rows, 0.05, 3, index, 20_000, settings)

    forward = [shard(i) for i in range(3)]
    backward = [shard(i) for i in reversed(range(3))][::-1]
    assert forward == backward
    assert forward[0] != forward[1]


def test_slab_eps_sweep_and_richardson(so2, reference_amplitude, settings):
    result = integrate_L0(so2, reference_amplitude, 1, _slab(0.02, 300_000, (0.04, 0.02)), seed=3, settings=settings)
    assert set(result.sweep) == {"0.02", "0.04"}
    l1, l2 = result.sweep["0.02"], result.sweep["0.04"]
    assert result.sweep["0.02"] == result.L0
    assert result.richardson == pytest.approx((0.04**2 * l1 - 0.02**2 * l2) / (0.04**2 - 0.02**2))
    assert np.isfinite(result.richardson)


@pytest.mark.slow
@pytest.mark.parametrize("name, eps, budget", [("so2", 0.01, 1_000_000), ("so3", 0.05, 2_000_000), ("t2", 0.05, 2_000_000)])
def test_slab_on_shipped_actions(name, eps, budget, settings):
    action = shipped_action(name)
    amplitude = _regular_amplitude(name)
    one = integrate_L0(action, amplitude, KAPPA[name], _slab(eps, budget), seed=17, threads=1, settings=settings)
    four = integrate_L0(action, amplitude, KAPPA[name], _slab(eps, budget), seed=17, threads=4, settings=settings)
    assert np.isfinite(one.L0) and one.L0 > 0.0
    assert one.n_accepted > 0
    assert one.signatures == [0]
    assert one.L0 == four.L0
