"""
I(μ) 求值测试
"""
import numpy as np
import pytest

from engine.oracle import (
    FourierTable,
    amplitude_mass,
    bump_profile,
    eval_amplitude,
    eval_I,
    eval_I_semianalytic_so2,
    factor_mass,
    fourier_reduce_X,
    x_factor_transform,
)
from engine.phase import moment_map
from shared.errors import FourierTableRangeError, NonSeparableAmplitudeError, PreconditionViolation, QuadratureAccuracyError
from shared.models import Amplitude, AmplitudeFactor, AmplitudeKind, QuadratureSpec, ReductionKind


def test_bump_profile():
    values = bump_profile(np.array([0.0, 0.5, 1.0, 1.5]))
    assert values[0] == pytest.approx(1.0)
    assert values[1] == pytest.approx(np.exp(-1.0 / 3.0))
    assert values[2] == 0.0 and values[3] == 0.0


def test_amplitude_vanishes_outside_support(reference_amplitude):
    x = np.array([[1.0, 0.0], [1.6, 0.0]])
    xi = np.array([[1.0, 0.0], [1.0, 0.0]])
    t = np.zeros((2, 1))
    values = eval_amplitude(reference_amplitude, x, xi, t)
    assert values[0] == pytest.approx(1.0)
    assert values[1] == 0.0


def test_gaussian_mass():
    a = Amplitude(
        kind=AmplitudeKind.GAUSSIAN_PRODUCT,
        x=AmplitudeFactor(center=[0.0, 0.0], radius=0.5),
        xi=AmplitudeFactor(center=[0.0, 0.0], radius=1.0),
        t=AmplitudeFactor(center=[0.0], radius=2.0),
        scale=-3.0,
    )
    expected = 3.0 * (2 * np.pi * 0.25) * (2 * np.pi) * (np.sqrt(2 * np.pi) * 2.0)
    assert amplitude_mass(a) == pytest.approx(expected)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_table_at_zero_is_bump_mass(dim):
    table = FourierTable(dim, kmax=50.0, step=0.01, nodes=2048, tail_tol=1.0)
    a = Amplitude(
        x=AmplitudeFactor(center=[0.0], radius=1.0),
        xi=AmplitudeFactor(center=[0.0], radius=1.0),
        t=AmplitudeFactor(center=[0.0] * dim, radius=1.0),
    )
    values, flagged = table(np.array([0.0]))
    assert flagged == 0
    assert values[0] == pytest.approx(factor_mass(a, "t"), rel=1e-8)


@pytest.mark.parametrize("dim", [1, 3])
def test_table_interpolation_matches_direct(dim):
    table = FourierTable(dim, kmax=50.0, step=0.01, nodes=2048, tail_tol=1.0)
    k = np.array([0.137, 3.3333, 12.71, 41.005])
    values, _ = table(k)
    assert np.allclose(values, table.direct(k), atol=1e-7 * table.values[0])


def test_table_range_error():
    table = FourierTable(1, kmax=10.0, step=0.01, nodes=512, tail_tol=1e-300)
    with pytest.raises(FourierTableRangeError):
        table(np.array([20.0]))


def test_table_beyond_range_counts_as_zero():
    table = FourierTable(1, kmax=10.0, step=0.01, nodes=512, tail_tol=1.0)
    values, flagged = table(np.array([5.0, 20.0]))
    assert flagged == 1
    assert values[1] == 0.0


def test_gaussian_transform_at_zero():
    a = Amplitude(
        x=AmplitudeFactor(center=[0.0, 0.0], radius=1.0),
        xi=AmplitudeFactor(center=[0.0, 0.0], radius=1.0),
        t=AmplitudeFactor(center=[0.0, 0.0], radius=0.7, profile="gaussian"),
    )
    values, flagged = x_factor_transform(a, np.zeros((1, 2)))
    assert flagged == 0
    assert values[0] == pytest.approx(factor_mass(a, "t"))


def test_fourier_reduction_matches_x_factor_transform(so2, reference_amplitude):
    x = np.array([[1.0, 0.0], [1.0, 0.0], [0.8, 0.3]])
    xi = np.array([[0.0, 0.0], [0.0, 0.4], [1.1, -0.2]])
    values = fourier_reduce_X(so2, reference_amplitude, x, xi, 0.1)
    assert np.iscomplexobj(values)
    assert np.allclose(values.imag, 0.0)
    # J = 0 时等于 X 因子的质量
    assert values[0].real == pytest.approx(factor_mass(reference_amplitude, "t"), rel=1e-6)
    direct, _ = x_factor_transform(reference_amplitude, moment_map(so2, x, xi) / 0.1)
    assert np.allclose(values.real, direct, rtol=1e-12, atol=1e-14)


def test_off_center_x_factor_is_rejected(so2):
    a = Amplitude(
        x=AmplitudeFactor(center=[1.0, 0.0], radius=0.5),
        xi=AmplitudeFactor(center=[1.0, 0.0], radius=0.5),
        t=AmplitudeFactor(center=[0.2], radius=1.0),
    )
    with pytest.raises(NonSeparableAmplitudeError):
        eval_I(so2, a, 0.1, QuadratureSpec())


def test_invalid_inputs(so2, so3, reference_amplitude):
    with pytest.raises(PreconditionViolation):
        eval_I(so2, reference_amplitude, 0.0, QuadratureSpec())
    a3 = Amplitude(
        x=AmplitudeFactor(center=[1.0, 0.0, 0.0], radius=0.5),
        xi=AmplitudeFactor(center=[1.0, 0.0, 0.0], radius=0.5),
        t=AmplitudeFactor(center=[0.0, 0.0, 0.0], radius=1.0),
    )
    with pytest.raises(PreconditionViolation):
        eval_I(so3, a3, 0.1, QuadratureSpec(reduction=ReductionKind.FULL_TENSOR))
    # 维数不匹配
    with pytest.raises(PreconditionViolation):
        eval_I(so3, reference_amplitude, 0.1, QuadratureSpec())


def test_null_amplitude_is_negligible(so2, null_config):
    estimate = eval_I(so2, null_config.amplitude, 0.05, null_config.oracle)
    assert abs(estimate.value) <= 1e-8 * amplitude_mass(null_config.amplitude)


def test_unresolved_oscillation_raises(so2, reference_amplitude):
    spec = QuadratureSpec(nodes_per_dim=8, node_factor=0.01, rel_tol=1e-6)
    with pytest.raises(QuadratureAccuracyError) as info:
        eval_I(so2, reference_amplitude, 0.02, spec)
    assert info.value.mu == 0.02


def test_threads_do_not_change_result(so2, reference_amplitude):
    spec = QuadratureSpec()
    one = eval_I(so2, reference_amplitude, 0.2, spec, threads=1)
    four = eval_I(so2, reference_amplitude, 0.2, spec, threads=4)
    assert one.value == four.value


@pytest.mark.slow
@pytest.mark.parametrize("mu", [0.3, 0.1])
def test_full_tensor_agrees_with_fourier_reduction(so2, reference_amplitude, mu):
    reduced = eval_I(so2, reference_amplitude, mu, QuadratureSpec(reduction=ReductionKind.FOURIER_REDUCED))
    full = eval_I(so2, reference_amplitude, mu, QuadratureSpec(reduction=ReductionKind.FULL_TENSOR))
    scale = max(abs(reduced.value), 1e-12)
    assert abs(full.value - reduced.value) <= 1e-6 * scale


@pytest.mark.slow
def test_semianalytic_agrees_with_quadrature(so2, reference_amplitude):
    mu = 0.1
    quad = eval_I(so2, reference_amplitude, mu, QuadratureSpec())
    semi = eval_I_semianalytic_so2(so2, reference_amplitude, mu)
    assert abs(semi.value - quad.value) <= 1e-4 * abs(quad.value)


QUICK = QuadratureSpec(nodes_per_dim=24, check_accuracy=False)


def test_eval_I_is_linear_in_amplitude(so2, reference_amplitude):
    parts = [reference_amplitude.model_copy(update={"scale": s}) for s in (1.0, -0.3, 0.7)]
    one, two, total = (eval_I(so2, a, 0.3, QUICK) for a in parts)
    assert total.value == pytest.approx(one.value + two.value, rel=1e-12)


def test_reflected_amplitude_gives_conjugate(so2, reference_amplitude):
    reflected = reference_amplitude.model_copy(update={"xi": AmplitudeFactor(center=[-1.0, 0.0], radius=0.5)})
    direct = eval_I(so2, reference_amplitude, 0.3, QUICK)
    mirrored = eval_I(so2, reflected, 0.3, QUICK)
    assert mirrored.value == pytest.approx(np.conj(direct.value), rel=1e-10)


def test_error_estimate_shrinks_with_refinement(so2, reference_amplitude):
    coarse = eval_I(so2, reference_amplitude, 0.3, QuadratureSpec(nodes_per_dim=12, node_factor=1.0, check_accuracy=False))
    fine = eval_I(so2, reference_amplitude, 0.3, QuadratureSpec(nodes_per_dim=32, node_factor=1.0, check_accuracy=False))
    assert 0.0 < fine.err_estimate < coarse.err_estimate


def test_imaginary_part_is_small_relative_to_mu(so2, reference_amplitude):
    for mu in (0.3, 0.2, 0.15):
        est = eval_I(so2, reference_amplitude, mu, QUICK)
        assert abs(est.im) / abs(est.value) <= mu


@pytest.mark.slow
def test_full_tensor_imaginary_part_vanishes(so2, reference_amplitude):
    spec = QuadratureSpec(nodes_per_dim=24, reduction=ReductionKind.FULL_TENSOR, check_accuracy=False)
    for mu in (0.3, 0.2):
        est = eval_I(so2, reference_amplitude, mu, spec)
        assert abs(est.im) <= 1e-6 * abs(est.value)
