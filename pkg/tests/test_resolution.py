"""
奇点解消与数值证书测试
"""
import numpy as np
import pytest

from engine.action_model import shipped_action
from engine.phase import psi_array
from engine.resolution import (
    alpha_chart_decay,
    alpha_chart_terms,
    build_isotropy_tree,
    certify_branch,
    chart_to_ambient,
    check_alpha_chart_nonstationary,
    check_factorization,
    check_jacobian_exponent,
    check_kappa_decomposition,
    check_theorem1_conditions,
    check_transversal_nondegeneracy,
    critical_coords,
    delta_det,
    delta_jacobian,
    delta_substitution,
    layout_of,
    lemma3_margins,
    perturb_coords,
    weak_transform,
)
from shared.errors import PreconditionViolation, UnsupportedDepthError
from shared.models import GroupAction, ResolutionChartPoint, ResolveOptions

EXPECTED_DATA = {
    "so2": [[{"c": 2, "d": 0, "e": 1}]],
    "so3": [[{"c": 3, "d": 0, "e": 3}]],
    "t2": [[{"c": 4, "d": 0, "e": 2}, {"c": 2, "d": 1, "e": 1}]] * 2,
}
EXPECTED_EXPONENTS = {"so2": [1], "so3": [2], "t2": [3, 2]}
EXPECTED_MARGINS = {"so2": [0], "so3": [0], "t2": [1, 0]}
CHART_DIMS = {"so2": 5, "so3": 9, "t2": 10}


def _branches(name):
    return build_isotropy_tree(shipped_action(name))


def _all_branches():
    return [(name, i) for name in ("so2", "so3", "t2") for i in range(len(EXPECTED_DATA[name]))]


@pytest.fixture(scope="module")
def trees():
    return {name: _branches(name) for name in ("so2", "so3", "t2")}


def test_no_branches_without_orbits(so2):
    assert build_isotropy_tree(so2, kappa=0) == []


@pytest.mark.parametrize("name", ["so2", "so3", "t2"])
def test_numerical_data(trees, name):
    branches = trees[name]
    assert [b.numerical_data() for b in branches] == EXPECTED_DATA[name]
    for branch in branches:
        assert branch.predicted_exponents() == EXPECTED_EXPONENTS[name]
        assert lemma3_margins(branch) == EXPECTED_MARGINS[name]
        assert layout_of(branch).dim == CHART_DIMS[name]


def test_t2_branches_reach_distinct_circle_strata(trees):
    first, second = trees["t2"]
    assert first.N == second.N == 2
    assert first.stratum_chain[1] != second.stratum_chain[1]
    # 两条分支的第二层基点分别落在两个坐标平面上
    p, q = first.levels[1].base_point, second.levels[1].base_point
    assert abs(p @ q) < 1e-10


def test_depth_three_is_unsupported():
    gens = []
    for k in range(3):
        g = np.zeros((6, 6))
        g[2 * k, 2 * k + 1] = -1.0
        g[2 * k + 1, 2 * k] = 1.0
        gens.append(g.tolist())
    action = GroupAction(n=6, d=3, generators=gens, name="T^3 on R^6")
    with pytest.raises(UnsupportedDepthError):
        build_isotropy_tree(action)


def test_delta_substitution():
    sigma = np.array([0.5, 0.5])
    assert np.allclose(delta_substitution(sigma), [0.125, 0.25])
    assert delta_det(sigma) == pytest.approx(0.125)
    # τ₁ = σ₁²σ₂, τ₂ = σ₁σ₂
    assert np.allclose(delta_jacobian(sigma), [[0.5, 0.25], [0.5, 0.5]])


def test_delta_jacobian_matches_finite_differences(rng):
    sigma = rng.uniform(-0.8, 0.8, 3)
    step = 1e-6
    cols = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        cols.append((delta_substitution(sigma + e) - delta_substitution(sigma - e)) / (2 * step))
    assert np.allclose(delta_jacobian(sigma), np.stack(cols, axis=1), atol=1e-8)


def _so2_point(tau, beta=2.0):
    return ResolutionChartPoint(
        tau=[tau],
        slice_coords=[np.zeros(0)],
        theta=[0.0],
        alpha=[np.zeros(0)],
        beta=[beta],
        xi=[0.0, 1.0],
    )


def test_chart_to_ambient_so2(trees, so2):
    branch = trees["so2"][0]
    x, t = chart_to_ambient(branch, _so2_point(0.3))
    assert np.allclose(x, [0.3, 0.0])
    assert np.allclose(t, [2.0])
    assert weak_transform(branch, _so2_point(0.3)) == pytest.approx(2.0)
    # ψ∘ζ = τ·ψ̃^wk
    assert float(psi_array(so2, x, np.array([0.0, 1.0]), t)) == pytest.approx(0.3 * 2.0)


def test_chart_radius_is_bounded(trees):
    with pytest.raises(PreconditionViolation):
        chart_to_ambient(trees["so2"][0], _so2_point(0.95))


@pytest.mark.parametrize("name, index", _all_branches())
def test_factorization(trees, name, index):
    residual = check_factorization(trees[name][index], sample_count=2000, seed=3)
    assert residual <= 1e-11


@pytest.mark.slow
@pytest.mark.parametrize("name, index", _all_branches())
def test_factorization_full_budget(trees, name, index):
    assert check_factorization(trees[name][index], sample_count=10_000, seed=11) <= 1e-11


@pytest.mark.parametrize("name, index", _all_branches())
def test_critical_conditions(trees, name, index, rng):
    branch = trees[name][index]
    for k in range(200):
        coords = critical_coords(branch, rng, zero_sigma=(k % 4 == 0))
        record = check_theorem1_conditions(branch, coords)
        assert record.grad_zero and record.cond_I and record.cond_II and record.cond_III
        moved = perturb_coords(branch, coords, rng)
        record = check_theorem1_conditions(branch, moved)
        assert not record.grad_zero
        assert record.consistent


@pytest.mark.parametrize("name, index", _all_branches())
def test_theorem1_gradient_tolerance_scales_with_covector(trees, name, index, rng):
    branch = trees[name][index]
    xi_block = layout_of(branch).offsets()["xi"]
    for _ in range(20):
        coords = critical_coords(branch, rng)
        coords[xi_block] *= 1e4
        record = check_theorem1_conditions(branch, coords)
        assert record.grad_zero and record.cond_I and record.cond_II and record.cond_III


@pytest.mark.parametrize("name, index", _all_branches())
def test_transversal_nondegeneracy(trees, name, index, rng):
    branch = trees[name][index]
    for zero_sigma in (True, False, True, False):
        coords = critical_coords(branch, rng, zero_sigma=zero_sigma)
        record = check_transversal_nondegeneracy(branch, coords)
        assert record.kernel_dim == record.expected_dim == CHART_DIMS[name] - 2 * branch.kappa
        if zero_sigma:
            assert record.bordered_residual is not None
            assert record.bordered_residual <= 1e-6


def test_nondegeneracy_needs_critical_point(trees, rng):
    branch = trees["so2"][0]
    coords = perturb_coords(branch, critical_coords(branch, rng), rng, size=0.1)
    with pytest.raises(PreconditionViolation):
        check_transversal_nondegeneracy(branch, coords)


@pytest.mark.parametrize("name, index", _all_branches())
def test_kappa_decomposition(trees, name, index):
    branch = trees[name][index]
    ok, dims = check_kappa_decomposition(branch, samples=50, seed=2)
    assert ok
    assert sum(dims) == branch.kappa


@pytest.mark.parametrize("name, index", _all_branches())
def test_jacobian_exponents(trees, name, index):
    branch = trees[name][index]
    for level, predicted in enumerate(EXPECTED_EXPONENTS[name]):
        assert check_jacobian_exponent(branch, level, seed=4) == pytest.approx(predicted, abs=1e-3)


def test_alpha_chart_only_below_second_level(trees):
    assert not check_alpha_chart_nonstationary(trees["so2"][0], samples=10).applicable
    assert alpha_chart_decay(trees["so3"][0], [0.1, 0.05]) == (None, [])
    with pytest.raises(PreconditionViolation):
        alpha_chart_terms(trees["so2"][0], np.ones(2), np.zeros(0), 0, np.ones(1))


@pytest.mark.parametrize("index", [0, 1])
def test_alpha_chart_is_nonstationary(trees, index):
    record = check_alpha_chart_nonstationary(trees["t2"][index], samples=1000, seed=6)
    assert record.applicable
    assert record.min_grad > 0.0


@pytest.mark.slow
@pytest.mark.parametrize("index", [0, 1])
def test_alpha_chart_decay(trees, index):
    branch = trees["t2"][index]
    exponent, values = alpha_chart_decay(branch, ResolveOptions().decay_mu)
    assert all(v > 0 for v in values)
    assert exponent >= branch.kappa + 0.8


def test_so2_certificate(trees):
    options = ResolveOptions(
        enabled=True,
        factorization_samples=500,
        theorem1_points=40,
        theorem2_points=6,
        kappa_samples=10,
        alpha_samples=10,
    )
    cert = certify_branch(trees["so2"][0], options, seed=1)
    assert cert.passed
    assert cert.theorem1_discrepancies == 0
    assert cert.theorem2_kernel_dims == [3] * 6
    assert cert.alpha_chart_min_grad is None


@pytest.mark.slow
def test_t2_certificates(trees):
    options = ResolveOptions(enabled=True, factorization_samples=2000, theorem1_points=100, theorem2_points=10, alpha_samples=500)
    for branch in trees["t2"]:
        cert = certify_branch(branch, options, seed=1)
        assert cert.passed, cert.model_dump()
        assert cert.lemma3_margins == [1, 0]
