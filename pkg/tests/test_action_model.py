"""
群作用模型测试
"""
import numpy as np
import pytest

from engine.action_model import (
    algebra_element,
    bracket_coefficients,
    generator_basis,
    inner,
    isotropy_algebra,
    isotropy_algebra_pair,
    principal_orbit_dimension,
    rotate_basis,
    shipped_action,
    stratify_sample,
    structured_samples,
    validate_action,
)
from shared.errors import ActionStructureError
from shared.models import GroupAction


@pytest.mark.parametrize("name", ["so2", "so3", "t2"])
def test_shipped_actions_validate(name):
    report = validate_action(shipped_action(name))
    assert report.ok
    assert report.violations == []


def test_rotation_generator_has_unit_length(so2):
    j = generator_basis(so2)[0]
    assert inner(j, j) == pytest.approx(1.0)


def test_standard_so3_generators_are_already_orthonormal(so3):
    basis = generator_basis(so3)
    gram = np.array([[inner(a, b) for b in basis] for a in basis])
    assert np.allclose(gram, np.eye(3), atol=1e-14)
    assert np.allclose(basis, so3.raw_generators(), atol=1e-14)


def test_non_skew_generator_is_reported():
    action = GroupAction(n=2, d=1, generators=[[[1.0, 0.0], [0.0, 1.0]]])
    report = validate_action(action)
    assert not report.ok
    assert any(v.startswith("skewness") for v in report.violations)


def test_dependent_generators_are_reported():
    j = [[0.0, -1.0], [1.0, 0.0]]
    action = GroupAction(n=2, d=2, generators=[j, [[0.0, -2.0], [2.0, 0.0]]])
    report = validate_action(action)
    assert any(v.startswith("independence") for v in report.violations)


def test_non_closed_generators_are_reported():
    # so(3) 中的两个生成元不构成子代数
    so3 = shipped_action("so3")
    action = GroupAction(n=3, d=2, generators=so3.generators[:2])
    report = validate_action(action)
    assert any(v.startswith("closure") for v in report.violations)


def test_shape_mismatch_raises():
    action = GroupAction(n=3, d=1, generators=[[[0.0, -1.0], [1.0, 0.0]]])
    with pytest.raises(ActionStructureError):
        validate_action(action)


def test_so3_bracket_closes(so3):
    basis = generator_basis(so3)
    coeffs = bracket_coefficients(so3, basis[0], basis[1])
    # [L_x, L_y] = L_z
    assert np.allclose(coeffs, [0.0, 0.0, 1.0])


@pytest.mark.parametrize("name, kappa", [("so2", 1), ("so3", 2), ("t2", 2)])
def test_principal_orbit_dimension(name, kappa):
    assert principal_orbit_dimension(shipped_action(name)) == kappa


def test_isotropy_dimensions(so3, t2):
    assert isotropy_algebra(so3, np.zeros(3)).dimension == 3
    assert isotropy_algebra(so3, np.array([0.0, 0.0, 2.0])).dimension == 1
    assert isotropy_algebra(t2, np.array([1.0, 0.0, 0.0, 0.0])).dimension == 1
    assert isotropy_algebra(t2, np.array([1.0, 0.0, 1.0, 0.0])).dimension == 0


def test_pair_isotropy(so3):
    x = np.array([1.0, 0.0, 0.0])
    assert isotropy_algebra_pair(so3, x, 2.0 * x).dimension == 1
    assert isotropy_algebra_pair(so3, x, np.array([0.0, 1.0, 0.0])).dimension == 0
    assert isotropy_algebra_pair(so3, x, np.zeros(3)).base_point.shape == (6,)


def test_isotropy_basis_annihilates_point(so3):
    x = np.array([0.3, -1.2, 0.7])
    iso = isotropy_algebra(so3, x)
    assert np.allclose(algebra_element(so3, iso.algebra_basis) @ x, 0.0, atol=1e-12)


def test_t2_has_two_circle_strata(t2):
    strata = stratify_sample(t2, structured_samples(t2))
    keys = [(s.isotropy_dim, s.fixed_subspace_dim, s.variant) for s in strata]
    assert keys == [(2, 0, 0), (1, 2, 0), (1, 2, 1), (0, 4, 0)]


def test_so3_strata(so3):
    strata = stratify_sample(so3, structured_samples(so3))
    # 非零点的迷向总是一维
    assert [(s.isotropy_dim, s.fixed_subspace_dim) for s in strata] == [(3, 0), (1, 1)]


@pytest.mark.parametrize("name", ["so2", "so3", "t2"])
def test_results_independent_of_basis(name):
    action = shipped_action(name)
    rotated = rotate_basis(action, seed=5)
    assert principal_orbit_dimension(rotated) == principal_orbit_dimension(action)
    x = np.linspace(-1.0, 1.0, action.n) + 0.1
    assert isotropy_algebra(rotated, x).dimension == isotropy_algebra(action, x).dimension


@pytest.mark.parametrize("name", ["so2", "so3", "t2"])
def test_kappa_and_strata_do_not_depend_on_basis_or_seed(name):
    action = shipped_action(name)
    kappa = principal_orbit_dimension(action, seed=0)
    assert principal_orbit_dimension(action, seed=1) == kappa
    keys = [(s.isotropy_dim, s.fixed_subspace_dim, s.variant) for s in stratify_sample(action, structured_samples(action))]
    for seed in (3, 4):
        rotated = rotate_basis(action, seed)
        assert principal_orbit_dimension(rotated, seed=seed) == kappa
        strata = stratify_sample(rotated, structured_samples(rotated))
        assert [(s.isotropy_dim, s.fixed_subspace_dim, s.variant) for s in strata] == keys


@pytest.mark.parametrize("name", ["so2", "so3", "t2"])
def test_pair_isotropy_is_bounded_by_each_factor(name):
    action = shipped_action(name)
    rng = np.random.default_rng(2024)
    points = np.vstack([structured_samples(action), rng.standard_normal((100, action.n))])
    for k in range(len(points) - 1):
        x, xi = points[k], points[k + 1]
        pair = isotropy_algebra_pair(action, x, xi).dimension
        assert pair <= min(isotropy_algebra(action, x).dimension, isotropy_algebra(action, xi).dimension)
        assert pair <= action.d
