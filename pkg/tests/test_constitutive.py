from __future__ import annotations

import numpy as np
import pytest

from schwarzmpm.constitutive import (
    InversionError,
    MaterialError,
    MaterialModel,
    cauchy_stress,
    energy_density,
    neo_hookean_energy,
    neo_hookean_stress,
    piola_stress,
    project_psd,
    tangent_apply,
    tangent_matrix,
)
from schwarzmpm.selftest import finite_difference_stress, finite_difference_tangent, random_deformation


@pytest.fixture
def steel_like() -> MaterialModel:
    return MaterialModel(youngs_modulus=1e5, poisson_ratio=0.3, density=1000.0)


def test_lame_parameters(steel_like: MaterialModel) -> None:
    assert steel_like.lame_mu == pytest.approx(1e5 / 2.6)
    assert steel_like.lame_lambda == pytest.approx(1e5 * 0.3 / (1.3 * 0.4))
    assert steel_like.shear_modulus == steel_like.lame_mu


@pytest.mark.parametrize(
    "youngs_modulus, poisson_ratio, density",
    [(0.0, 0.3, 1.0), (1.0, 0.5, 1.0), (1.0, -1.0, 1.0), (1.0, 0.3, -2.0)],
)
def test_invalid_material(youngs_modulus: float, poisson_ratio: float, density: float) -> None:
    with pytest.raises(MaterialError):
        MaterialModel(youngs_modulus, poisson_ratio, density)


def test_rest_state_is_stress_free(steel_like: MaterialModel) -> None:
    assert energy_density(np.eye(2), steel_like) == 0.0
    assert np.allclose(piola_stress(np.eye(2), steel_like), 0.0)
    assert np.allclose(cauchy_stress(np.eye(2), steel_like), 0.0)


def test_stress_matches_energy_gradient(steel_like: MaterialModel, rng: np.random.Generator) -> None:
    mu, lam = steel_like.lame_mu, steel_like.lame_lambda
    F = random_deformation(rng, 100)
    P = neo_hookean_stress(F, mu, lam)
    numeric = finite_difference_stress(F, mu, lam)
    error = np.linalg.norm(P - numeric, axis=(1, 2)) / np.linalg.norm(P, axis=(1, 2)).clip(min=mu * 1e-3)
    assert error.max() <= 1e-5


def test_tangent_matches_stress_derivative(steel_like: MaterialModel, rng: np.random.Generator) -> None:
    mu, lam = steel_like.lame_mu, steel_like.lame_lambda
    F = random_deformation(rng, 100)
    C = tangent_matrix(F, mu, lam)
    numeric = finite_difference_tangent(F, mu, lam)
    error = np.linalg.norm(C - numeric, axis=(1, 2)) / np.linalg.norm(C, axis=(1, 2))
    assert error.max() <= 1e-4


def test_tangent_is_symmetric(steel_like: MaterialModel, rng: np.random.Generator) -> None:
    C = tangent_matrix(random_deformation(rng, 20), steel_like.lame_mu, steel_like.lame_lambda)
    assert np.allclose(C, np.swapaxes(C, -1, -2), rtol=1e-12, atol=1e-9)


def test_tangent_apply_matches_matrix(steel_like: MaterialModel) -> None:
    F = np.array([[1.1, 0.2], [-0.05, 0.9]])
    dF = np.array([[0.3, -0.1], [0.7, 0.2]])
    C = tangent_matrix(F, steel_like.lame_mu, steel_like.lame_lambda)
    assert np.allclose(tangent_apply(F, steel_like, dF).ravel(), C @ dF.ravel())


def test_cauchy_stress_is_symmetric(steel_like: MaterialModel) -> None:
    sigma = cauchy_stress(np.array([[1.2, 0.3], [0.1, 0.8]]), steel_like)
    assert sigma[0, 1] == pytest.approx(sigma[1, 0])


def test_uniaxial_small_strain_limit(steel_like: MaterialModel) -> None:
    eps = 1e-6
    sigma = cauchy_stress(np.diag([1.0 + eps, 1.0]), steel_like)
    mu, lam = steel_like.lame_mu, steel_like.lame_lambda
    assert sigma[0, 0] == pytest.approx((lam + 2 * mu) * eps, rel=1e-4)
    assert sigma[1, 1] == pytest.approx(lam * eps, rel=1e-4)


def test_inverted_deformation_is_rejected(steel_like: MaterialModel) -> None:
    with pytest.raises(InversionError):
        neo_hookean_energy(np.diag([1.0, -1.0]), steel_like.lame_mu, steel_like.lame_lambda)


def test_project_psd() -> None:
    matrix = np.array([[2.0, 0.0], [0.0, -3.0]])
    assert np.allclose(project_psd(matrix), np.diag([2.0, 0.0]))

    rng = np.random.default_rng(3)
    a = rng.normal(size=(10, 4, 4))
    projected = project_psd(a + np.swapaxes(a, -1, -2))
    assert np.all(np.linalg.eigvalsh(projected) >= -1e-12)

    spd = a @ np.swapaxes(a, -1, -2) + np.eye(4)
    assert np.allclose(project_psd(spd), spd)
