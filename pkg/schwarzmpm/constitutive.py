"""
Compressible Neo-Hookean hyperelasticity in plane strain.

    Psi(F) = mu/2 (tr(F^T F) - 2) - mu ln J + lam/2 (ln J)^2

The batched functions take `(..., 2, 2)` arrays with broadcastable Lamé
parameters; the single-matrix helpers wrap them for a `MaterialModel`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from schwarzmpm._exceptions import ConfigurationError, SolverError
from schwarzmpm._types import FloatArray


class MaterialError(ConfigurationError):
    pass


class InversionError(SolverError):
    pass


@dataclass(frozen=True)
class MaterialModel:
    youngs_modulus: float
    poisson_ratio: float
    density: float

    def __post_init__(self) -> None:
        if not self.youngs_modulus > 0:
            raise MaterialError(f"Young's modulus must be positive, got {self.youngs_modulus}.")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise MaterialError(f"Poisson ratio must lie in (-1, 0.5), got {self.poisson_ratio}.")
        if not self.density > 0:
            raise MaterialError(f"Density must be positive, got {self.density}.")

    @property
    def lame_mu(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def lame_lambda(self) -> float:
        nu = self.poisson_ratio
        return self.youngs_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    @property
    def shear_modulus(self) -> float:
        return self.lame_mu


def determinant(F: FloatArray) -> FloatArray:
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def inverse_transpose(F: FloatArray, J: FloatArray) -> FloatArray:
    out = np.empty_like(F)
    out[..., 0, 0] = F[..., 1, 1] / J
    out[..., 0, 1] = -F[..., 1, 0] / J
    out[..., 1, 0] = -F[..., 0, 1] / J
    out[..., 1, 1] = F[..., 0, 0] / J
    return out


def _checked_determinant(F: FloatArray) -> FloatArray:
    J = determinant(F)
    if np.any(J <= 0):
        raise InversionError("Deformation gradient with non-positive determinant.")
    return J


def neo_hookean_energy(F: FloatArray, mu: FloatArray | float, lam: FloatArray | float) -> FloatArray:
    J = _checked_determinant(F)
    log_j = np.log(J)
    return 0.5 * mu * (np.sum(F * F, axis=(-2, -1)) - 2.0) - mu * log_j + 0.5 * lam * log_j**2


def neo_hookean_stress(F: FloatArray, mu: FloatArray | float, lam: FloatArray | float) -> FloatArray:
    J = _checked_determinant(F)
    F_inv_t = inverse_transpose(F, J)
    mu_ = np.asarray(mu, dtype=np.float64)[..., None, None]
    lam_ = np.asarray(lam, dtype=np.float64)[..., None, None]
    return mu_ * (F - F_inv_t) + lam_ * np.log(J)[..., None, None] * F_inv_t


def neo_hookean_tangent(
    F: FloatArray, mu: FloatArray | float, lam: FloatArray | float, dF: FloatArray
) -> FloatArray:
    J = _checked_determinant(F)
    F_inv_t = inverse_transpose(F, J)
    mu_ = np.asarray(mu, dtype=np.float64)[..., None, None]
    lam_ = np.asarray(lam, dtype=np.float64)[..., None, None]
    log_j = np.log(J)[..., None, None]
    # tr(F^-1 dF) written against F^-T
    trace = np.sum(F_inv_t * dF, axis=(-2, -1))[..., None, None]
    sandwich = F_inv_t @ np.swapaxes(dF, -1, -2) @ F_inv_t
    return mu_ * dF + (mu_ - lam_ * log_j) * sandwich + lam_ * trace * F_inv_t


def tangent_matrix(F: FloatArray, mu: FloatArray | float, lam: FloatArray | float) -> FloatArray:
    """dP/dF as a (..., 4, 4) matrix over row-major vec(F)."""
    F = np.asarray(F, dtype=np.float64)
    columns = []
    for k in range(4):
        dF = np.zeros(F.shape)
        dF[..., k // 2, k % 2] = 1.0
        columns.append(neo_hookean_tangent(F, mu, lam, dF).reshape(F.shape[:-2] + (4,)))
    return np.stack(columns, axis=-1)


def project_psd(matrices: FloatArray) -> FloatArray:
    """Clip negative eigenvalues of symmetric matrices to zero."""
    sym = 0.5 * (matrices + np.swapaxes(matrices, -1, -2))
    eigenvalues, eigenvectors = np.linalg.eigh(sym)
    clipped = np.maximum(eigenvalues, 0.0)
    return (eigenvectors * clipped[..., None, :]) @ np.swapaxes(eigenvectors, -1, -2)


def cauchy_from_piola(F: FloatArray, P: FloatArray) -> FloatArray:
    J = determinant(F)[..., None, None]
    return (P @ np.swapaxes(F, -1, -2)) / J


def energy_density(F: FloatArray, mat: MaterialModel) -> float:
    return float(neo_hookean_energy(np.asarray(F, dtype=np.float64), mat.lame_mu, mat.lame_lambda))


def piola_stress(F: FloatArray, mat: MaterialModel) -> FloatArray:
    return neo_hookean_stress(np.asarray(F, dtype=np.float64), mat.lame_mu, mat.lame_lambda)


def tangent_apply(F: FloatArray, mat: MaterialModel, dF: FloatArray) -> FloatArray:
    return neo_hookean_tangent(
        np.asarray(F, dtype=np.float64), mat.lame_mu, mat.lame_lambda, np.asarray(dF, dtype=np.float64)
    )


def cauchy_stress(F: FloatArray, mat: MaterialModel) -> FloatArray:
    F = np.asarray(F, dtype=np.float64)
    return cauchy_from_piola(F, piola_stress(F, mat))
