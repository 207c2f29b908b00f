"""
Reference solutions for the benchmark scenarios: the gravity-loaded elastica,
Hertz line contact against a rigid plane, and a circular misfit inclusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from schwarzmpm._exceptions import ConfigurationError, SolverError
from schwarzmpm._types import FloatArray

ELASTICA_STEPS = 10_000
SHOOTING_TOLERANCE = 1e-10
MAX_BRACKET_DOUBLINGS = 40


class ElasticaError(SolverError):
    pass


def gravito_bending_parameter(
    youngs_modulus: float,
    poisson_ratio: float,
    density: float,
    gravity: float,
    length: float,
    thickness: float,
) -> float:
    """Weight per unit length times L^3 over the plane-strain bending stiffness."""
    return 12.0 * density * gravity * length**3 * (1.0 - poisson_ratio**2) / (youngs_modulus * thickness**2)


def gravity_for_parameter(
    gamma: float,
    youngs_modulus: float,
    poisson_ratio: float,
    density: float,
    length: float,
    thickness: float,
) -> float:
    return gamma * youngs_modulus * thickness**2 / (12.0 * density * length**3 * (1.0 - poisson_ratio**2))


def _derivatives(gamma: float, s: float, theta: float, kappa: float) -> tuple[float, float, float, float]:
    return kappa, -gamma * (1.0 - s) * math.cos(theta), math.cos(theta), math.sin(theta)


def _integrate(gamma: float, slope: float, steps: int, record: bool = False) -> tuple[float, FloatArray | None]:
    """
    Classical RK4 from the clamped end with initial curvature `slope`.
    Returns the curvature at the free end and, when `record` is set, the
    state history `(steps + 1, 4)` of `(theta, kappa, x, y)`.
    """
    ds = 1.0 / steps
    theta, kappa, x, y = 0.0, slope, 0.0, 0.0
    history = np.empty((steps + 1, 4)) if record else None
    if history is not None:
        history[0] = theta, kappa, x, y
    for i in range(steps):
        s = i * ds
        k1 = _derivatives(gamma, s, theta, kappa)
        k2 = _derivatives(gamma, s + 0.5 * ds, theta + 0.5 * ds * k1[0], kappa + 0.5 * ds * k1[1])
        k3 = _derivatives(gamma, s + 0.5 * ds, theta + 0.5 * ds * k2[0], kappa + 0.5 * ds * k2[1])
        k4 = _derivatives(gamma, s + ds, theta + ds * k3[0], kappa + ds * k3[1])
        theta += ds / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        kappa += ds / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        x += ds / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        y += ds / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        if history is not None:
            history[i + 1] = theta, kappa, x, y
    return kappa, history


@dataclass
class ElasticaSolution:
    gamma: float
    s: FloatArray
    theta: FloatArray
    curvature: FloatArray
    x: FloatArray
    y: FloatArray

    @property
    def height(self) -> float:
        return float(np.max(np.abs(self.y)))

    @property
    def width(self) -> float:
        return float(np.max(self.x))

    @property
    def aspect_ratio(self) -> float:
        return self.height / self.width

    @property
    def tip_deflection(self) -> float:
        return float(abs(self.y[-1]))


def solve_elastica(gamma: float, n_samples: int = 201, steps: int = ELASTICA_STEPS) -> ElasticaSolution:
    """
    Shoot on the root curvature of

        theta'' = -gamma (1 - s) cos(theta),  theta(0) = 0,  theta'(1) = 0

    and return the normalized centerline at `n_samples` arc-length points.
    """
    if not gamma > 0:
        raise ConfigurationError(f"Gravito-bending parameter must be positive, got {gamma}.")
    if n_samples < 2 or steps < 1:
        raise ConfigurationError("Elastica needs at least 2 samples and 1 integration step.")

    def residual(slope: float) -> float:
        return _integrate(gamma, slope, steps)[0]

    upper = gamma
    for _ in range(MAX_BRACKET_DOUBLINGS):
        if residual(upper) > 0.0:
            break
        upper *= 2.0
    else:
        raise ElasticaError(f"Could not bracket the elastica root curvature for gamma={gamma}.")
    if residual(0.0) >= 0.0:
        raise ElasticaError(f"Shooting residual has no sign change on [0, {upper}] for gamma={gamma}.")
    slope = optimize.bisect(residual, 0.0, upper, xtol=1e-14, maxiter=200)
    end_curvature, history = _integrate(gamma, slope, steps, record=True)
    if abs(end_curvature) > SHOOTING_TOLERANCE:
        raise ElasticaError(f"Elastica shooting stalled at |theta'(1)| = {abs(end_curvature):.3e}.")
    assert history is not None

    s_steps = np.linspace(0.0, 1.0, steps + 1)
    s = np.linspace(0.0, 1.0, n_samples)
    theta, kappa, x, y = (np.interp(s, s_steps, history[:, c]) for c in range(4))
    return ElasticaSolution(gamma=gamma, s=s, theta=theta, curvature=kappa, x=x, y=y)


def hertz_halfwidth(force: float, radius: float, youngs_modulus: float, poisson_ratio: float) -> float:
    return 2.0 * math.sqrt(force * radius * (1.0 - poisson_ratio**2) / (math.pi * youngs_modulus))


def hertz_pressure(
    force: float,
    radius: float,
    youngs_modulus: float,
    poisson_ratio: float,
    x: FloatArray | float,
) -> FloatArray:
    b = hertz_halfwidth(force, radius, youngs_modulus, poisson_ratio)
    p_max = 2.0 * force / (math.pi * b)
    ratio = np.asarray(x, dtype=np.float64) / b
    return np.where(np.abs(ratio) <= 1.0, p_max * np.sqrt(np.clip(1.0 - ratio**2, 0.0, None)), 0.0)


@dataclass(frozen=True)
class HertzSolution:
    """Cylinder of radius R pressed onto a rigid plane by F per unit length."""

    force: float
    radius: float
    youngs_modulus: float
    poisson_ratio: float

    @classmethod
    def from_parameters(cls, force: float, radius: float, youngs_modulus: float, poisson_ratio: float) -> HertzSolution:
        if min(force, radius, youngs_modulus) <= 0:
            raise ConfigurationError("Hertz force, radius and modulus must be positive.")
        return cls(force, radius, youngs_modulus, poisson_ratio)

    @property
    def half_width(self) -> float:
        return hertz_halfwidth(self.force, self.radius, self.youngs_modulus, self.poisson_ratio)

    @property
    def max_pressure(self) -> float:
        return 2.0 * self.force / (math.pi * self.half_width)

    def pressure(self, x: FloatArray | float) -> FloatArray:
        return hertz_pressure(self.force, self.radius, self.youngs_modulus, self.poisson_ratio, x)


@dataclass(frozen=True)
class InclusionSolution:
    """
    Circular inclusion of radius R with isotropic misfit strain `delta`
    in an unbounded matrix, in the linear-strain limit.
    """

    radius: float
    youngs_in: float
    poisson_in: float
    youngs_out: float
    poisson_out: float
    delta: float

    @property
    def shear_in(self) -> float:
        return self.youngs_in / (2.0 * (1.0 + self.poisson_in))

    @property
    def shear_out(self) -> float:
        return self.youngs_out / (2.0 * (1.0 + self.poisson_out))

    @property
    def compliance_in(self) -> float:
        return (1.0 - 2.0 * self.poisson_in) / (2.0 * self.shear_in)

    @property
    def compliance_out(self) -> float:
        return 1.0 / (2.0 * self.shear_out)

    @property
    def pressure(self) -> float:
        return self.delta / (self.compliance_out + self.compliance_in)

    def polar_stress(self, r: FloatArray | float) -> tuple[FloatArray, FloatArray]:
        """`(sigma_rr, sigma_tt)`; radii `r >= R` take the exterior branch."""
        r = np.asarray(r, dtype=np.float64)
        P = self.pressure
        inside = r < self.radius
        decay = np.where(inside, 1.0, (self.radius / np.where(inside, self.radius, r)) ** 2)
        sigma_rr = -P * decay
        sigma_tt = np.where(inside, -P, P * decay)
        return sigma_rr, sigma_tt


def inclusion_stress(solution: InclusionSolution, point: FloatArray) -> FloatArray:
    """Cartesian `(sigma_xx, sigma_yy, sigma_xy)` at one point or a `(..., 2)` array of points."""
    p = np.asarray(point, dtype=np.float64)
    r = np.hypot(p[..., 0], p[..., 1])
    sigma_rr, sigma_tt = solution.polar_stress(r)
    safe = np.where(r > 0.0, r, 1.0)
    c = np.where(r > 0.0, p[..., 0] / safe, 1.0)
    s = np.where(r > 0.0, p[..., 1] / safe, 0.0)
    sigma_xx = sigma_rr * c * c + sigma_tt * s * s
    sigma_yy = sigma_rr * s * s + sigma_tt * c * c
    sigma_xy = (sigma_rr - sigma_tt) * s * c
    return np.stack([sigma_xx, sigma_yy, sigma_xy], axis=-1)
