"""
Property checks behind `schwarzmpm selftest`: kernel and transfer identities,
constitutive derivatives against finite differences, and Newton solves
against a dense root finder on tiny problems.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from schwarzmpm.constitutive import (
    MaterialModel,
    neo_hookean_energy,
    neo_hookean_stress,
    tangent_matrix,
)
from schwarzmpm.fields import ParticleSet, Subdomain, SubdomainGrid, compute_stencil
from schwarzmpm.geometry import Rectangle, lattice_points
from schwarzmpm.implicit_step import (
    NewtonSettings,
    RegionDirichlet,
    assemble_problem,
    incremental_potential_gradient,
    prepare_grid,
    solve_step,
)
from schwarzmpm.transfer import p2g

logger = logging.getLogger("schwarzmpm.run")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_particles(rng: np.random.Generator, grid: SubdomainGrid, count: int) -> ParticleSet:
    """Particles strictly inside the safe interior of `grid`, with random motion and affine state."""
    lower = grid.origin + 2.0 * grid.h
    upper = grid.origin + (np.array(grid.shape) - 3) * grid.h
    positions = rng.uniform(lower, upper, size=(count, 2))
    particles = ParticleSet.from_positions(
        positions,
        mass=rng.uniform(0.5, 2.0, size=count),
        volume=grid.h**2 / 4.0,
        velocity=rng.normal(size=(count, 2)),
    )
    particles.B = rng.normal(scale=grid.h**2, size=(count, 2, 2))
    return particles


def random_deformation(rng: np.random.Generator, count: int, scale: float = 0.3) -> np.ndarray:
    F = np.eye(2) + rng.uniform(-scale, scale, size=(count, 2, 2))
    flip = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0] <= 0.1
    F[flip] = np.eye(2) + 0.1 * F[flip]
    return F


def check_kernel(rng: np.random.Generator, samples: int) -> CheckResult:
    grid = SubdomainGrid(origin=np.array([-0.3, 0.2]), h=0.1, shape=(12, 12))
    points = rng.uniform(grid.origin + 0.2, grid.origin + 0.85, size=(samples, 2))
    stencil = compute_stencil(points, grid)
    nodes = grid.positions[stencil.nodes]
    unity = np.max(np.abs(stencil.weights.sum(axis=1) - 1.0))
    linear = np.max(np.abs(np.einsum("pi,pia->pa", stencil.weights, nodes) - points))
    gradient_sum = np.max(np.abs(stencil.gradients.sum(axis=1)))
    identity = np.max(np.abs(np.einsum("pia,pib->pab", nodes, stencil.gradients) - np.eye(2)))
    worst = max(unity, linear / grid.h, gradient_sum * grid.h, identity)
    return CheckResult("kernel identities", bool(worst <= 1e-12), f"max deviation {worst:.3e}")


def angular_momentum(positions: np.ndarray, mass: np.ndarray, velocity: np.ndarray) -> float:
    return float(np.sum(mass * (positions[:, 0] * velocity[:, 1] - positions[:, 1] * velocity[:, 0])))


def particle_angular_momentum(particles: ParticleSet) -> float:
    """Orbital part plus the spin carried by the affine matrix."""
    spin = particles.mass * (particles.B[:, 1, 0] - particles.B[:, 0, 1])
    return angular_momentum(particles.x, particles.mass, particles.v) + float(spin.sum())


def check_transfer(rng: np.random.Generator, samples: int) -> CheckResult:
    worst_mass = worst_momentum = worst_angular = 0.0
    for _ in range(samples):
        grid = SubdomainGrid(origin=np.zeros(2), h=0.1, shape=(10, 10))
        particles = random_particles(rng, grid, 20)
        p2g(particles, grid)
        total = particles.mass.sum()
        worst_mass = max(worst_mass, abs(grid.mass.sum() - total) / total)
        momentum = particles.mass @ particles.v
        scale = np.abs(particles.mass[:, None] * particles.v).sum()
        worst_momentum = max(worst_momentum, float(np.max(np.abs(grid.momentum.sum(axis=0) - momentum))) / scale)
        grid_l = float(np.sum(grid.positions[:, 0] * grid.momentum[:, 1] - grid.positions[:, 1] * grid.momentum[:, 0]))
        particle_l = particle_angular_momentum(particles)
        worst_angular = max(worst_angular, abs(grid_l - particle_l) / max(1.0, abs(particle_l)))
    passed = worst_mass <= 1e-14 and worst_momentum <= 1e-10 and worst_angular <= 1e-8
    detail = f"mass {worst_mass:.2e}, momentum {worst_momentum:.2e}, angular {worst_angular:.2e}"
    return CheckResult("P2G conservation", passed, detail)


def finite_difference_stress(F: np.ndarray, mu: float, lam: float, eps: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(F)
    for a in range(2):
        for b in range(2):
            dF = np.zeros_like(F)
            dF[..., a, b] = eps
            out[..., a, b] = (neo_hookean_energy(F + dF, mu, lam) - neo_hookean_energy(F - dF, mu, lam)) / (2 * eps)
    return out


def finite_difference_tangent(F: np.ndarray, mu: float, lam: float, eps: float = 1e-6) -> np.ndarray:
    columns = []
    for k in range(4):
        dF = np.zeros_like(F)
        dF[..., k // 2, k % 2] = eps
        delta = neo_hookean_stress(F + dF, mu, lam) - neo_hookean_stress(F - dF, mu, lam)
        columns.append(delta.reshape(F.shape[:-2] + (4,)) / (2 * eps))
    return np.stack(columns, axis=-1)


def check_constitutive(rng: np.random.Generator, samples: int) -> CheckResult:
    material = MaterialModel(1e5, 0.3, 1000.0)
    mu, lam = material.lame_mu, material.lame_lambda
    F = random_deformation(rng, samples)
    P = neo_hookean_stress(F, mu, lam)
    stress_error = np.linalg.norm(P - finite_difference_stress(F, mu, lam), axis=(1, 2)) / np.linalg.norm(
        P, axis=(1, 2)
    ).clip(min=mu * 1e-3)
    C = tangent_matrix(F, mu, lam)
    tangent_error = np.linalg.norm(C - finite_difference_tangent(F, mu, lam), axis=(1, 2)) / np.linalg.norm(
        C, axis=(1, 2)
    )
    worst_stress, worst_tangent = float(stress_error.max()), float(tangent_error.max())
    passed = worst_stress <= 1e-5 and worst_tangent <= 1e-4
    return CheckResult("constitutive derivatives", passed, f"stress {worst_stress:.2e}, tangent {worst_tangent:.2e}")


def tiny_subdomain(rng: np.random.Generator, clamp: bool = False) -> Subdomain:
    """A 2x2 particle block (16 active nodes) with random motion and deformation."""
    h = 0.1
    points = lattice_points(Rectangle((0.5, 0.5), (0.5 + 2 * h, 0.5 + 2 * h)), h, 1)
    material = MaterialModel(1e4, 0.3, 1000.0)
    volume = h * h
    particles = ParticleSet.from_positions(
        points, material.density * volume, volume, velocity=0.05 * rng.normal(size=points.shape)
    )
    particles.F = random_deformation(rng, len(particles), scale=0.05)
    constraints = [RegionDirichlet(lambda p: p[:, 0] <= 0.5 + 1e-9)] if clamp else []
    return Subdomain(
        label="B",
        grid=SubdomainGrid.around(points, h, padding=3),
        particles=particles,
        materials=[material],
        dt=1e-2,
        gravity=np.array([0.0, -9.81]),
        constraints=constraints,
    )


def dense_minimizer(
    problem_positions: np.ndarray, free: np.ndarray, gradient: Callable[[np.ndarray], np.ndarray]
) -> np.ndarray:
    """Stationary point of the potential over the free nodes, by MINPACK's dense hybrid method."""

    def residual(values: np.ndarray) -> np.ndarray:
        x = problem_positions.copy()
        x[free] = values.reshape(-1, 2)
        return gradient(x)[free].ravel()

    solution = optimize.root(residual, problem_positions[free].ravel(), method="hybr", options={"xtol": 1e-14})
    x = problem_positions.copy()
    x[free] = solution.x.reshape(-1, 2)
    return x


def check_newton(rng: np.random.Generator, problems: int = 5) -> CheckResult:
    settings = NewtonSettings(gradient_tolerance=1e-9)
    worst = 0.0
    monotone = True
    for k in range(problems):
        subdomain = tiny_subdomain(rng, clamp=bool(k % 2))
        prepare_grid(subdomain)
        problem = assemble_problem(subdomain)
        result = solve_step(problem, settings)
        energies = [record.energy for record in result.trace]
        monotone &= all(b <= a for a, b in zip(energies, energies[1:]))
        start = problem.inertial_target.copy()
        start[problem.dirichlet] = problem.constrained_positions()[problem.dirichlet]
        reference = dense_minimizer(start, problem.free, lambda x: incremental_potential_gradient(x, problem))
        scale = max(float(np.max(np.abs(problem.velocity))), 9.81 * problem.dt)
        worst = max(worst, float(np.max(np.abs(result.positions - reference))) / problem.dt / scale)
    passed = monotone and worst <= 1e-7
    return CheckResult("Newton vs dense solve", passed, f"max velocity deviation {worst:.2e}, monotone={monotone}")


def run_selftest(seed: int = 0, samples: int = 100) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [
        check_kernel(rng, samples),
        check_transfer(rng, samples),
        check_constitutive(rng, samples),
        check_newton(rng),
    ]
    for result in results:
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, "%s: %s (%s)", result.name, "ok" if result.passed else "FAILED", result.detail)
    return results
