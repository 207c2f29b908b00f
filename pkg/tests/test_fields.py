from __future__ import annotations

import numpy as np
import pytest

from schwarzmpm._exceptions import ConfigurationError
from schwarzmpm.constitutive import MaterialModel
from schwarzmpm.fields import (
    KERNEL,
    OutOfDomainError,
    ParticleSet,
    Subdomain,
    SubdomainGrid,
    apic_inertia_tensor,
    compute_stencil,
    kernel_weights,
    substep_ratio,
)
from tests.utils import make_block


@pytest.fixture
def grid() -> SubdomainGrid:
    return SubdomainGrid(origin=np.array([-0.3, 0.2]), h=0.1, shape=(12, 10))


@pytest.mark.parametrize(
    "u, expected",
    [(0.0, 0.75), (0.5, 0.5), (-0.5, 0.5), (1.0, 0.125), (1.5, 0.0), (-2.0, 0.0)],
)
def test_basis_values(u: float, expected: float) -> None:
    assert KERNEL.basis(np.array(u)) == pytest.approx(expected)


def test_basis_derivative_matches_finite_difference() -> None:
    u = np.linspace(-1.4, 1.4, 57)
    eps = 1e-7
    numeric = (KERNEL.basis(u + eps) - KERNEL.basis(u - eps)) / (2 * eps)
    assert np.allclose(KERNEL.basis_derivative(u), numeric, atol=1e-6)


def test_partition_of_unity_and_linear_reproduction(grid: SubdomainGrid, rng: np.random.Generator) -> None:
    points = rng.uniform(grid.origin + 0.2, grid.origin + 0.75, size=(100, 2))
    stencil = compute_stencil(points, grid)
    nodes = grid.positions[stencil.nodes]

    assert np.allclose(stencil.weights.sum(axis=1), 1.0, atol=1e-13)
    assert np.allclose(np.einsum("pi,pia->pa", stencil.weights, nodes), points, atol=1e-13)
    assert np.allclose(stencil.gradients.sum(axis=1), 0.0, atol=1e-11)
    assert np.allclose(np.einsum("pia,pib->pab", nodes, stencil.gradients), np.eye(2), atol=1e-12)


def test_stencil_of_point_on_a_node(grid: SubdomainGrid) -> None:
    node = grid.node_index(5, 4)
    stencil = compute_stencil(grid.positions[node][None, :], grid)

    assert stencil.nodes.shape == (1, 9)
    assert node in stencil.nodes[0]
    weights = dict(zip(stencil.nodes[0].tolist(), stencil.weights[0].tolist()))
    assert weights[node] == pytest.approx(0.5625)
    assert weights[grid.node_index(4, 4)] == pytest.approx(0.09375)
    assert weights[grid.node_index(4, 3)] == pytest.approx(0.015625)


def test_flat_index_is_row_major(grid: SubdomainGrid) -> None:
    assert grid.node_index(2, 3) == 2 * grid.shape[1] + 3
    assert np.allclose(grid.positions[grid.node_index(2, 3)], grid.origin + 0.1 * np.array([2, 3]))


def test_out_of_domain_point_is_rejected(grid: SubdomainGrid) -> None:
    points = np.array([[0.0, 0.6], [grid.origin[0] + 0.02, 0.6]])
    with pytest.raises(OutOfDomainError) as exc_info:
        compute_stencil(points, grid)
    assert exc_info.value.index == 1


def test_non_strict_stencil_flags_invalid_points(grid: SubdomainGrid) -> None:
    points = np.array([[0.0, 0.6], [10.0, 10.0], [np.nan, 0.5]])
    stencil = compute_stencil(points, grid, strict=False)

    assert stencil.valid.tolist() == [True, False, False]
    assert np.all(stencil.weights[1:] == 0.0)
    assert np.all(stencil.gradients[1:] == 0.0)


def test_kernel_weights_entries(grid: SubdomainGrid) -> None:
    entries = kernel_weights(np.array([0.03, 0.61]), grid)

    assert len(entries) == 9
    assert sum(entry.weight for entry in entries) == pytest.approx(1.0)
    assert all(0 <= ix < grid.shape[0] and 0 <= iy < grid.shape[1] for (ix, iy), _, _ in entries)


def test_apic_inertia_tensor() -> None:
    assert np.allclose(apic_inertia_tensor(0.1), 0.0025 * np.eye(2))
    with pytest.raises(ConfigurationError):
        apic_inertia_tensor(0.0)


def test_grid_around_is_lattice_aligned() -> None:
    points = np.array([[0.013, 0.27], [0.41, 0.33]])
    grid = SubdomainGrid.around(points, 0.05, padding=3)

    assert np.allclose(grid.origin / 0.05, np.rint(grid.origin / 0.05))
    compute_stencil(points, grid)
    assert grid.shape == (16, 9)


@pytest.mark.parametrize("shape", [(2, 10), (10, 1)])
def test_grid_rejects_tiny_shapes(shape: tuple[int, int]) -> None:
    with pytest.raises(ConfigurationError):
        SubdomainGrid(origin=np.zeros(2), h=0.1, shape=shape)


def test_grid_reset_clears_constraints(grid: SubdomainGrid) -> None:
    grid.schwarz_receiver[3] = True
    grid.collision_dirichlet[4] = True
    grid.mass[5] = 1.0

    grid.reset()

    assert not grid.dirichlet.any()
    assert grid.mass.sum() == 0.0


def test_particle_set_copy_is_independent() -> None:
    particles = ParticleSet.from_positions(np.array([[0.1, 0.2], [0.3, 0.4]]), 2.0, 0.5)
    duplicate = particles.copy()
    duplicate.x[0, 0] = 9.0

    assert particles.x[0, 0] == 0.1
    assert np.array_equal(particles.x0, particles.x)
    assert len(particles.subset(np.array([True, False]))) == 1


def test_particle_set_rejects_inverted_start() -> None:
    particles = ParticleSet.from_positions(np.array([[0.1, 0.2]]), 1.0, 1.0)
    particles.F[0] = np.diag([1.0, -1.0])
    with pytest.raises(ConfigurationError, match="non-positive deformation determinant"):
        particles.validate()


def test_subdomain_validation(material: MaterialModel) -> None:
    block = make_block((0.0, 0.0), (0.1, 0.1), 0.05, material)
    assert block.grid.mass_threshold > 0.0

    with pytest.raises(ConfigurationError, match="positive time step"):
        Subdomain("B", block.grid, block.particles.copy(), [material], dt=0.0, gravity=np.zeros(2))

    particles = block.particles.copy()
    particles.material[:] = 1
    with pytest.raises(ConfigurationError, match="unknown material index"):
        Subdomain("B", block.grid, particles, [material], dt=0.1, gravity=np.zeros(2))


def test_timed_accumulates(block: Subdomain) -> None:
    with block.timed("solve"):
        pass
    with block.timed("solve"):
        pass
    assert set(block.timings) == {"solve"}
    assert block.timings["solve"] >= 0.0


@pytest.mark.parametrize("fine_dt, expected", [(0.02, 1), (0.01, 2), (0.005, 4)])
def test_substep_ratio(material: MaterialModel, fine_dt: float, expected: int) -> None:
    coarse = make_block((0.0, 0.0), (0.2, 0.2), 0.05, material, dt=0.02)
    fine = make_block((0.0, 0.0), (0.1, 0.1), 0.025, material, label="S", dt=fine_dt)
    assert substep_ratio(coarse, fine) == expected


def test_substep_ratio_rejects_fractions_and_coarser_fine(material: MaterialModel) -> None:
    coarse = make_block((0.0, 0.0), (0.2, 0.2), 0.05, material, dt=0.02)
    fine = make_block((0.0, 0.0), (0.1, 0.1), 0.025, material, label="S", dt=0.015)
    with pytest.raises(ConfigurationError, match="not a positive integer"):
        substep_ratio(coarse, fine)

    coarser = make_block((0.0, 0.0), (0.2, 0.2), 0.1, material, label="S", dt=0.02)
    with pytest.raises(ConfigurationError, match="exceeds coarse cell size"):
        substep_ratio(coarse, coarser)
