from __future__ import annotations

import numpy as np
import pytest
from pytest_mock import MockerFixture

from schwarzmpm._exceptions import ConfigurationError
from schwarzmpm.fields import Subdomain, SubdomainGrid
from schwarzmpm.implicit_step import (
    CollisionPlane,
    NewtonConvergenceError,
    NewtonSettings,
    RegionDirichlet,
    advance_subdomain,
    apply_collision_dirichlet,
    assemble_problem,
    incremental_potential,
    incremental_potential_gradient,
    prepare_grid,
    solve_step,
    store_velocity,
)
from schwarzmpm.logging import TRACE_LOG_LEVEL
from schwarzmpm.selftest import tiny_subdomain


@pytest.fixture
def plane_grid() -> SubdomainGrid:
    grid = SubdomainGrid(origin=np.array([-0.25, -0.25]), h=0.1, shape=(5, 6))
    grid.active[:] = True
    grid.velocity[:] = [1.0, -1.0]
    return grid


@pytest.mark.parametrize(
    "kwargs",
    [
        {"max_iterations": 0},
        {"gradient_tolerance": 0.0},
        {"relative_tolerance": -1.0},
        {"shrink_factor": 1.0},
        {"min_step": 0.0},
        {"direct_solver_limit": 0},
    ],
)
def test_invalid_newton_settings(kwargs: dict[str, float]) -> None:
    with pytest.raises(ConfigurationError):
        NewtonSettings(**kwargs)  # type: ignore[arg-type]


def test_tolerance_for() -> None:
    assert NewtonSettings(relative_tolerance=1e-6).tolerance_for(20.0) == pytest.approx(2e-5)
    assert NewtonSettings(gradient_tolerance=1e-3).tolerance_for(20.0) == 1e-3


def test_collision_plane_normalizes() -> None:
    plane = CollisionPlane(point=np.zeros(2), normal=np.array([0.0, 2.0]))
    assert np.allclose(plane.normal, [0.0, 1.0])
    with pytest.raises(ConfigurationError):
        CollisionPlane(point=np.zeros(2), normal=np.zeros(2))
    with pytest.raises(ConfigurationError):
        CollisionPlane(point=np.zeros(2), normal=np.array([0.0, 1.0]), mode="bouncy")  # type: ignore[arg-type]


def test_slip_plane_removes_normal_velocity(plane_grid: SubdomainGrid) -> None:
    plane = CollisionPlane(point=np.zeros(2), normal=np.array([0.0, 1.0]), mode="slip")
    hit = apply_collision_dirichlet(plane_grid, plane)

    assert hit.size == 3 * 5
    assert np.all(plane_grid.positions[hit, 1] < 0.0)
    assert np.allclose(plane_grid.prescribed_velocity[hit], [1.0, 0.0])
    assert plane_grid.dirichlet.sum() == hit.size


def test_sticky_plane_stops_nodes(plane_grid: SubdomainGrid) -> None:
    plane = CollisionPlane(point=np.zeros(2), normal=np.array([0.0, 1.0]), mode="sticky")
    plane.apply(plane_grid)
    assert np.allclose(plane_grid.prescribed_velocity[plane_grid.collision_dirichlet], 0.0)


def test_separating_nodes_stay_free(plane_grid: SubdomainGrid) -> None:
    plane_grid.velocity[:] = [0.0, 0.5]
    plane = CollisionPlane(point=np.zeros(2), normal=np.array([0.0, 1.0]))
    assert apply_collision_dirichlet(plane_grid, plane).size == 0


def test_region_dirichlet_only_touches_active_nodes(plane_grid: SubdomainGrid) -> None:
    plane_grid.active[:5] = False
    constraint = RegionDirichlet(lambda p: p[:, 0] < -0.2, velocity=np.array([0.0, 0.1]))
    constraint.apply(plane_grid)

    assert plane_grid.collision_dirichlet.sum() == 1
    assert np.allclose(plane_grid.prescribed_velocity[5], [0.0, 0.1])


def test_free_fall_step(block: Subdomain) -> None:
    prepare_grid(block)
    problem = assemble_problem(block)
    result = solve_step(problem)

    assert not problem.dirichlet.any()
    assert result.iterations >= 1
    assert np.allclose(result.velocity, [0.0, -9.81 * block.dt], atol=1e-8)
    energies = [record.energy for record in result.trace]
    assert all(b <= a for a, b in zip(energies, energies[1:]))
    assert result.trace[-1].gradient_norm <= result.tolerance


def test_gravity_scale_scales_the_load(block: Subdomain) -> None:
    block.gravity_scale = 0.5
    prepare_grid(block)
    result = solve_step(assemble_problem(block))
    assert np.allclose(result.velocity, [0.0, -0.5 * 9.81 * block.dt], atol=1e-8)


def test_gradient_matches_finite_differences(rng: np.random.Generator) -> None:
    subdomain = tiny_subdomain(rng)
    prepare_grid(subdomain)
    problem = assemble_problem(subdomain)
    x = problem.inertial_target + 1e-3 * rng.normal(size=problem.inertial_target.shape)

    gradient = incremental_potential_gradient(x, problem)
    eps = 1e-6
    scale = float(np.max(np.abs(gradient)))
    for node in range(0, problem.num_active, 3):
        for axis in range(2):
            plus, minus = x.copy(), x.copy()
            plus[node, axis] += eps
            minus[node, axis] -= eps
            numeric = (incremental_potential(plus, problem) - incremental_potential(minus, problem)) / (2 * eps)
            assert numeric == pytest.approx(gradient[node, axis], abs=1e-5 * scale)


def test_clamped_block_reaction(block: Subdomain) -> None:
    block.constraints = [RegionDirichlet(lambda p: p[:, 0] <= 1e-9)]
    prepare_grid(block)
    problem = assemble_problem(block)
    result = solve_step(problem)

    assert problem.dirichlet.any()
    assert np.array_equal(result.constrained, problem.dirichlet)
    assert np.allclose(result.velocity[problem.dirichlet], 0.0)
    assert np.all(result.reaction[~problem.dirichlet] == 0.0)
    assert result.reaction[problem.dirichlet, 1].sum() > 0.0


def test_newton_iteration_cap(rng: np.random.Generator) -> None:
    subdomain = tiny_subdomain(rng)
    prepare_grid(subdomain)
    settings = NewtonSettings(max_iterations=1, gradient_tolerance=1e-30)
    with pytest.raises(NewtonConvergenceError) as exc_info:
        solve_step(assemble_problem(subdomain), settings)
    assert exc_info.value.iterations == 1


def test_trace_is_logged(block: Subdomain, caplog: pytest.LogCaptureFixture) -> None:
    prepare_grid(block)
    with caplog.at_level(TRACE_LOG_LEVEL, logger="schwarzmpm.solver"):
        result = solve_step(assemble_problem(block))
    traces = [record for record in caplog.records if record.levelno == TRACE_LOG_LEVEL]
    assert len(traces) == len(result.trace)
    assert traces[0].args[0] == "B"  # type: ignore[index]


def test_store_velocity_writes_active_nodes(block: Subdomain) -> None:
    prepare_grid(block)
    result = solve_step(assemble_problem(block))
    store_velocity(block.grid, result)

    assert np.allclose(block.grid.velocity[result.nodes], result.velocity)
    inactive = np.setdiff1d(np.arange(block.grid.num_nodes), result.nodes)
    assert np.all(block.grid.velocity[inactive] == 0.0)


def test_advance_subdomain_falls(block: Subdomain) -> None:
    start = block.particles.x.copy()
    advance_subdomain(block)

    assert np.allclose(block.particles.v, [0.0, -9.81 * block.dt], atol=1e-8)
    assert np.allclose(block.particles.x - start, [0.0, -9.81 * block.dt**2], atol=1e-10)
    assert np.allclose(block.particles.F, np.eye(2), atol=1e-10)
    assert {"p2g", "solve", "g2p"} <= set(block.timings)


def test_flat_energy_increase_is_never_accepted(block: Subdomain, mocker: MockerFixture) -> None:
    prepare_grid(block)
    problem = assemble_problem(block)
    energies = iter([1.0])
    mocker.patch(
        "schwarzmpm.implicit_step._shifted_energy", side_effect=lambda *args: next(energies, 1.0 + 5e-13)
    )
    result = solve_step(problem)

    assert result.iterations == 0
    assert [record.energy for record in result.trace] == [1.0]
    assert result.trace[0].gradient_norm > result.tolerance


def test_flat_energy_step_is_judged_by_gradient(block: Subdomain, mocker: MockerFixture) -> None:
    prepare_grid(block)
    problem = assemble_problem(block)
    mocker.patch("schwarzmpm.implicit_step._shifted_energy", return_value=1.0)
    result = solve_step(problem)

    assert result.iterations >= 1
    assert result.trace[-1].gradient_norm <= result.tolerance
    assert np.allclose(result.velocity, [0.0, -9.81 * block.dt], atol=1e-8)
