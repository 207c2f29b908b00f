"""
Overlapping Schwarz coupling of a coarse background subdomain (B) and a
refined subdomain (S) with sub-cycled time steps.

One frame alternates a coarse implicit step, with Dirichlet data projected
from the fine grid, and `M` fine sub-steps, with Dirichlet data interpolated
from the coarse grid in space and linearly in time, until the interface data
on both grids stops changing.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from schwarzmpm._exceptions import ConfigurationError, SolverError
from schwarzmpm._types import BoolArray, FloatArray, IntArray
from schwarzmpm.fields import ParticleSet, Subdomain, SubdomainGrid, compute_stencil, substep_ratio
from schwarzmpm.implicit_step import (
    NewtonSettings,
    SolveTrace,
    StepResult,
    assemble_problem,
    finish_step,
    prepare_grid,
    solve_step,
    solve_subdomain,
    store_velocity,
)
from schwarzmpm.transfer import scatter

logger = logging.getLogger("schwarzmpm.run")

INTERFACE_MASS_FACTOR = 1e-6
REGULARIZATION_FACTOR = 1e-12
COINCIDENCE_FACTOR = 1e-9
ABSOLUTE_FLOOR = 1e-14


class CouplingConfigurationError(ConfigurationError):
    pass


class SchwarzConvergenceError(SolverError):
    def __init__(self, frame: int, history: list[tuple[float, float]]) -> None:
        self.frame = frame
        self.history = history
        last = history[-1] if history else (float("nan"), float("nan"))
        super().__init__(
            f"Schwarz iteration did not converge in frame {frame} after {len(history)} iterations "
            f"(r_B={last[0]:.3e}, r_S={last[1]:.3e})."
        )


@dataclass(frozen=True)
class SchwarzSettings:
    convergence_tolerance: float = 1e-5
    max_iterations: int = 100
    substeps: int = 1
    regularization: float | None = None
    interface_mass: float | None = None
    layer_width: float | None = None
    absolute_tolerance: float = 1e-10

    def __post_init__(self) -> None:
        if not self.convergence_tolerance > 0:
            raise ConfigurationError("schwarz.convergence_tolerance must be positive.")
        if self.max_iterations < 1:
            raise ConfigurationError("schwarz.max_iterations must be at least 1.")
        if isinstance(self.substeps, bool) or not isinstance(self.substeps, int) or self.substeps < 1:
            raise ConfigurationError(f"schwarz.substeps must be an integer >= 1, got {self.substeps!r}.")
        for name in ("regularization", "interface_mass", "layer_width"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigurationError(f"schwarz.{name} must be positive.")
        if self.absolute_tolerance < 0:
            raise ConfigurationError("schwarz.absolute_tolerance must be non-negative.")


@dataclass
class InterfaceSets:
    coarse_boundary: IntArray
    fine_boundary: IntArray
    coarse_receivers: IntArray
    fine_receivers: IntArray
    interface_mass: float


@dataclass
class FrameCheckpoint:
    x: FloatArray
    v: FloatArray
    F: FloatArray
    B: FloatArray

    @classmethod
    def capture(cls, particles: ParticleSet) -> FrameCheckpoint:
        return cls(x=particles.x.copy(), v=particles.v.copy(), F=particles.F.copy(), B=particles.B.copy())

    def restore(self, particles: ParticleSet) -> None:
        particles.x = self.x.copy()
        particles.v = self.v.copy()
        particles.F = self.F.copy()
        particles.B = self.B.copy()


@dataclass
class Residuals:
    coarse: float
    fine: float
    coarse_change: float
    fine_change: float

    def converged(self, settings: SchwarzSettings) -> bool:
        def settled(relative: float, change: float) -> bool:
            return relative <= settings.convergence_tolerance or change <= settings.absolute_tolerance

        return settled(self.coarse, self.coarse_change) and settled(self.fine, self.fine_change)


@dataclass
class FrameReport:
    frame: int
    iterations: int
    residuals: list[tuple[float, float]]
    coarse_solve_wall: list[float]
    fine_solve_wall: list[float]
    newton_iterations: int
    coarse_velocity_max: float
    fine_velocity_max: float
    solve_traces: list[SolveTrace] = field(default_factory=list)

    @property
    def velocity_max(self) -> float:
        return max(self.coarse_velocity_max, self.fine_velocity_max)


def mark_boundary_particles(
    subdomain: Subdomain,
    layer_width: float,
    body: Callable[[FloatArray], BoolArray] | None = None,
) -> BoolArray:
    """
    Flag the particles within `layer_width` of the boundary of the subdomain's
    particle region.

    The region is rasterized at the particle spacing. When `body` (a point
    predicate for the whole simulated body) is given, only boundary facing the
    inside of the body counts, so free surfaces shared with the body are skipped.
    """
    particles = subdomain.particles
    if not layer_width > 0:
        raise CouplingConfigurationError(f"Boundary layer width must be positive, got {layer_width}.")
    spacing = float(np.sqrt(np.median(particles.volume)))
    pad = int(np.ceil(layer_width / spacing)) + 2
    lower = particles.x.min(axis=0) - (pad + 0.5) * spacing
    index = np.floor((particles.x - lower) / spacing).astype(np.intp)
    shape = tuple(int(s) for s in index.max(axis=0) + pad + 1)
    occupied = np.zeros(shape, dtype=bool)
    occupied[index[:, 0], index[:, 1]] = True

    exterior = ~occupied
    if body is not None:
        centers = lower + (np.indices(shape).reshape(2, -1).T + 0.5) * spacing
        exterior &= np.asarray(body(centers), dtype=bool).reshape(shape)
    if not exterior.any():
        raise CouplingConfigurationError(f"Subdomain {subdomain.label} has no interface boundary.")
    distance = ndimage.distance_transform_edt(~exterior) * spacing
    depth = distance[index[:, 0], index[:, 1]] - 0.5 * spacing
    flags = depth < layer_width
    if not flags.any():
        raise CouplingConfigurationError(f"No boundary particles flagged in subdomain {subdomain.label}.")
    particles.is_boundary = flags
    logger.debug("%d boundary particles flagged.", int(flags.sum()), extra={"subdomain": subdomain.label})
    return flags


def _boundary_mass(subdomain: Subdomain) -> FloatArray:
    particles = subdomain.particles
    stencil = subdomain.stencil if subdomain.stencil is not None else compute_stencil(particles.x, subdomain.grid)
    share = particles.mass[:, None] * stencil.weights
    share[~particles.is_boundary] = 0.0
    return scatter(stencil.nodes, share, subdomain.grid.num_nodes)


def default_interface_mass(coarse: Subdomain, fine: Subdomain) -> float:
    masses = np.concatenate([coarse.particles.mass, fine.particles.mass])
    return INTERFACE_MASS_FACTOR * float(np.median(masses))


def build_interface_sets(coarse: Subdomain, fine: Subdomain, interface_mass: float | None = None) -> InterfaceSets:
    tau = default_interface_mass(coarse, fine) if interface_mass is None else interface_mass
    coarse_grid, fine_grid = coarse.grid, fine.grid
    gamma_b = coarse_grid.active & (_boundary_mass(coarse) > tau)
    gamma_s = fine_grid.active & (_boundary_mass(fine) > tau)
    receivers_b = gamma_b.copy()
    receivers_s = gamma_s.copy()

    fine_nodes = np.flatnonzero(gamma_s)
    if fine_nodes.size:
        positions = fine_grid.positions[fine_nodes]
        lattice = np.rint((positions - coarse_grid.origin) / coarse_grid.h).astype(np.intp)
        inside = np.all((lattice >= 0) & (lattice < np.array(coarse_grid.shape)), axis=1)
        lattice[~inside] = 0
        coarse_nodes = lattice[:, 0] * coarse_grid.shape[1] + lattice[:, 1]
        tolerance = COINCIDENCE_FACTOR * min(coarse_grid.h, fine_grid.h)
        gap = np.linalg.norm(coarse_grid.positions[coarse_nodes] - positions, axis=1)
        pair = inside & (gap <= tolerance) & gamma_b[coarse_nodes]
        coarse_pair, fine_pair = coarse_nodes[pair], fine_nodes[pair]
        # larger nodal mass donates; ties go to the coarse grid
        coarse_donates = coarse_grid.mass[coarse_pair] >= fine_grid.mass[fine_pair]
        receivers_b[coarse_pair[coarse_donates]] = False
        receivers_s[fine_pair[~coarse_donates]] = False
        logger.debug("Arbitrated %d coincident interface nodes.", int(pair.sum()))

    sets = InterfaceSets(
        coarse_boundary=np.flatnonzero(gamma_b),
        fine_boundary=np.flatnonzero(gamma_s),
        coarse_receivers=np.flatnonzero(receivers_b),
        fine_receivers=np.flatnonzero(receivers_s),
        interface_mass=tau,
    )
    if sets.coarse_receivers.size == 0 or sets.fine_receivers.size == 0:
        raise CouplingConfigurationError(
            f"Empty receiver set (coarse: {sets.coarse_receivers.size}, fine: {sets.fine_receivers.size})."
        )
    return sets


def project_fine_to_coarse(
    fine_grid: SubdomainGrid,
    coarse_grid: SubdomainGrid,
    receivers: IntArray,
    regularization: float,
) -> FloatArray:
    """Mass-weighted projection of the active fine nodal velocities onto coarse receivers."""
    active = fine_grid.active_nodes()
    stencil = compute_stencil(fine_grid.positions[active], coarse_grid, strict=False)
    share = fine_grid.mass[active, None] * stencil.weights
    momentum = scatter(stencil.nodes, share[..., None] * fine_grid.velocity[active, None, :], coarse_grid.num_nodes)
    mass = scatter(stencil.nodes, share, coarse_grid.num_nodes)
    support = mass[receivers]
    vacuum = int(np.count_nonzero(support == 0.0))
    if vacuum:
        logger.debug("%d coarse receivers have no fine support.", vacuum)
    return momentum[receivers] / (support[:, None] + regularization)


def interpolate_coarse_to_fine(
    coarse_grid: SubdomainGrid,
    fine_grid: SubdomainGrid,
    receivers: IntArray,
    velocity: FloatArray | None = None,
) -> FloatArray:
    field_ = coarse_grid.velocity if velocity is None else velocity
    stencil = compute_stencil(fine_grid.positions[receivers], coarse_grid, strict=False)
    if not stencil.valid.all():
        bad = int(receivers[np.flatnonzero(~stencil.valid)[0]])
        raise CouplingConfigurationError(f"Fine receiver node {bad} lies outside the coarse kernel support.")
    return np.einsum("pi,pia->pa", stencil.weights, field_[stencil.nodes])


def temporal_interp(v_n: FloatArray, v_np1: FloatArray, m: int, M: int) -> FloatArray:
    if not 0 <= m <= M:
        raise ValueError(f"Sub-step index {m} outside [0, {M}].")
    alpha = m / M
    return (1.0 - alpha) * np.asarray(v_n) + alpha * np.asarray(v_np1)


def interface_residual(previous: FloatArray, new: FloatArray) -> tuple[float, float]:
    """Relative change and absolute change of one grid's interface data."""
    change = float(np.linalg.norm(np.asarray(new) - np.asarray(previous)))
    size = float(np.linalg.norm(new))
    if size == 0.0:
        return (0.0 if change <= ABSOLUTE_FLOOR else change), change
    return change / size, change


def convergence_residuals(
    previous_coarse: FloatArray,
    new_coarse: FloatArray,
    previous_fine: FloatArray,
    new_fine: FloatArray,
) -> Residuals:
    r_b, change_b = interface_residual(previous_coarse, new_coarse)
    r_s, change_s = interface_residual(previous_fine, new_fine)
    return Residuals(coarse=r_b, fine=r_s, coarse_change=change_b, fine_change=change_s)


def apply_receivers(grid: SubdomainGrid, nodes: IntArray, velocity: FloatArray) -> int:
    """Prescribe Schwarz data on the receivers that are currently active; returns how many were skipped."""
    live = grid.active[nodes]
    grid.schwarz_receiver[nodes[live]] = True
    grid.prescribed_velocity[nodes[live]] = velocity[live]
    return int(np.count_nonzero(~live))


@dataclass
class _FrozenGrid:
    velocity: FloatArray
    collision_dirichlet: BoolArray
    prescribed_velocity: FloatArray

    @classmethod
    def of(cls, grid: SubdomainGrid) -> _FrozenGrid:
        return cls(grid.velocity.copy(), grid.collision_dirichlet.copy(), grid.prescribed_velocity.copy())

    def restore(self, grid: SubdomainGrid) -> None:
        grid.velocity = self.velocity.copy()
        grid.collision_dirichlet = self.collision_dirichlet.copy()
        grid.prescribed_velocity = self.prescribed_velocity.copy()
        grid.schwarz_receiver = np.zeros(grid.num_nodes, dtype=bool)


@dataclass
class SchwarzCoupler:
    coarse: Subdomain
    fine: Subdomain
    settings: SchwarzSettings = field(default_factory=SchwarzSettings)
    newton: NewtonSettings = field(default_factory=NewtonSettings)
    frame: int = 0
    interface: InterfaceSets | None = None
    reports: list[FrameReport] = field(default_factory=list)
    last_results: dict[str, StepResult] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.coarse.label != "B" or self.fine.label != "S":
            raise CouplingConfigurationError("Coupler expects a coarse subdomain 'B' and a fine subdomain 'S'.")
        ratio = substep_ratio(self.coarse, self.fine)
        if ratio != self.settings.substeps:
            raise CouplingConfigurationError(
                f"Time steps imply {ratio} sub-steps but schwarz.substeps is {self.settings.substeps}."
            )

    @property
    def subdomains(self) -> list[Subdomain]:
        return [self.coarse, self.fine]

    def regularization(self) -> float:
        if self.settings.regularization is not None:
            return self.settings.regularization
        return REGULARIZATION_FACTOR * float(self.fine.particles.mass.sum())


def _fine_sweep(
    coupler: SchwarzCoupler,
    receivers: IntArray,
    start: FloatArray,
    end: FloatArray,
    traces: list[SolveTrace],
    iteration: int,
) -> tuple[StepResult, int]:
    fine = coupler.fine
    substeps = coupler.settings.substeps
    newton_iterations = 0
    result: StepResult | None = None
    for m in range(1, substeps + 1):
        prepare_grid(fine)
        skipped = apply_receivers(fine.grid, receivers, temporal_interp(start, end, m, substeps))
        if skipped:
            logger.debug(
                "Frame %d sub-step %d: %d receivers inactive.",
                coupler.frame,
                m,
                skipped,
                extra={"subdomain": fine.label},
            )
        result = solve_subdomain(fine, coupler.newton)
        traces.append(SolveTrace(fine.label, iteration, m, result.trace))
        newton_iterations += result.iterations
        finish_step(fine, step=coupler.frame)
    prepare_grid(fine)
    assert result is not None
    return result, newton_iterations


def advance_frame(coupler: SchwarzCoupler) -> FrameReport:
    """Advance both subdomains by one coarse step with the alternating Schwarz method."""
    coarse, fine, settings = coupler.coarse, coupler.fine, coupler.settings
    frame = coupler.frame
    checkpoint = FrameCheckpoint.capture(fine.particles)
    prepare_grid(coarse)
    prepare_grid(fine)
    interface = build_interface_sets(coarse, fine, settings.interface_mass)
    coupler.interface = interface
    regularization = coupler.regularization()
    coarse_frozen = _FrozenGrid.of(coarse.grid)

    coarse_bc = project_fine_to_coarse(fine.grid, coarse.grid, interface.coarse_receivers, regularization)
    fine_bc_start = interpolate_coarse_to_fine(coarse.grid, fine.grid, interface.fine_receivers)
    fine_bc_end = fine_bc_start
    history: list[tuple[float, float]] = []
    coarse_wall: list[float] = []
    fine_wall: list[float] = []
    newton_iterations = 0
    warm_start: FloatArray | None = None
    traces: list[SolveTrace] = []

    for k in range(settings.max_iterations):
        try:
            coarse_frozen.restore(coarse.grid)
            apply_receivers(coarse.grid, interface.coarse_receivers, coarse_bc)
            started = time.perf_counter()
            with coarse.timed("solve"):
                coarse_result = solve_step(assemble_problem(coarse), coupler.newton, initial_guess=warm_start)
            coarse_wall.append(time.perf_counter() - started)
            traces.append(SolveTrace(coarse.label, k + 1, 0, coarse_result.trace))
            store_velocity(coarse.grid, coarse_result)
            warm_start = coarse_result.positions
            newton_iterations += coarse_result.iterations
            new_fine_bc_end = interpolate_coarse_to_fine(coarse.grid, fine.grid, interface.fine_receivers)

            checkpoint.restore(fine.particles)
            started = time.perf_counter()
            fine_result, fine_newton = _fine_sweep(
                coupler, interface.fine_receivers, fine_bc_start, new_fine_bc_end, traces, k + 1
            )
            fine_wall.append(time.perf_counter() - started)
            newton_iterations += fine_newton
        except SolverError:
            logger.error("Solver failure in frame %d, Schwarz iteration %d.", frame, k + 1)
            raise

        new_coarse_bc = project_fine_to_coarse(fine.grid, coarse.grid, interface.coarse_receivers, regularization)
        residuals = convergence_residuals(coarse_bc, new_coarse_bc, fine_bc_end, new_fine_bc_end)
        history.append((residuals.coarse, residuals.fine))
        logger.debug(
            "Frame %d Schwarz iteration %d: r_B=%.3e r_S=%.3e", frame, k + 1, residuals.coarse, residuals.fine
        )
        coarse_bc = new_coarse_bc
        fine_bc_end = new_fine_bc_end
        if residuals.converged(settings):
            break
    else:
        raise SchwarzConvergenceError(frame, history)

    finish_step(coarse, step=frame)
    report = FrameReport(
        frame=frame,
        iterations=len(history),
        residuals=history,
        coarse_solve_wall=coarse_wall,
        fine_solve_wall=fine_wall,
        newton_iterations=newton_iterations,
        coarse_velocity_max=_velocity_max(coarse_result),
        fine_velocity_max=_velocity_max(fine_result),
        solve_traces=traces,
    )
    coupler.reports.append(report)
    coupler.last_results = {"B": coarse_result, "S": fine_result}
    coupler.frame += 1
    return report


def _velocity_max(result: StepResult) -> float:
    if result.velocity.size == 0:
        return 0.0
    return float(np.max(np.abs(result.velocity)))
