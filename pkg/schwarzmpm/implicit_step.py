"""
Backward-Euler steps posed as minimization of the incremental potential

    E(x) = sum_i m_i / (2 dt^2) |x_i - x~_i|^2 + sum_p V_p Psi(F_p(x)) - sum_i x_i . f_i

over the active nodes of one subdomain, solved with Newton's method and a
halving line search. Dirichlet nodes are eliminated from the linear systems.
"""

from __future__ import annotations

import logging
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from schwarzmpm._exceptions import ConfigurationError, SolverError
from schwarzmpm._types import BoolArray, CollisionMode, FloatArray, IntArray
from schwarzmpm.constitutive import (
    determinant,
    neo_hookean_energy,
    neo_hookean_stress,
    project_psd,
    tangent_matrix,
)
from schwarzmpm.fields import Stencil, Subdomain, SubdomainGrid, compute_stencil
from schwarzmpm.logging import TRACE_LOG_LEVEL
from schwarzmpm.transfer import advect, g2p, p2g, scatter

logger = logging.getLogger("schwarzmpm.solver")

ROUNDOFF_SLACK = 1e-12


class NewtonConvergenceError(SolverError):
    def __init__(self, iterations: int, gradient_norm: float) -> None:
        self.iterations = iterations
        self.gradient_norm = gradient_norm
        super().__init__(
            f"Newton solve did not converge in {iterations} iterations (gradient norm {gradient_norm:.6g})."
        )


class LineSearchStagnationError(SolverError):
    def __init__(self, gradient_norm: float, energy: float) -> None:
        self.gradient_norm = gradient_norm
        self.energy = energy
        super().__init__(
            f"Line search stagnated below the minimum step (energy {energy:.17g}, gradient norm {gradient_norm:.6g})."
        )


@dataclass(frozen=True)
class NewtonSettings:
    max_iterations: int = 50
    gradient_tolerance: float | None = None
    relative_tolerance: float = 1e-7
    shrink_factor: float = 0.5
    min_step: float = 2.0**-20
    direct_solver_limit: int = 20_000
    cg_tolerance: float = 1e-8

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ConfigurationError("newton.max_iterations must be at least 1.")
        if self.gradient_tolerance is not None and not self.gradient_tolerance > 0:
            raise ConfigurationError("newton.gradient_tolerance must be positive.")
        if not self.relative_tolerance > 0:
            raise ConfigurationError("newton.relative_tolerance must be positive.")
        if not 0.0 < self.shrink_factor < 1.0:
            raise ConfigurationError("newton.shrink_factor must lie in (0, 1).")
        if not 0.0 < self.min_step < 1.0:
            raise ConfigurationError("newton.min_step must lie in (0, 1).")
        if self.direct_solver_limit < 1 or not self.cg_tolerance > 0:
            raise ConfigurationError("newton linear solver settings must be positive.")

    def tolerance_for(self, characteristic_force: float) -> float:
        if self.gradient_tolerance is not None:
            return self.gradient_tolerance
        return self.relative_tolerance * characteristic_force


@dataclass
class CollisionPlane:
    point: FloatArray
    normal: FloatArray
    mode: CollisionMode = "slip"

    def __post_init__(self) -> None:
        self.point = np.asarray(self.point, dtype=np.float64)
        normal = np.asarray(self.normal, dtype=np.float64)
        length = float(np.linalg.norm(normal))
        if length == 0.0:
            raise ConfigurationError("Collision plane normal must be non-zero.")
        self.normal = normal / length
        if self.mode not in ("sticky", "slip"):
            raise ConfigurationError(f"Unknown collision mode {self.mode!r}.")

    def apply(self, grid: SubdomainGrid) -> None:
        apply_collision_dirichlet(grid, self)


@dataclass
class RegionDirichlet:
    """Prescribe a fixed velocity on every active node inside `region`."""

    region: Callable[[FloatArray], BoolArray]
    velocity: FloatArray = field(default_factory=lambda: np.zeros(2))

    def apply(self, grid: SubdomainGrid) -> None:
        hit = grid.active & self.region(grid.positions)
        grid.collision_dirichlet[hit] = True
        grid.prescribed_velocity[hit] = np.asarray(self.velocity, dtype=np.float64)


def apply_collision_dirichlet(grid: SubdomainGrid, plane: CollisionPlane) -> IntArray:
    """
    Constrain active nodes on or behind the plane that are not separating from it.
    Returns the constrained node indices.
    """
    n = plane.normal
    behind = (grid.positions - plane.point) @ n <= 0.0
    normal_velocity = grid.velocity @ n
    hit = grid.active & behind & (normal_velocity <= 0.0)
    if plane.mode == "sticky":
        prescribed = np.zeros((int(hit.sum()), 2))
    else:
        v = grid.velocity[hit]
        prescribed = v - normal_velocity[hit, None] * n
    grid.collision_dirichlet[hit] = True
    grid.prescribed_velocity[hit] = prescribed
    return np.flatnonzero(hit)


@dataclass
class TraceRecord:
    iteration: int
    energy: float
    gradient_norm: float
    step_size: float


@dataclass
class SolveTrace:
    """Newton trace of one solve, tagged with where in the frame it ran."""

    subdomain: str
    schwarz_iteration: int
    substep: int
    records: list[TraceRecord]


@dataclass
class StepProblem:
    grid: SubdomainGrid
    dt: float
    nodes: IntArray
    positions: FloatArray
    mass: FloatArray
    velocity: FloatArray
    inertial_target: FloatArray
    external_force: FloatArray
    dirichlet: BoolArray
    prescribed_velocity: FloatArray
    volume: FloatArray
    deformation: FloatArray
    mu: FloatArray
    lam: FloatArray
    local: IntArray
    pull: FloatArray
    characteristic_force: float
    label: str = ""

    @property
    def num_active(self) -> int:
        return self.nodes.shape[0]

    @property
    def free(self) -> BoolArray:
        return ~self.dirichlet

    def constrained_positions(self) -> FloatArray:
        return self.positions + self.dt * self.prescribed_velocity


@dataclass
class StepResult:
    nodes: IntArray
    velocity: FloatArray
    positions: FloatArray
    reaction: FloatArray
    iterations: int
    trace: list[TraceRecord]
    tolerance: float
    constrained: BoolArray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def assemble_problem(subdomain: Subdomain, stencil: Stencil | None = None) -> StepProblem:
    grid = subdomain.grid
    particles = subdomain.particles
    if stencil is None:
        stencil = subdomain.stencil if subdomain.stencil is not None else compute_stencil(particles.x, grid)
    dt = subdomain.dt
    nodes = grid.active_nodes()
    count = nodes.shape[0]
    # inactive stencil slots point at a padding row that never moves
    lookup = np.full(grid.num_nodes, count, dtype=np.intp)
    lookup[nodes] = np.arange(count)
    local = lookup[stencil.nodes]

    positions = grid.positions[nodes]
    velocity = grid.velocity[nodes]
    gravity_share = (particles.mass[:, None] * stencil.weights)[..., None] * subdomain.effective_gravity
    external_force = scatter(local, gravity_share, count + 1)[:count]
    mu, lam = subdomain.lame_parameters()
    pull = np.einsum("pba,pib->pia", particles.F, stencil.gradients)
    return StepProblem(
        grid=grid,
        dt=dt,
        nodes=nodes,
        positions=positions,
        mass=grid.mass[nodes],
        velocity=velocity,
        inertial_target=positions + dt * velocity,
        external_force=external_force,
        dirichlet=grid.dirichlet[nodes],
        prescribed_velocity=grid.prescribed_velocity[nodes],
        volume=particles.volume,
        deformation=particles.F.copy(),
        mu=mu,
        lam=lam,
        local=local,
        pull=pull,
        characteristic_force=subdomain.characteristic_force(),
        label=subdomain.label,
    )


def deformation_at(problem: StepProblem, x_hat: FloatArray) -> FloatArray:
    displacement = np.zeros((problem.num_active + 1, 2))
    displacement[:-1] = x_hat - problem.positions
    return problem.deformation + np.einsum("pia,pib->pab", displacement[problem.local], problem.pull)


def _shifted_energy(problem: StepProblem, x_hat: FloatArray, F: FloatArray | None = None) -> float:
    # E minus the constant sum_i x~_i . f_i
    if F is None:
        F = deformation_at(problem, x_hat)
    J = determinant(F)
    if not np.all(np.isfinite(J)) or np.any(J <= 0):
        return np.inf
    diff = x_hat - problem.inertial_target
    inertia = 0.5 / problem.dt**2 * float(np.sum(problem.mass[:, None] * diff * diff))
    elastic = float(np.sum(problem.volume * neo_hookean_energy(F, problem.mu, problem.lam)))
    return inertia + elastic - float(np.sum(diff * problem.external_force))


def incremental_potential(x_hat: FloatArray, problem: StepProblem) -> float:
    energy = _shifted_energy(problem, np.asarray(x_hat, dtype=np.float64))
    return energy - float(np.sum(problem.inertial_target * problem.external_force))


def _gradient(problem: StepProblem, x_hat: FloatArray, F: FloatArray) -> FloatArray:
    P = neo_hookean_stress(F, problem.mu, problem.lam)
    per_node = problem.volume[:, None, None] * np.einsum("pab,pib->pia", P, problem.pull)
    internal = scatter(problem.local, per_node, problem.num_active + 1)[:-1]
    inertia = problem.mass[:, None] / problem.dt**2 * (x_hat - problem.inertial_target)
    return inertia + internal - problem.external_force


def incremental_potential_gradient(x_hat: FloatArray, problem: StepProblem) -> FloatArray:
    x_hat = np.asarray(x_hat, dtype=np.float64)
    return _gradient(problem, x_hat, deformation_at(problem, x_hat))


def _hessian(problem: StepProblem, F: FloatArray, project: bool) -> scipy.sparse.csr_matrix:
    count = problem.num_active
    particles = F.shape[0]
    C = tangent_matrix(F, problem.mu, problem.lam)
    if project:
        C = project_psd(C)
    C5 = C.reshape(particles, 2, 2, 2, 2)
    half = np.einsum("pabde,pje->pabjd", C5, problem.pull)
    blocks = problem.volume[:, None, None] * np.einsum("pib,pabjd->piajd", problem.pull, half).reshape(
        particles, 18, 18
    )
    dofs = (2 * problem.local[:, :, None] + np.arange(2)).reshape(particles, 18)
    valid = np.repeat(problem.local < count, 2, axis=1)
    rows = np.broadcast_to(dofs[:, :, None], blocks.shape)
    cols = np.broadcast_to(dofs[:, None, :], blocks.shape)
    keep = valid[:, :, None] & valid[:, None, :]
    stiffness = scipy.sparse.coo_matrix(
        (blocks[keep], (rows[keep], cols[keep])), shape=(2 * count, 2 * count)
    ).tocsr()
    lumped = scipy.sparse.diags(np.repeat(problem.mass / problem.dt**2, 2))
    return (stiffness + lumped).tocsr()


def _linear_solve(matrix: scipy.sparse.csr_matrix, rhs: FloatArray, settings: NewtonSettings) -> FloatArray:
    if rhs.shape[0] <= settings.direct_solver_limit:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.sparse.linalg.MatrixRankWarning)
            return np.asarray(scipy.sparse.linalg.spsolve(matrix.tocsc(), rhs))
    diagonal = matrix.diagonal()
    preconditioner = scipy.sparse.diags(1.0 / np.where(diagonal > 0, diagonal, 1.0))
    solution, info = scipy.sparse.linalg.cg(matrix, rhs, rtol=settings.cg_tolerance, M=preconditioner)
    if info != 0:
        logger.debug("Conjugate gradient stopped with info=%d.", info)
    return solution


def _newton_direction(
    problem: StepProblem,
    F: FloatArray,
    gradient: FloatArray,
    free_dofs: IntArray,
    settings: NewtonSettings,
) -> FloatArray:
    g = gradient.ravel()[free_dofs]
    for project in (False, True):
        hessian = _hessian(problem, F, project)[free_dofs][:, free_dofs]
        with np.errstate(all="ignore"):
            direction = _linear_solve(hessian, -g, settings)
        if np.all(np.isfinite(direction)) and float(g @ direction) < 0.0:
            return direction
        logger.debug(
            "Newton direction failed the descent check (projected=%s).", project, extra={"subdomain": problem.label}
        )
    scale = np.repeat(problem.mass / problem.dt**2, 2)[free_dofs]
    return -g / scale


def _max_node_norm(gradient: FloatArray, free: BoolArray) -> float:
    if not free.any():
        return 0.0
    return float(np.max(np.linalg.norm(gradient[free], axis=1)))


def solve_step(
    problem: StepProblem,
    settings: NewtonSettings | None = None,
    initial_guess: FloatArray | None = None,
) -> StepResult:
    settings = settings or NewtonSettings()
    free = problem.free
    dirichlet = problem.dirichlet
    tolerance = settings.tolerance_for(problem.characteristic_force)
    trace: list[TraceRecord] = []

    x_hat = problem.inertial_target.copy() if initial_guess is None else np.array(initial_guess, dtype=np.float64)
    x_hat[dirichlet] = problem.constrained_positions()[dirichlet]
    F = deformation_at(problem, x_hat)
    energy = _shifted_energy(problem, x_hat, F)
    if not np.isfinite(energy):
        x_hat[free] = problem.positions[free]
        F = deformation_at(problem, x_hat)
        energy = _shifted_energy(problem, x_hat, F)

    gradient = _gradient(problem, x_hat, F)
    free_dofs = np.flatnonzero(np.repeat(free, 2))
    iterations = 0
    step = 0.0
    at_floor = False
    while True:
        gradient_norm = _max_node_norm(gradient, free)
        trace.append(TraceRecord(iterations, energy, gradient_norm, step))
        logger.log(TRACE_LOG_LEVEL, "%s %d %.17g %.6e %.6e", problem.label, iterations, energy, gradient_norm, step)
        if gradient_norm <= tolerance:
            break
        if iterations >= settings.max_iterations:
            raise NewtonConvergenceError(iterations, gradient_norm)

        direction = _newton_direction(problem, F, gradient, free_dofs, settings).reshape(-1, 2)
        step = 1.0
        while True:
            trial = x_hat.copy()
            trial[free] += step * direction
            F_trial = deformation_at(problem, trial)
            trial_energy = _shifted_energy(problem, trial, F_trial)
            if trial_energy < energy:
                trial_gradient = _gradient(problem, trial, F_trial)
                break
            if step == 1.0 and abs(trial_energy - energy) <= ROUNDOFF_SLACK * max(1.0, abs(energy)):
                # energy flat to round-off: a non-increasing full step is judged by the gradient
                trial_gradient = _gradient(problem, trial, F_trial)
                if trial_energy <= energy and _max_node_norm(trial_gradient, free) < gradient_norm:
                    break
                at_floor = True
                break
            step *= settings.shrink_factor
            if step < settings.min_step:
                raise LineSearchStagnationError(gradient_norm, energy)
        if at_floor:
            logger.debug(
                "Newton stopped at the round-off floor with gradient %.3e.",
                gradient_norm,
                extra={"subdomain": problem.label},
            )
            break
        x_hat, F, energy, gradient = trial, F_trial, trial_energy, trial_gradient
        iterations += 1

    velocity = (x_hat - problem.positions) / problem.dt
    velocity[dirichlet] = problem.prescribed_velocity[dirichlet]
    reaction = np.zeros_like(gradient)
    reaction[dirichlet] = gradient[dirichlet]
    return StepResult(
        nodes=problem.nodes,
        velocity=velocity,
        positions=x_hat,
        reaction=reaction,
        iterations=iterations,
        trace=trace,
        tolerance=tolerance,
        constrained=dirichlet.copy(),
    )


def store_velocity(grid: SubdomainGrid, result: StepResult) -> None:
    grid.velocity = np.zeros((grid.num_nodes, 2))
    grid.velocity[result.nodes] = result.velocity


def prepare_grid(subdomain: Subdomain) -> Stencil:
    """P2G followed by the subdomain's own grid constraints."""
    with subdomain.timed("p2g"):
        subdomain.stencil = p2g(subdomain.particles, subdomain.grid)
    subdomain.apply_constraints()
    return subdomain.stencil


def solve_subdomain(
    subdomain: Subdomain,
    settings: NewtonSettings | None = None,
    initial_guess: FloatArray | None = None,
) -> StepResult:
    problem = assemble_problem(subdomain)
    with subdomain.timed("solve"):
        result = solve_step(problem, settings, initial_guess=initial_guess)
    store_velocity(subdomain.grid, result)
    return result


def finish_step(subdomain: Subdomain, step: int | None = None) -> None:
    """G2P and advection with the stencil of the last P2G."""
    with subdomain.timed("g2p"):
        stencil = g2p(subdomain.grid, subdomain.particles, subdomain.dt, subdomain.stencil, step=step)
        advect(subdomain.particles, subdomain.grid, subdomain.dt, stencil)


def advance_subdomain(
    subdomain: Subdomain,
    settings: NewtonSettings | None = None,
    step: int | None = None,
) -> StepResult:
    prepare_grid(subdomain)
    result = solve_subdomain(subdomain, settings)
    finish_step(subdomain, step=step)
    return result
