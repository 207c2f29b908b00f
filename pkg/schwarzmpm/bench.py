"""
Benchmark scenarios (cantilever under self-weight, Hertz contact, misfit
inclusion) in single-domain and dual-domain mode: construction, the
quasi-static driving loop, stress sampling and oracle comparisons.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy import spatial

from schwarzmpm._exceptions import ConfigurationError, SolverError
from schwarzmpm._types import BoolArray, FloatArray, IntArray, ModeType, ScenarioId
from schwarzmpm.constitutive import MaterialModel, cauchy_from_piola, neo_hookean_stress
from schwarzmpm.fields import KERNEL, GridConstraint, ParticleSet, Subdomain, SubdomainGrid
from schwarzmpm.geometry import Difference, Disk, Intersection, LowerHalfDisk, Rectangle, Shape, lattice_points
from schwarzmpm.implicit_step import (
    CollisionPlane,
    NewtonSettings,
    RegionDirichlet,
    SolveTrace,
    StepResult,
    advance_subdomain,
)
from schwarzmpm.importer import import_factory
from schwarzmpm.oracles import (
    HertzSolution,
    InclusionSolution,
    gravito_bending_parameter,
    gravity_for_parameter,
    inclusion_stress,
    solve_elastica,
)
from schwarzmpm.schwarz import (
    CouplingConfigurationError,
    SchwarzCoupler,
    SchwarzSettings,
    advance_frame,
    mark_boundary_particles,
)

logger = logging.getLogger("schwarzmpm.run")

SCENARIOS: tuple[ScenarioId, ...] = ("cantilever", "hertz", "inclusion", "custom")
MODES: tuple[ModeType, ...] = ("single", "dual")
SMOOTHING_FACTOR = 1.5
CONTACT_THRESHOLD = 0.01

DEFAULT_MATERIALS: dict[str, dict[str, MaterialModel]] = {
    "cantilever": {"beam": MaterialModel(100e3, 0.4, 1000.0)},
    "hertz": {"body": MaterialModel(200e3, 0.3, 1000.0)},
    "inclusion": {
        "matrix": MaterialModel(100e3, 0.3, 1000.0),
        "inclusion": MaterialModel(100e3, 0.3, 1000.0),
    },
}

GEOMETRY_KEYS: dict[str, frozenset[str]] = {
    "cantilever": frozenset({"length", "thickness", "gamma", "fine_length", "overlap"}),
    "hertz": frozenset({"radius", "fine_half_width", "fine_height", "overlap"}),
    "inclusion": frozenset({"radius", "half_width", "fine_radius", "hole_radius"}),
}


class SamplingError(SolverError):
    pass


@dataclass
class Discretization:
    coarse_h: float = 0.02
    fine_h: float = 0.01
    dt: float = 0.05
    substeps: int = 1
    particles_per_cell: int = 2
    padding: int = 4
    jitter: float = 0.0

    @property
    def fine_dt(self) -> float:
        return self.dt / self.substeps

    def validate(self, mode: ModeType) -> None:
        if not (self.coarse_h > 0 and self.fine_h > 0 and self.dt > 0):
            raise ConfigurationError("Cell sizes and the time step must be positive.")
        if isinstance(self.substeps, bool) or not isinstance(self.substeps, int) or self.substeps < 1:
            raise ConfigurationError(f"discretization.substeps must be an integer >= 1, got {self.substeps!r}.")
        if mode == "dual" and self.fine_h > self.coarse_h:
            raise ConfigurationError(f"fine_h ({self.fine_h}) must not exceed coarse_h ({self.coarse_h}).")
        if self.particles_per_cell < 1 or self.padding < 2:
            raise ConfigurationError("particles_per_cell must be >= 1 and padding >= 2.")
        if not 0.0 <= self.jitter < 0.5:
            raise ConfigurationError(f"discretization.jitter must lie in [0, 0.5), got {self.jitter}.")


@dataclass
class LoadSpec:
    gravity: float = 9.81
    delta: float = 0.0
    ramp_frames: int = 0

    def validate(self) -> None:
        if self.gravity < 0:
            raise ConfigurationError("load.gravity is a magnitude and must be non-negative.")
        if not -1.0 < self.delta < 1.0:
            raise ConfigurationError(f"load.delta must lie in (-1, 1), got {self.delta}.")
        if self.ramp_frames < 0:
            raise ConfigurationError("load.ramp_frames must be non-negative.")


@dataclass
class Termination:
    max_frames: int = 200
    static_tolerance: float = 1e-6

    def validate(self) -> None:
        if self.max_frames < 1 or not self.static_tolerance > 0:
            raise ConfigurationError("termination.max_frames and static_tolerance must be positive.")


@dataclass
class BenchmarkScenario:
    id: ScenarioId
    mode: ModeType = "dual"
    geometry: dict[str, float] = field(default_factory=dict)
    materials: dict[str, MaterialModel] = field(default_factory=dict)
    discretization: Discretization = field(default_factory=Discretization)
    load: LoadSpec = field(default_factory=LoadSpec)
    termination: Termination = field(default_factory=Termination)
    seed: int = 0
    factory: str | None = None

    def __post_init__(self) -> None:
        if not self.materials and self.id in DEFAULT_MATERIALS:
            self.materials = dict(DEFAULT_MATERIALS[self.id])

    def validate(self) -> None:
        if self.id not in SCENARIOS:
            raise ConfigurationError(f"Unknown scenario {self.id!r}; expected one of {', '.join(SCENARIOS)}.")
        if self.mode not in MODES:
            raise ConfigurationError(f"Unknown mode {self.mode!r}; expected 'single' or 'dual'.")
        if self.id == "custom":
            if not self.factory:
                raise ConfigurationError("Custom scenarios need scenario.factory = 'module:callable'.")
        else:
            unknown = set(self.geometry) - GEOMETRY_KEYS[self.id]
            if unknown:
                raise ConfigurationError(f"Unknown geometry keys for {self.id}: {', '.join(sorted(unknown))}.")
        if not self.materials:
            raise ConfigurationError("At least one material section is required.")
        if self.id == "inclusion" and not {"matrix", "inclusion"} <= set(self.materials):
            raise ConfigurationError("The inclusion scenario needs materials named 'matrix' and 'inclusion'.")
        self.discretization.validate(self.mode)
        self.load.validate()
        self.termination.validate()

    def param(self, key: str, default: float) -> float:
        return float(self.geometry.get(key, default))

    def material_index(self, name: str) -> int:
        return list(self.materials).index(name)


@dataclass
class ScenarioLayout:
    body: Shape
    fine_window: Shape | None = None
    coarse_hole: Shape | None = None
    fine_core: Shape | None = None
    constraints: list[GridConstraint] = field(default_factory=list)
    gravity: FloatArray = field(default_factory=lambda: np.zeros(2))
    material_of: Callable[[FloatArray], IntArray] | None = None
    initial_deformation: Callable[[FloatArray, IntArray], FloatArray] | None = None
    extent: tuple[FloatArray, FloatArray] | None = None
    plane: CollisionPlane | None = None
    info: dict[str, float] = field(default_factory=dict)


@dataclass
class FrameRecord:
    frame: int
    schwarz_iterations: int
    residuals: list[tuple[float, float]]
    newton_iterations: int
    velocity_max: float
    wall_s: float
    solve_traces: list[SolveTrace] = field(default_factory=list)


@dataclass
class RunOutcome:
    frames: int
    equilibrium_reached: bool
    reason: str


@dataclass
class ScenarioState:
    scenario: BenchmarkScenario
    layout: ScenarioLayout
    subdomains: dict[str, Subdomain]
    schwarz: SchwarzSettings
    newton: NewtonSettings
    coupler: SchwarzCoupler | None = None
    frames: int = 0
    equilibrium_reached: bool = False
    records: list[FrameRecord] = field(default_factory=list)
    last_results: dict[str, StepResult] = field(default_factory=dict)
    wall_s: float = 0.0

    @property
    def mode(self) -> ModeType:
        return "dual" if self.coupler is not None else "single"

    @property
    def detail_label(self) -> str:
        """The subdomain that resolves the region of interest."""
        return "S" if "S" in self.subdomains else "B"


@dataclass
class FieldSample:
    points: FloatArray
    stress: FloatArray
    displacement: FloatArray
    flagged: BoolArray

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def flagged_count(self) -> int:
        return int(np.count_nonzero(self.flagged))


@dataclass
class ContactProfile:
    x: FloatArray
    pressure: FloatArray
    spacing: float

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def total_force(self) -> float:
        return float(self.pressure.sum() * self.spacing)

    @property
    def center(self) -> float:
        total = float(self.pressure.sum())
        return float(self.x @ self.pressure / total) if total > 0 else 0.0

    @property
    def peak(self) -> float:
        return float(self.pressure.max()) if len(self) else 0.0

    def half_width(self, threshold: float = CONTACT_THRESHOLD) -> float:
        if not len(self) or self.peak <= 0:
            return 0.0
        loaded = self.x[self.pressure > threshold * self.peak]
        return 0.5 * float(loaded.max() - loaded.min()) + 0.5 * self.spacing


@dataclass
class ScenarioSummary:
    metrics: dict[str, float | int | bool | None]
    profiles: dict[str, dict[str, FloatArray]]


def _first_material(scenario: BenchmarkScenario) -> MaterialModel:
    return next(iter(scenario.materials.values()))


def cantilever_layout(scenario: BenchmarkScenario) -> ScenarioLayout:
    d = scenario.discretization
    length = scenario.param("length", 0.5)
    thickness = scenario.param("thickness", 0.05)
    fine_length = scenario.param("fine_length", 0.25 * length)
    overlap = scenario.param("overlap", 2.0 * d.coarse_h)
    if not 0.0 < overlap < fine_length < length:
        raise ConfigurationError("Cantilever needs 0 < overlap < fine_length < length.")
    material = _first_material(scenario)
    args = (material.youngs_modulus, material.poisson_ratio, material.density)
    if "gamma" in scenario.geometry:
        gravity = gravity_for_parameter(scenario.param("gamma", 0.0), *args, length, thickness)
    else:
        gravity = scenario.load.gravity
    far = 2.0 * length
    window = Rectangle((-far, -far), (fine_length, far))
    clamp = Rectangle((-far, -far), (d.coarse_h * (1.0 + 1e-9), far))
    return ScenarioLayout(
        body=Rectangle((0.0, -0.5 * thickness), (length, 0.5 * thickness)),
        fine_window=window,
        coarse_hole=Rectangle((-far, -far), (fine_length - overlap, far)),
        fine_core=window.eroded(SMOOTHING_FACTOR * d.fine_h),
        constraints=[RegionDirichlet(clamp.contains)],
        gravity=np.array([0.0, -gravity]),
        extent=(np.array([-0.2 * length, -1.2 * length]), np.array([1.2 * length, 0.3 * length])),
        info={
            "length": length,
            "thickness": thickness,
            "gravity": gravity,
            "gamma": gravito_bending_parameter(*args, gravity, length, thickness),
        },
    )


def hertz_layout(scenario: BenchmarkScenario) -> ScenarioLayout:
    d = scenario.discretization
    radius = scenario.param("radius", 0.2)
    half_width = scenario.param("fine_half_width", 0.5 * radius)
    height = scenario.param("fine_height", 0.25 * radius)
    overlap = scenario.param("overlap", 2.0 * d.coarse_h)
    if not 0.0 < overlap < min(half_width, height):
        raise ConfigurationError("Hertz overlap must be positive and smaller than the fine window.")
    window = Rectangle((-half_width, -radius), (half_width, height))
    plane = CollisionPlane(point=np.zeros(2), normal=np.array([0.0, 1.0]), mode="slip")
    density = _first_material(scenario).density
    return ScenarioLayout(
        body=LowerHalfDisk((0.0, radius), radius),
        fine_window=window,
        coarse_hole=Rectangle((-half_width + overlap, -radius), (half_width - overlap, height - overlap)),
        fine_core=window.eroded(SMOOTHING_FACTOR * d.fine_h),
        constraints=[plane],
        gravity=np.array([0.0, -scenario.load.gravity]),
        plane=plane,
        info={"radius": radius, "weight": density * scenario.load.gravity * 0.5 * np.pi * radius**2},
    )


def inclusion_layout(scenario: BenchmarkScenario) -> ScenarioLayout:
    d = scenario.discretization
    radius = scenario.param("radius", 0.05)
    half_width = scenario.param("half_width", 4.0 * radius)
    fine_radius = scenario.param("fine_radius", 2.0 * radius)
    hole_radius = scenario.param("hole_radius", 1.5 * radius)
    if not radius < hole_radius < fine_radius < half_width:
        raise ConfigurationError("Inclusion needs radius < hole_radius < fine_radius < half_width.")
    inclusion = Disk((0.0, 0.0), radius)
    inside, outside = scenario.material_index("inclusion"), scenario.material_index("matrix")
    shrink = 1.0 - scenario.load.delta

    def material_of(points: FloatArray) -> IntArray:
        return np.where(inclusion.contains(points), inside, outside).astype(np.intp)

    def initial_deformation(points: FloatArray, material: IntArray) -> FloatArray:
        F = np.tile(np.eye(2), (points.shape[0], 1, 1))
        F[material == inside] *= shrink
        return F

    window = Disk((0.0, 0.0), fine_radius)
    return ScenarioLayout(
        body=Rectangle((-half_width, -half_width), (half_width, half_width)),
        fine_window=window,
        coarse_hole=Disk((0.0, 0.0), hole_radius),
        fine_core=window.eroded(SMOOTHING_FACTOR * d.fine_h),
        material_of=material_of,
        initial_deformation=initial_deformation,
        info={"radius": radius, "half_width": half_width},
    )


LAYOUTS: dict[str, Callable[[BenchmarkScenario], ScenarioLayout]] = {
    "cantilever": cantilever_layout,
    "hertz": hertz_layout,
    "inclusion": inclusion_layout,
}


def seed_particles(
    shape: Shape,
    h: float,
    scenario: BenchmarkScenario,
    layout: ScenarioLayout,
    rng: np.random.Generator,
) -> ParticleSet:
    d = scenario.discretization
    points = lattice_points(shape, h, d.particles_per_cell, d.jitter, rng)
    if points.shape[0] == 0:
        raise ConfigurationError(f"No particles seeded at h={h}; check the scenario geometry.")
    material = layout.material_of(points) if layout.material_of else np.zeros(points.shape[0], dtype=np.intp)
    density = np.array([m.density for m in scenario.materials.values()])
    volume = (h / d.particles_per_cell) ** 2
    particles = ParticleSet.from_positions(points, density[material] * volume, volume, material)
    if layout.initial_deformation is not None:
        particles.F = layout.initial_deformation(points, material)
    return particles


def _make_subdomain(
    label: str,
    shape: Shape,
    h: float,
    dt: float,
    scenario: BenchmarkScenario,
    layout: ScenarioLayout,
    rng: np.random.Generator,
) -> Subdomain:
    particles = seed_particles(shape, h, scenario, layout, rng)
    cover = particles.x if layout.extent is None else np.vstack([particles.x, *layout.extent])
    grid = SubdomainGrid.around(cover, h, padding=scenario.discretization.padding)
    return Subdomain(
        label=label,  # type: ignore[arg-type]
        grid=grid,
        particles=particles,
        materials=list(scenario.materials.values()),
        dt=dt,
        gravity=layout.gravity,
        constraints=list(layout.constraints),
    )


def build_scenario(
    scenario: BenchmarkScenario,
    schwarz: SchwarzSettings | None = None,
    newton: NewtonSettings | None = None,
) -> ScenarioState:
    scenario.validate()
    d = scenario.discretization
    schwarz = schwarz or SchwarzSettings()
    if schwarz.substeps != d.substeps:
        schwarz = dataclasses.replace(schwarz, substeps=d.substeps)
    newton = newton or NewtonSettings()

    if scenario.id == "custom":
        state = import_factory(scenario.factory)(scenario, schwarz, newton)
        if not isinstance(state, ScenarioState):
            raise ConfigurationError(f"Scenario factory {scenario.factory!r} did not return a ScenarioState.")
        return state

    layout = LAYOUTS[scenario.id](scenario)
    rng = np.random.default_rng(scenario.seed)
    if scenario.mode == "single":
        single = _make_subdomain("B", layout.body, d.fine_h, d.fine_dt, scenario, layout, rng)
        logger.info("Built %s (single): %d particles.", scenario.id, len(single.particles))
        return ScenarioState(scenario, layout, {"B": single}, schwarz, newton)

    assert layout.fine_window is not None and layout.coarse_hole is not None
    fine_shape = Intersection(layout.body, layout.fine_window)
    coarse_shape = Difference(layout.body, layout.coarse_hole)
    fine = _make_subdomain("S", fine_shape, d.fine_h, d.fine_dt, scenario, layout, rng)
    coarse = _make_subdomain("B", coarse_shape, d.coarse_h, d.dt, scenario, layout, rng)
    if not np.any(~layout.coarse_hole.contains(fine.particles.x)):
        raise CouplingConfigurationError(f"The {scenario.id} subdomains do not overlap.")
    for subdomain in (coarse, fine):
        width = schwarz.layer_width if schwarz.layer_width is not None else subdomain.h
        mark_boundary_particles(subdomain, width, body=layout.body.contains)
    coupler = SchwarzCoupler(coarse, fine, schwarz, newton)
    logger.info(
        "Built %s (dual): %d coarse and %d fine particles, M=%d.",
        scenario.id,
        len(coarse.particles),
        len(fine.particles),
        d.substeps,
    )
    return ScenarioState(scenario, layout, {"B": coarse, "S": fine}, schwarz, newton, coupler=coupler)


def _velocity_max(result: StepResult) -> float:
    return float(np.max(np.abs(result.velocity))) if result.velocity.size else 0.0


def _advance(state: ScenarioState) -> FrameRecord:
    started = time.perf_counter()
    if state.coupler is not None:
        report = advance_frame(state.coupler)
        state.last_results = dict(state.coupler.last_results)
        return FrameRecord(
            frame=state.frames,
            schwarz_iterations=report.iterations,
            residuals=report.residuals,
            newton_iterations=report.newton_iterations,
            velocity_max=report.velocity_max,
            wall_s=time.perf_counter() - started,
            solve_traces=report.solve_traces,
        )
    result = advance_subdomain(state.subdomains["B"], state.newton, step=state.frames)
    state.last_results = {"B": result}
    return FrameRecord(
        frame=state.frames,
        schwarz_iterations=0,
        residuals=[],
        newton_iterations=result.iterations,
        velocity_max=_velocity_max(result),
        wall_s=time.perf_counter() - started,
        solve_traces=[SolveTrace("B", 0, 0, result.trace)],
    )


def run_to_equilibrium(
    state: ScenarioState,
    on_frame: Callable[[FrameRecord], None] | None = None,
) -> RunOutcome:
    """
    Advance frames until the largest grid velocity component on every grid
    drops below the static tolerance, or the frame cap is hit.
    """
    termination = state.scenario.termination
    ramp = state.scenario.load.ramp_frames
    started = time.perf_counter()
    try:
        while state.frames < termination.max_frames:
            scale = 1.0 if ramp <= 0 else min(1.0, (state.frames + 1) / ramp)
            for subdomain in state.subdomains.values():
                subdomain.gravity_scale = scale
            record = _advance(state)
            state.records.append(record)
            state.frames += 1
            logger.debug("Frame %d: max grid velocity %.3e.", record.frame, record.velocity_max)
            if on_frame is not None:
                on_frame(record)
            if scale == 1.0 and record.velocity_max < termination.static_tolerance:
                state.equilibrium_reached = True
                break
    finally:
        state.wall_s += time.perf_counter() - started

    if state.equilibrium_reached:
        logger.info("Equilibrium reached after %d frames.", state.frames)
        return RunOutcome(state.frames, True, "equilibrium")
    logger.warning("Frame cap of %d reached without equilibrium.", termination.max_frames)
    return RunOutcome(state.frames, False, "frame_cap")


def particle_stress(subdomain: Subdomain) -> FloatArray:
    """Per-particle Cauchy stress as `(sigma_xx, sigma_yy, sigma_xy)`."""
    F = subdomain.particles.F
    mu, lam = subdomain.lame_parameters()
    sigma = cauchy_from_piola(F, neo_hookean_stress(F, mu, lam))
    return np.stack([sigma[:, 0, 0], sigma[:, 1, 1], 0.5 * (sigma[:, 0, 1] + sigma[:, 1, 0])], axis=-1)


def sample_stress(subdomain: Subdomain, points: FloatArray, smoothing_radius: float) -> FieldSample:
    """
    Mass-weighted kernel average of particle stress and displacement at `points`.
    Points with no particle inside the smoothing radius come back flagged, with NaN values.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    count = points.shape[0]
    stress = np.full((count, 3), np.nan)
    displacement = np.full((count, 2), np.nan)
    if count == 0:
        return FieldSample(points, stress, displacement, np.zeros(0, dtype=bool))

    particles = subdomain.particles
    tree = spatial.cKDTree(particles.x)
    neighbours = tree.query_ball_point(points, r=smoothing_radius, p=np.inf)
    sizes = np.array([len(n) for n in neighbours], dtype=np.intp)
    rows = np.repeat(np.arange(count), sizes)
    cols = np.fromiter(itertools.chain.from_iterable(neighbours), dtype=np.intp, count=int(sizes.sum()))
    cell = smoothing_radius / KERNEL.support
    weights = particles.mass[cols] * KERNEL.weight((points[rows] - particles.x[cols]) / cell)
    total = np.bincount(rows, weights=weights, minlength=count)
    flagged = total <= 0.0

    def average(values: FloatArray, out: FloatArray) -> None:
        for c in range(values.shape[1]):
            summed = np.bincount(rows, weights=weights * values[cols, c], minlength=count)
            column = np.full(count, np.nan)
            np.divide(summed, total, out=column, where=~flagged)
            out[:, c] = column

    average(particle_stress(subdomain), stress)
    average(particles.x - particles.x0, displacement)
    return FieldSample(points, stress, displacement, flagged)


def sample_state(state: ScenarioState, points: FloatArray) -> FieldSample:
    """Sample the fine subdomain inside its core and the coarse one elsewhere."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    coarse = state.subdomains["B"]
    if state.coupler is None or state.layout.fine_core is None:
        return sample_stress(coarse, points, SMOOTHING_FACTOR * coarse.h)
    fine = state.subdomains["S"]
    core = state.layout.fine_core.contains(points)
    inner = sample_stress(fine, points[core], SMOOTHING_FACTOR * fine.h)
    outer = sample_stress(coarse, points[~core], SMOOTHING_FACTOR * coarse.h)
    stress = np.empty((points.shape[0], 3))
    displacement = np.empty((points.shape[0], 2))
    flagged = np.empty(points.shape[0], dtype=bool)
    for part, mask in ((inner, core), (outer, ~core)):
        stress[mask] = part.stress
        displacement[mask] = part.displacement
        flagged[mask] = part.flagged
    return FieldSample(points, stress, displacement, flagged)


def l2_stress_error(
    sample: FieldSample,
    oracle: FloatArray,
    components: tuple[int, ...] | None = None,
    weights: FloatArray | None = None,
) -> float:
    """
    Relative L2 distance between sampled and reference stress, over the
    unflagged points. Shear enters the Frobenius norm twice.
    """
    keep = ~sample.flagged
    if not keep.any():
        raise SamplingError("Every sample point is flagged; no stress error can be formed.")
    chosen = list(components) if components is not None else [0, 1, 2]
    factor = np.array([1.0, 1.0, 2.0])[chosen]
    area = np.ones(len(sample)) if weights is None else np.asarray(weights, dtype=np.float64)
    reference = np.asarray(oracle, dtype=np.float64)[keep][:, chosen]
    diff = sample.stress[keep][:, chosen] - reference
    numerator = float(np.sum(area[keep] * np.sum(factor * diff * diff, axis=1)))
    denominator = float(np.sum(area[keep] * np.sum(factor * reference * reference, axis=1)))
    if denominator == 0.0:
        return float(np.sqrt(numerator))
    return float(np.sqrt(numerator / denominator))


def hertz_contact_pressure(grid: SubdomainGrid, plane: CollisionPlane, result: StepResult | None) -> ContactProfile:
    """Normal reaction of the constrained nodes on or behind the plane, summed per column over the cell size."""
    empty = ContactProfile(np.zeros(0), np.zeros(0), grid.h)
    if result is None or result.constrained.size == 0:
        return empty
    positions = grid.positions[result.nodes]
    behind = (positions - plane.point) @ plane.normal <= 1e-9 * grid.h
    select = result.constrained & behind
    if not select.any():
        return empty
    force = result.reaction[select] @ plane.normal
    tangent = np.array([plane.normal[1], -plane.normal[0]])
    column = np.rint(((positions[select] - plane.point) @ tangent) / grid.h).astype(np.intp)
    keys, inverse = np.unique(column, return_inverse=True)
    pressure = np.bincount(inverse, weights=force, minlength=keys.shape[0]) / grid.h
    return ContactProfile(keys * grid.h, pressure, grid.h)


def pressure_profile_error(profile: ContactProfile, solution: HertzSolution) -> float:
    reference = solution.pressure(profile.x - profile.center)
    denominator = float(np.linalg.norm(reference))
    return float(np.linalg.norm(profile.pressure - reference)) / denominator


def centerline(state: ScenarioState) -> tuple[FloatArray, FloatArray]:
    """Deformed centerline of a beam: mean positions of the middle particle rows, ordered by reference x."""
    x0 = np.vstack([s.particles.x0 for s in state.subdomains.values()])
    x = np.vstack([s.particles.x for s in state.subdomains.values()])
    offset = np.abs(x0[:, 1])
    middle = offset <= offset.min() + 1e-9
    keys, inverse = np.unique(np.round(x0[middle, 0], 12), return_inverse=True)
    counts = np.bincount(inverse)
    mean_x = np.bincount(inverse, weights=x[middle, 0]) / counts
    mean_y = np.bincount(inverse, weights=x[middle, 1]) / counts
    order = np.argsort(keys)
    return mean_x[order], mean_y[order]


def centerline_aspect_ratio(state: ScenarioState) -> float:
    x, y = centerline(state)
    return float(np.max(np.abs(y)) / np.max(x))


def interior_pressure(state: ScenarioState) -> float:
    subdomain = state.subdomains[state.detail_label]
    inside = subdomain.particles.material == state.scenario.material_index("inclusion")
    stress = particle_stress(subdomain)[inside]
    return float(-np.mean(0.5 * (stress[:, 0] + stress[:, 1])))


def inclusion_solution(scenario: BenchmarkScenario) -> InclusionSolution:
    inner, outer = scenario.materials["inclusion"], scenario.materials["matrix"]
    return InclusionSolution(
        radius=scenario.param("radius", 0.05),
        youngs_in=inner.youngs_modulus,
        poisson_in=inner.poisson_ratio,
        youngs_out=outer.youngs_modulus,
        poisson_out=outer.poisson_ratio,
        delta=scenario.load.delta,
    )


def inclusion_profile_points(state: ScenarioState) -> FloatArray:
    half_width = state.layout.info["half_width"]
    h = state.scenario.discretization.fine_h
    margin = 2.0 * state.subdomains["B"].h
    x = np.arange(-half_width + margin, half_width - margin + 0.5 * h, h)
    return np.stack([x, np.zeros_like(x)], axis=-1)


def _summarize_cantilever(state: ScenarioState) -> ScenarioSummary:
    info = state.layout.info
    x, y = centerline(state)
    measured = float(np.max(np.abs(y)) / np.max(x))
    oracle = solve_elastica(info["gamma"])
    error = abs(measured - oracle.aspect_ratio) / oracle.aspect_ratio
    return ScenarioSummary(
        metrics={
            "gamma": info["gamma"],
            "aspect_ratio": measured,
            "oracle_aspect_ratio": oracle.aspect_ratio,
            "l2_error": error,
        },
        profiles={
            "centerline": {"x": x, "y": y},
            "elastica": {"x": oracle.x * info["length"], "y": -oracle.y * info["length"]},
        },
    )


def _summarize_hertz(state: ScenarioState) -> ScenarioSummary:
    assert state.layout.plane is not None
    label = state.detail_label
    profile = hertz_contact_pressure(
        state.subdomains[label].grid, state.layout.plane, state.last_results.get(label)
    )
    metrics: dict[str, float | int | bool | None] = {
        "contact_force": profile.total_force,
        "body_weight": state.layout.info["weight"],
        "l2_error": None,
    }
    if len(profile) == 0 or profile.total_force <= 0:
        return ScenarioSummary(metrics, {})
    material = _first_material(state.scenario)
    solution = HertzSolution.from_parameters(
        profile.total_force, state.layout.info["radius"], material.youngs_modulus, material.poisson_ratio
    )
    metrics.update(
        max_pressure=profile.peak,
        oracle_max_pressure=solution.max_pressure,
        half_width=profile.half_width(),
        oracle_half_width=solution.half_width,
        l2_error=pressure_profile_error(profile, solution),
    )
    profiles = {
        "contact_pressure": {
            "x": profile.x,
            "pressure": profile.pressure,
            "oracle": solution.pressure(profile.x - profile.center),
        }
    }
    return ScenarioSummary(metrics, profiles)


def _summarize_inclusion(state: ScenarioState) -> ScenarioSummary:
    solution = inclusion_solution(state.scenario)
    points = inclusion_profile_points(state)
    sample = sample_state(state, points)
    oracle = inclusion_stress(solution, points)
    pressure = interior_pressure(state)
    return ScenarioSummary(
        metrics={
            "oracle_pressure": solution.pressure,
            "interior_pressure": pressure,
            "pressure_error": abs(pressure - solution.pressure) / solution.pressure if solution.pressure else None,
            "flagged_samples": sample.flagged_count,
            "l2_error": l2_stress_error(sample, oracle, components=(1,)),
        },
        profiles={
            "sigma_yy_centerline": {
                "x": points[:, 0],
                "sigma_yy": sample.stress[:, 1],
                "oracle": oracle[:, 1],
                "flagged": sample.flagged.astype(np.float64),
            }
        },
    )


SUMMARIES: dict[str, Callable[[ScenarioState], ScenarioSummary]] = {
    "cantilever": _summarize_cantilever,
    "hertz": _summarize_hertz,
    "inclusion": _summarize_inclusion,
}


def summarize(state: ScenarioState) -> ScenarioSummary:
    summarizer = SUMMARIES.get(state.scenario.id)
    summary = summarizer(state) if summarizer else ScenarioSummary({"l2_error": None}, {})
    summary.metrics.update(
        frames=state.frames,
        equilibrium_reached=state.equilibrium_reached,
        total_wall_s=state.wall_s,
        particles=sum(len(s.particles) for s in state.subdomains.values()),
    )
    return summary
