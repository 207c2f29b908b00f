from __future__ import annotations

import logging
import time
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple, Protocol

import numpy as np

from schwarzmpm._exceptions import ConfigurationError, SolverError
from schwarzmpm._types import BoolArray, FloatArray, IntArray, SubdomainLabel

if TYPE_CHECKING:
    from schwarzmpm.constitutive import MaterialModel

STENCIL_SIZE = 9
ACTIVITY_FACTOR = 1e-12
DEFAULT_PADDING = 4

logger = logging.getLogger("schwarzmpm.run")


class OutOfDomainError(SolverError):
    def __init__(self, index: int, position: FloatArray) -> None:
        self.index = index
        x, y = (float(c) for c in position)
        super().__init__(f"Particle {index} at ({x:.6g}, {y:.6g}) is outside the safe interior of the grid.")


class QuadraticBSpline:
    """
    Tensor-product quadratic B-spline.

    Offsets are measured in cell units, `(x - x_i) / h`. The support is 1.5 cells
    per axis, so every evaluation point touches a 3x3 block of nodes.
    """

    support = 1.5

    @staticmethod
    def basis(u: FloatArray) -> FloatArray:
        a = np.abs(u)
        return np.where(a < 0.5, 0.75 - a * a, np.where(a < 1.5, 0.5 * (1.5 - a) ** 2, 0.0))

    @staticmethod
    def basis_derivative(u: FloatArray) -> FloatArray:
        a = np.abs(u)
        return np.where(a < 0.5, -2.0 * u, np.where(a < 1.5, -np.sign(u) * (1.5 - a), 0.0))

    def weight(self, offset: FloatArray) -> FloatArray:
        o = np.asarray(offset, dtype=np.float64)
        return self.basis(o[..., 0]) * self.basis(o[..., 1])

    def weight_gradient(self, offset: FloatArray) -> FloatArray:
        """Derivative of `weight` with respect to the offset (cell units)."""
        o = np.asarray(offset, dtype=np.float64)
        nx, ny = self.basis(o[..., 0]), self.basis(o[..., 1])
        dx, dy = self.basis_derivative(o[..., 0]), self.basis_derivative(o[..., 1])
        return np.stack([dx * ny, nx * dy], axis=-1)


Kernel = QuadraticBSpline
KERNEL = QuadraticBSpline()


class StencilEntry(NamedTuple):
    index: tuple[int, int]
    weight: float
    gradient: FloatArray


@dataclass
class Stencil:
    """Kernel evaluations of a point cloud against one grid, 9 nodes per point."""

    nodes: IntArray
    weights: FloatArray
    gradients: FloatArray
    valid: BoolArray

    def __len__(self) -> int:
        return self.nodes.shape[0]


@dataclass
class SubdomainGrid:
    origin: FloatArray
    h: float
    shape: tuple[int, int]
    mass_threshold: float = 0.0
    mass: FloatArray = field(init=False, repr=False)
    momentum: FloatArray = field(init=False, repr=False)
    velocity: FloatArray = field(init=False, repr=False)
    active: BoolArray = field(init=False, repr=False)
    schwarz_receiver: BoolArray = field(init=False, repr=False)
    collision_dirichlet: BoolArray = field(init=False, repr=False)
    prescribed_velocity: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.shape = (int(self.shape[0]), int(self.shape[1]))
        if self.h <= 0:
            raise ConfigurationError(f"Grid cell size must be positive, got {self.h}.")
        if min(self.shape) < 3:
            raise ConfigurationError(f"Grid needs at least 3 nodes per axis, got {self.shape}.")
        index = np.indices(self.shape).reshape(2, -1).T
        self._positions = self.origin + self.h * index
        self.reset()

    @classmethod
    def around(
        cls,
        positions: FloatArray,
        h: float,
        padding: int = DEFAULT_PADDING,
        mass_threshold: float = 0.0,
    ) -> SubdomainGrid:
        """
        Bounding-box grid of a point cloud, padded by `padding` cells per side.
        The lattice is aligned with integer multiples of `h`.
        """
        lower = np.floor(positions.min(axis=0) / h).astype(np.intp) - padding
        upper = np.ceil(positions.max(axis=0) / h).astype(np.intp) + padding
        shape = upper - lower + 1
        return cls(origin=lower * h, h=h, shape=(int(shape[0]), int(shape[1])), mass_threshold=mass_threshold)

    @property
    def num_nodes(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def positions(self) -> FloatArray:
        return self._positions

    @property
    def dirichlet(self) -> BoolArray:
        return self.schwarz_receiver | self.collision_dirichlet

    def node_index(self, ix: int, iy: int) -> int:
        return ix * self.shape[1] + iy

    def reset(self) -> None:
        n = self.num_nodes
        self.mass = np.zeros(n)
        self.momentum = np.zeros((n, 2))
        self.velocity = np.zeros((n, 2))
        self.active = np.zeros(n, dtype=bool)
        self.clear_constraints()

    def clear_constraints(self) -> None:
        n = self.num_nodes
        self.schwarz_receiver = np.zeros(n, dtype=bool)
        self.collision_dirichlet = np.zeros(n, dtype=bool)
        self.prescribed_velocity = np.zeros((n, 2))

    def active_nodes(self) -> IntArray:
        return np.flatnonzero(self.active)


def compute_stencil(positions: FloatArray, grid: SubdomainGrid, strict: bool = True) -> Stencil:
    """
    Evaluate the kernel of every point against its 3x3 node block.

    With `strict=False` points whose block leaves the lattice get zero weights
    and `valid=False` instead of raising.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    nx, ny = grid.shape
    xi = (pos - grid.origin) / grid.h
    finite = np.all(np.isfinite(xi), axis=1)
    base = np.floor(np.where(finite[:, None], xi, 0.0) - 0.5).astype(np.intp)
    upper = np.array([nx - 3, ny - 3])
    valid = finite & np.all((base >= 0) & (base <= upper), axis=1)
    if not valid.all():
        if strict:
            bad = int(np.flatnonzero(~valid)[0])
            raise OutOfDomainError(bad, pos[bad])
        base[~valid] = 0

    offsets = np.arange(3)
    u = xi[:, None, :] - (base[:, None, :] + offsets[None, :, None])
    u[~valid] = 0.0
    n = KERNEL.basis(u)
    dn = KERNEL.basis_derivative(u)
    weights = n[:, :, None, 0] * n[:, None, :, 1]
    grad_x = dn[:, :, None, 0] * n[:, None, :, 1] / grid.h
    grad_y = n[:, :, None, 0] * dn[:, None, :, 1] / grid.h
    ix = base[:, None, None, 0] + offsets[None, :, None]
    iy = base[:, None, None, 1] + offsets[None, None, :]

    count = pos.shape[0]
    weights = weights.reshape(count, STENCIL_SIZE)
    gradients = np.stack([grad_x, grad_y], axis=-1).reshape(count, STENCIL_SIZE, 2)
    weights[~valid] = 0.0
    gradients[~valid] = 0.0
    nodes = (ix * ny + iy).reshape(count, STENCIL_SIZE)
    return Stencil(nodes=nodes, weights=weights, gradients=gradients, valid=valid)


def kernel_weights(particle_position: FloatArray, grid: SubdomainGrid) -> list[StencilEntry]:
    stencil = compute_stencil(np.asarray(particle_position, dtype=np.float64)[None, :], grid)
    entries = []
    for k in range(STENCIL_SIZE):
        ix, iy = divmod(int(stencil.nodes[0, k]), grid.shape[1])
        entries.append(StencilEntry((ix, iy), float(stencil.weights[0, k]), stencil.gradients[0, k].copy()))
    return entries


def apic_inertia_tensor(h: float) -> FloatArray:
    if h <= 0:
        raise ConfigurationError(f"Cell size must be positive, got {h}.")
    return 0.25 * h * h * np.eye(2)


@dataclass
class ParticleSet:
    mass: FloatArray
    volume: FloatArray
    x: FloatArray
    v: FloatArray
    F: FloatArray
    B: FloatArray
    material: IntArray
    is_boundary: BoolArray
    x0: FloatArray

    @classmethod
    def from_positions(
        cls,
        positions: FloatArray,
        mass: FloatArray | float,
        volume: FloatArray | float,
        material: IntArray | int = 0,
        velocity: FloatArray | None = None,
    ) -> ParticleSet:
        x = np.array(positions, dtype=np.float64).reshape(-1, 2)
        count = x.shape[0]
        return cls(
            mass=np.broadcast_to(np.asarray(mass, dtype=np.float64), (count,)).copy(),
            volume=np.broadcast_to(np.asarray(volume, dtype=np.float64), (count,)).copy(),
            x=x,
            v=np.zeros((count, 2)) if velocity is None else np.array(velocity, dtype=np.float64).reshape(count, 2),
            F=np.tile(np.eye(2), (count, 1, 1)),
            B=np.zeros((count, 2, 2)),
            material=np.broadcast_to(np.asarray(material, dtype=np.intp), (count,)).copy(),
            is_boundary=np.zeros(count, dtype=bool),
            x0=x.copy(),
        )

    def __len__(self) -> int:
        return self.x.shape[0]

    def copy(self) -> ParticleSet:
        return ParticleSet(
            mass=self.mass.copy(),
            volume=self.volume.copy(),
            x=self.x.copy(),
            v=self.v.copy(),
            F=self.F.copy(),
            B=self.B.copy(),
            material=self.material.copy(),
            is_boundary=self.is_boundary.copy(),
            x0=self.x0.copy(),
        )

    def subset(self, mask: BoolArray) -> ParticleSet:
        return ParticleSet(
            mass=self.mass[mask],
            volume=self.volume[mask],
            x=self.x[mask],
            v=self.v[mask],
            F=self.F[mask],
            B=self.B[mask],
            material=self.material[mask],
            is_boundary=self.is_boundary[mask],
            x0=self.x0[mask],
        )

    @property
    def determinant(self) -> FloatArray:
        F = self.F
        return F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]

    def validate(self) -> None:
        if len(self) == 0:
            raise ConfigurationError("Particle set is empty.")
        if np.any(self.mass <= 0) or np.any(self.volume <= 0):
            raise ConfigurationError("Particle masses and volumes must be positive.")
        if np.any(self.determinant <= 0):
            bad = int(np.flatnonzero(self.determinant <= 0)[0])
            raise ConfigurationError(f"Particle {bad} starts with a non-positive deformation determinant.")

    def activity_threshold(self) -> float:
        return ACTIVITY_FACTOR * float(np.median(self.mass))


class GridConstraint(Protocol):
    def apply(self, grid: SubdomainGrid) -> None: ...


@dataclass
class Subdomain:
    label: SubdomainLabel
    grid: SubdomainGrid
    particles: ParticleSet
    materials: list[MaterialModel]
    dt: float
    gravity: FloatArray
    constraints: list[GridConstraint] = field(default_factory=list)
    gravity_scale: float = 1.0
    stencil: Stencil | None = field(default=None, repr=False)
    timings: dict[str, float] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.gravity = np.asarray(self.gravity, dtype=np.float64)
        if self.dt <= 0:
            raise ConfigurationError(f"Subdomain {self.label} needs a positive time step, got {self.dt}.")
        if not self.materials:
            raise ConfigurationError(f"Subdomain {self.label} has an empty material table.")
        if int(self.particles.material.max(initial=0)) >= len(self.materials):
            raise ConfigurationError(f"Subdomain {self.label} references an unknown material index.")
        self.particles.validate()
        if self.grid.mass_threshold <= 0:
            self.grid.mass_threshold = self.particles.activity_threshold()

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def effective_gravity(self) -> FloatArray:
        return self.gravity_scale * self.gravity

    def lame_parameters(self) -> tuple[FloatArray, FloatArray]:
        mu = np.array([m.lame_mu for m in self.materials])
        lam = np.array([m.lame_lambda for m in self.materials])
        index = self.particles.material
        return mu[index], lam[index]

    def characteristic_force(self) -> float:
        """Total weight plus the stiffest shear modulus times the cell size."""
        weight = float(self.particles.mass.sum()) * float(np.linalg.norm(self.effective_gravity))
        stiffness = max(m.lame_mu for m in self.materials) * self.grid.h
        return weight + stiffness

    def apply_constraints(self) -> None:
        for constraint in self.constraints:
            constraint.apply(self.grid)

    @contextmanager
    def timed(self, phase: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[phase] = self.timings.get(phase, 0.0) + time.perf_counter() - start


def substep_ratio(coarse: Subdomain, fine: Subdomain) -> int:
    """Integer sub-cycling ratio `M = dt_coarse / dt_fine`, validated."""
    if fine.h > coarse.h * (1.0 + 1e-12):
        raise ConfigurationError(f"Fine cell size {fine.h} exceeds coarse cell size {coarse.h}.")
    ratio = coarse.dt / fine.dt
    substeps = int(round(ratio))
    if substeps < 1 or abs(ratio - substeps) > 1e-9 * ratio:
        raise ConfigurationError(f"Coarse/fine time step ratio {ratio:.12g} is not a positive integer.")
    return substeps
