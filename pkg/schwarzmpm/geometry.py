from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from schwarzmpm._exceptions import ConfigurationError
from schwarzmpm._types import BoolArray, FloatArray


class Shape(Protocol):
    def contains(self, points: FloatArray) -> BoolArray: ...

    def bounds(self) -> tuple[FloatArray, FloatArray]: ...


@dataclass(frozen=True)
class Rectangle:
    lower: tuple[float, float]
    upper: tuple[float, float]

    def __post_init__(self) -> None:
        if not (self.upper[0] > self.lower[0] and self.upper[1] > self.lower[1]):
            raise ConfigurationError(f"Degenerate rectangle {self.lower} - {self.upper}.")

    def contains(self, points: FloatArray) -> BoolArray:
        p = np.atleast_2d(points)
        return np.all((p >= np.array(self.lower)) & (p <= np.array(self.upper)), axis=-1)

    def bounds(self) -> tuple[FloatArray, FloatArray]:
        return np.array(self.lower, dtype=np.float64), np.array(self.upper, dtype=np.float64)

    def eroded(self, distance: float) -> Rectangle:
        return Rectangle(
            (self.lower[0] + distance, self.lower[1] + distance),
            (self.upper[0] - distance, self.upper[1] - distance),
        )


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ConfigurationError(f"Disk radius must be positive, got {self.radius}.")

    def contains(self, points: FloatArray) -> BoolArray:
        offset = np.atleast_2d(points) - np.array(self.center)
        return np.einsum("...a,...a->...", offset, offset) <= self.radius**2

    def bounds(self) -> tuple[FloatArray, FloatArray]:
        c = np.array(self.center, dtype=np.float64)
        return c - self.radius, c + self.radius

    def eroded(self, distance: float) -> Disk:
        return Disk(self.center, self.radius - distance)


@dataclass(frozen=True)
class LowerHalfDisk:
    """The half of a disk below its center."""

    center: tuple[float, float]
    radius: float

    def contains(self, points: FloatArray) -> BoolArray:
        p = np.atleast_2d(points)
        return Disk(self.center, self.radius).contains(p) & (p[..., 1] <= self.center[1])

    def bounds(self) -> tuple[FloatArray, FloatArray]:
        c = np.array(self.center, dtype=np.float64)
        return c - self.radius, c + np.array([self.radius, 0.0])


@dataclass(frozen=True)
class Difference:
    base: Shape
    removed: Shape

    def contains(self, points: FloatArray) -> BoolArray:
        return self.base.contains(points) & ~self.removed.contains(points)

    def bounds(self) -> tuple[FloatArray, FloatArray]:
        return self.base.bounds()


@dataclass(frozen=True)
class Intersection:
    first: Shape
    second: Shape

    def contains(self, points: FloatArray) -> BoolArray:
        return self.first.contains(points) & self.second.contains(points)

    def bounds(self) -> tuple[FloatArray, FloatArray]:
        lo1, hi1 = self.first.bounds()
        lo2, hi2 = self.second.bounds()
        return np.maximum(lo1, lo2), np.minimum(hi1, hi2)


def lattice_points(
    shape: Shape,
    h: float,
    per_cell: int,
    jitter: float = 0.0,
    rng: np.random.Generator | None = None,
) -> FloatArray:
    """
    Points of the sub-cell lattice `x = (i + (k + 1/2) / per_cell) h` that
    fall inside `shape`, optionally displaced by up to `jitter` spacings.
    """
    if per_cell < 1:
        raise ConfigurationError(f"particles_per_cell must be at least 1, got {per_cell}.")
    if not 0.0 <= jitter < 0.5:
        raise ConfigurationError(f"Seeding jitter must lie in [0, 0.5), got {jitter}.")
    lower, upper = shape.bounds()
    spacing = h / per_cell
    first = np.floor(lower / h).astype(np.intp) * per_cell
    last = np.ceil(upper / h).astype(np.intp) * per_cell
    axes = [(np.arange(first[a], last[a]) + 0.5) * spacing for a in range(2)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
    points = grid[shape.contains(grid)]
    if jitter > 0.0:
        rng = rng if rng is not None else np.random.default_rng(0)
        points = points + rng.uniform(-jitter, jitter, size=points.shape) * spacing
    return points
