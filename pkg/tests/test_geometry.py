from __future__ import annotations

import numpy as np
import pytest

from schwarzmpm._exceptions import ConfigurationError
from schwarzmpm.geometry import Difference, Disk, Intersection, LowerHalfDisk, Rectangle, lattice_points


def test_rectangle_contains_its_boundary() -> None:
    rectangle = Rectangle((0.0, 0.0), (1.0, 0.5))
    points = np.array([[0.0, 0.0], [1.0, 0.5], [0.5, 0.6], [-0.1, 0.2]])
    assert rectangle.contains(points).tolist() == [True, True, False, False]


def test_degenerate_shapes_are_rejected() -> None:
    with pytest.raises(ConfigurationError):
        Rectangle((0.0, 0.0), (0.0, 1.0))
    with pytest.raises(ConfigurationError):
        Disk((0.0, 0.0), 0.0)


def test_erosion() -> None:
    assert Rectangle((0.0, 0.0), (1.0, 1.0)).eroded(0.1) == Rectangle((0.1, 0.1), (0.9, 0.9))
    assert Disk((0.0, 0.0), 1.0).eroded(0.25).radius == 0.75


def test_lower_half_disk() -> None:
    shape = LowerHalfDisk((0.0, 1.0), 1.0)
    points = np.array([[0.0, 0.5], [0.0, 1.5], [0.9, 0.1]])
    assert shape.contains(points).tolist() == [True, False, False]
    lower, upper = shape.bounds()
    assert np.allclose(lower, [-1.0, 0.0])
    assert np.allclose(upper, [1.0, 1.0])


def test_composites() -> None:
    square = Rectangle((-1.0, -1.0), (1.0, 1.0))
    hole = Disk((0.0, 0.0), 0.5)
    points = np.array([[0.0, 0.0], [0.9, 0.9], [2.0, 0.0]])

    assert Difference(square, hole).contains(points).tolist() == [False, True, False]
    assert Intersection(square, hole).contains(points).tolist() == [True, False, False]
    lower, upper = Intersection(square, hole).bounds()
    assert np.allclose(lower, [-0.5, -0.5]) and np.allclose(upper, [0.5, 0.5])


def test_lattice_points_fill_cells() -> None:
    points = lattice_points(Rectangle((0.0, 0.0), (0.2, 0.1)), 0.05, 2)
    assert points.shape == (8 * 4, 2)
    assert np.allclose(points.min(axis=0), [0.0125, 0.0125])
    assert np.allclose(points.max(axis=0), [0.1875, 0.0875])


def test_lattice_jitter_is_seeded_and_bounded() -> None:
    shape = Rectangle((0.0, 0.0), (0.2, 0.2))
    regular = lattice_points(shape, 0.05, 2)
    first = lattice_points(shape, 0.05, 2, jitter=0.25, rng=np.random.default_rng(7))
    second = lattice_points(shape, 0.05, 2, jitter=0.25, rng=np.random.default_rng(7))

    assert np.array_equal(first, second)
    assert np.max(np.abs(first - regular)) <= 0.25 * 0.025
    with pytest.raises(ConfigurationError):
        lattice_points(shape, 0.05, 2, jitter=0.5)
    with pytest.raises(ConfigurationError):
        lattice_points(shape, 0.05, 0)
