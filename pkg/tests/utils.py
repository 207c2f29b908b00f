from __future__ import annotations

import os
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from schwarzmpm.constitutive import MaterialModel
from schwarzmpm.fields import ParticleSet, Subdomain, SubdomainGrid
from schwarzmpm.geometry import Rectangle, lattice_points

TINY_BAR = """\
[scenario]
id = custom
mode = single
factory = tests.importer.factories:tiny_bar

[material.bar]
youngs_modulus = 1e4
poisson_ratio = 0.3
density = 1000

[load]
gravity = {gravity}

[termination]
max_frames = {max_frames}
"""


def make_block(
    lower: tuple[float, float],
    upper: tuple[float, float],
    h: float,
    material: MaterialModel,
    label: str = "B",
    dt: float = 1e-2,
    gravity: tuple[float, float] = (0.0, -9.81),
    per_cell: int = 2,
    padding: int = 4,
) -> Subdomain:
    """A rectangular block of lattice-seeded particles with its own padded grid."""
    points = lattice_points(Rectangle(lower, upper), h, per_cell)
    volume = (h / per_cell) ** 2
    particles = ParticleSet.from_positions(points, material.density * volume, volume)
    return Subdomain(
        label=label,  # type: ignore[arg-type]
        grid=SubdomainGrid.around(points, h, padding=padding),
        particles=particles,
        materials=[material],
        dt=dt,
        gravity=np.array(gravity),
    )


@contextmanager
def as_cwd(path: Path) -> Iterator[None]:
    """Changes working directory and returns to previous on exit."""
    prev_cwd = Path.cwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(prev_cwd)


@contextmanager
def load_env_var(key: str, value: str) -> Iterator[None]:
    old_environ = dict(os.environ)
    os.environ[key] = value
    try:
        yield
    finally:
        os.environ.clear()
        os.environ.update(old_environ)
