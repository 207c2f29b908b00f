from __future__ import annotations

import logging

import numpy as np

from schwarzmpm._types import FloatArray
from schwarzmpm.constitutive import InversionError, determinant
from schwarzmpm.fields import OutOfDomainError, ParticleSet, Stencil, SubdomainGrid, compute_stencil

logger = logging.getLogger("schwarzmpm.run")


def scatter(nodes: np.ndarray, values: FloatArray, size: int) -> FloatArray:
    """Sum `values` into `size` slots, in input order."""
    flat = nodes.ravel()
    if values.ndim == nodes.ndim:
        return np.bincount(flat, weights=values.ravel(), minlength=size)
    components = values.shape[-1]
    out = np.empty((size, components))
    for c in range(components):
        out[:, c] = np.bincount(flat, weights=values[..., c].ravel(), minlength=size)
    return out


def p2g(particles: ParticleSet, grid: SubdomainGrid, stencil: Stencil | None = None) -> Stencil:
    """
    APIC particle-to-grid transfer.

    Resets the grid scratch fields, accumulates mass and affine momentum, and
    marks nodes above the grid's mass threshold active.
    """
    if stencil is None:
        stencil = compute_stencil(particles.x, grid)
    grid.reset()
    n = grid.num_nodes
    weighted_mass = particles.mass[:, None] * stencil.weights
    offsets = grid.positions[stencil.nodes] - particles.x[:, None, :]
    # B_p D_p^-1 with D_p = h^2/4 I
    affine = particles.B * (4.0 / (grid.h * grid.h))
    nodal_velocity = particles.v[:, None, :] + np.einsum("pab,pib->pia", affine, offsets)
    grid.mass = scatter(stencil.nodes, weighted_mass, n)
    grid.momentum = scatter(stencil.nodes, weighted_mass[..., None] * nodal_velocity, n)
    grid.active = grid.mass > grid.mass_threshold
    grid.velocity = np.zeros((n, 2))
    grid.velocity[grid.active] = grid.momentum[grid.active] / grid.mass[grid.active, None]
    return stencil


def interpolate_velocity(grid: SubdomainGrid, stencil: Stencil) -> FloatArray:
    return np.einsum("pi,pia->pa", stencil.weights, grid.velocity[stencil.nodes])


def g2p(
    grid: SubdomainGrid,
    particles: ParticleSet,
    dt: float,
    stencil: Stencil | None = None,
    step: int | None = None,
) -> Stencil:
    """
    APIC grid-to-particle transfer and updated-Lagrangian F update.
    Particle positions are left untouched; see `advect`.
    """
    if stencil is None:
        stencil = compute_stencil(particles.x, grid)
    nodal = grid.velocity[stencil.nodes]
    offsets = grid.positions[stencil.nodes] - particles.x[:, None, :]
    velocity_gradient = np.einsum("pia,pib->pab", nodal, stencil.gradients)
    F_new = (np.eye(2) + dt * velocity_gradient) @ particles.F
    J = determinant(F_new)
    if np.any(J <= 0):
        bad = int(np.flatnonzero(J <= 0)[0])
        where = "" if step is None else f" at step {step}"
        raise InversionError(f"Particle {bad} inverted{where} (det F = {J[bad]:.6g}).")
    particles.v = np.einsum("pi,pia->pa", stencil.weights, nodal)
    particles.B = np.einsum("pi,pia,pib->pab", stencil.weights, nodal, offsets)
    particles.F = F_new
    return stencil


def advect(
    particles: ParticleSet,
    grid: SubdomainGrid,
    dt: float,
    stencil: Stencil | None = None,
) -> None:
    if stencil is None:
        stencil = compute_stencil(particles.x, grid)
    moved = particles.x + dt * interpolate_velocity(grid, stencil)
    check = compute_stencil(moved, grid, strict=False)
    if not check.valid.all():
        bad = int(np.flatnonzero(~check.valid)[0])
        raise OutOfDomainError(bad, moved[bad])
    particles.x = moved
