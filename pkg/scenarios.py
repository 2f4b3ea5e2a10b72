"""
Initial data builders for the solver scenarios
"""

import logging
from typing import Sequence

import numpy as np

from fields import Grid, ScalarField, VectorField, leray_project, lp_norm, random_scalar_field, random_vector_field
from solver import FluidState

logger = logging.getLogger(__name__)

SCENARIOS = ('rest', 'taylor_green', 'drop', 'bubble', 'two_phase', 'random')
VELOCITY_KINDS = ('taylor_green', 'shear', 'zero')


def taylor_green_velocity(grid: Grid, amplitude: float = 1.0) -> VectorField:
    """(-cos 2pi x sin 2pi y, sin 2pi x cos 2pi y), scaled"""
    return VectorField.from_functions(
        grid,
        lambda x, y: -amplitude * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y),
        lambda x, y: amplitude * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))


def taylor_green_energy(amplitude: float, mu: float, t: float) -> float:
    """Exact kinetic energy of the unit-density Taylor-Green vortex"""
    return 0.25 * amplitude ** 2 * np.exp(-16 * np.pi ** 2 * mu * t)


def shear_velocity(grid: Grid, amplitude: float = 1.0) -> VectorField:
    return VectorField.from_functions(grid, lambda x, y: amplitude * np.sin(2 * np.pi * y),
                                      lambda x, y: np.zeros_like(x))


def disk_indicator(grid: Grid, radius: float, center: Sequence[float] = (0.5, 0.5)) -> np.ndarray:
    """1 inside the periodic disk, 0 outside"""
    dist_sq = np.zeros(grid.shape)
    for coord, c in zip(grid.coordinates(), center):
        delta = np.abs(coord - c)
        delta = np.minimum(delta, 1.0 - delta)
        dist_sq += delta ** 2
    return (dist_sq < radius ** 2).astype(float)


def initial_velocity(grid: Grid, kind: str, amplitude: float) -> VectorField:
    if kind == 'taylor_green':
        return taylor_green_velocity(grid, amplitude)
    if kind == 'shear':
        return shear_velocity(grid, amplitude)
    if kind == 'zero':
        return VectorField.zeros(grid)
    raise ValueError(f"Unknown velocity kind: {kind}")


def build_scenario(name: str, grid: Grid, rho_star: float = 1.0, amplitude: float = 1.0,
                   radius: float = 0.25, center: Sequence[float] = (0.5, 0.5),
                   velocity: str = 'taylor_green', eta1: float = 1.0, eta2: float = 0.0,
                   seed: int = 0, kmax: int = 4) -> FluidState:
    """
    Build the initial state of a named scenario

    Args:
        name: one of SCENARIOS
        grid: 2D grid
        rho_star: density upper bound
        amplitude: velocity amplitude
        radius, center: patch geometry for drop, bubble and two_phase
        velocity: initial velocity kind for patch scenarios
        eta1, eta2: inside/outside densities for two_phase
        seed, kmax: random scenario controls

    Returns:
        FluidState at t = 0 with div v = 0 and positive mass
    """
    if name not in SCENARIOS:
        raise ValueError(f"Unknown scenario: {name}")
    if grid.d != 2:
        raise ValueError("Scenarios are two-dimensional")

    if name == 'rest':
        rho = ScalarField.constant(grid, rho_star)
        v = VectorField.zeros(grid)
    elif name == 'taylor_green':
        rho = ScalarField.constant(grid, rho_star)
        v = taylor_green_velocity(grid, amplitude)
    elif name in ('drop', 'bubble', 'two_phase'):
        patch = disk_indicator(grid, radius, center)
        if name == 'drop':
            values = rho_star * patch
        elif name == 'bubble':
            values = rho_star * (1.0 - patch)
        else:
            if min(eta1, eta2) < 0 or max(eta1, eta2) > rho_star:
                raise ValueError(f"two_phase densities must lie in [0, rho_star], got {eta1}, {eta2}")
            values = eta1 * patch + eta2 * (1.0 - patch)
        rho = ScalarField(grid, values)
        v = initial_velocity(grid, velocity, amplitude)
    else:
        rng = np.random.default_rng(seed)
        bump = random_scalar_field(grid, rng, kmax=kmax, decay=2.0).values
        spread = np.abs(bump).max() or 1.0
        rho = ScalarField(grid, rho_star * np.clip(0.55 + 0.45 * bump / spread, 0.0, 1.0))
        v = random_vector_field(grid, rng, kmax=kmax, decay=2.0, solenoidal=True)
        size = lp_norm(v, np.inf)
        v = v * (amplitude / size) if size > 0 else v

    v, _ = leray_project(v)
    if rho.values.sum() <= 0:
        raise ValueError(f"Scenario {name} has zero total mass")
    logger.info(f"Built scenario {name} on n={grid.n}: mass={rho.values.sum() * grid.cell_volume:.6f}")
    return FluidState(0.0, rho, v, ScalarField.zeros(grid))
