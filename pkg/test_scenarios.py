"""
Tests for the scenario builders
"""

import numpy as np
import pytest

from fields import Grid, lp_norm, spectral_gradient
from scenarios import SCENARIOS, build_scenario, disk_indicator, taylor_green_energy


@pytest.mark.parametrize('name', SCENARIOS)
def test_scenarios_are_admissible(name):
    grid = Grid(16, 2)
    state = build_scenario(name, grid, eta1=0.8, eta2=0.1)
    assert state.t == 0.0
    assert state.rho.values.min() >= 0.0
    assert state.rho.values.max() <= 1.0
    assert state.rho.values.sum() > 0
    assert lp_norm(spectral_gradient(state.v, 'div'), 2) < 1e-12


def test_drop_and_bubble_are_complementary():
    grid = Grid(32, 2)
    drop = build_scenario('drop', grid).rho.values
    bubble = build_scenario('bubble', grid).rho.values
    np.testing.assert_array_equal(drop + bubble, np.ones(grid.shape))
    assert set(np.unique(drop)) == {0.0, 1.0}


def test_disk_indicator_wraps_around():
    grid = Grid(32, 2)
    wrapped = disk_indicator(grid, 0.2, center=(0.0, 0.0))
    centered = disk_indicator(grid, 0.2, center=(0.5, 0.5))
    np.testing.assert_array_equal(np.roll(wrapped, (16, 16), axis=(0, 1)), centered)


def test_unknown_inputs_raise():
    grid = Grid(16, 2)
    with pytest.raises(ValueError):
        build_scenario('vortex_sheet', grid)
    with pytest.raises(ValueError):
        build_scenario('drop', grid, velocity='swirl')
    with pytest.raises(ValueError):
        build_scenario('two_phase', grid, eta1=2.0)


def test_random_scenario_is_seeded():
    grid = Grid(16, 2)
    a = build_scenario('random', grid, seed=3)
    b = build_scenario('random', grid, seed=3)
    c = build_scenario('random', grid, seed=4)
    np.testing.assert_array_equal(a.rho.values, b.rho.values)
    assert not np.array_equal(a.rho.values, c.rho.values)


def test_taylor_green_energy_at_start():
    grid = Grid(16, 2)
    state = build_scenario('taylor_green', grid, amplitude=2.0)
    energy = 0.5 * float((state.v.as_array() ** 2).sum(axis=0).mean())
    assert energy == pytest.approx(taylor_green_energy(2.0, 1.0, 0.0))
