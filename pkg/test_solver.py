"""
Tests for the variable-density solver
"""

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from fields import Grid, ScalarField, VectorField, lp_norm, spectral_gradient
from scenario_config import load_config
from scenarios import build_scenario, taylor_green_energy
from solver import (ConvergenceReport, FluidState, SolverConfig, SolverNonconvergenceError, advect_density,
                    epsilon_continuation, momentum_step, simulate, step)


def kinetic_energy(state):
    return 0.5 * float((state.rho.values * (state.v.as_array() ** 2).sum(axis=0)).mean())


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt=0.0)
    with pytest.raises(ValueError):
        SolverConfig(eps_floor=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(n=48)
    assert SolverConfig(dt=1e-3, T_end=0.01).n_steps == 10


def test_advect_zero_velocity_is_exact_copy():
    grid = Grid(16, 2)
    rho = ScalarField(grid, build_scenario('drop', grid).rho.values)
    out = advect_density(rho, VectorField.zeros(grid), 0.1)
    np.testing.assert_array_equal(out.values, rho.values)


def test_advect_grid_aligned_translation_is_a_shift():
    grid = Grid(16, 2)
    rho = build_scenario('drop', grid, radius=0.2).rho
    v = VectorField.from_functions(grid, lambda x, y: np.ones_like(x), lambda x, y: np.zeros_like(x))
    out = advect_density(rho, v, grid.h)
    np.testing.assert_allclose(out.values, np.roll(rho.values, 1, axis=0), atol=1e-12)


def test_advect_keeps_density_range():
    grid = Grid(32, 2)
    state = build_scenario('drop', grid, velocity='taylor_green')
    out = advect_density(state.rho, state.v, 0.01)
    assert out.values.min() == 0.0
    assert out.values.max() == 1.0


def test_rest_stays_at_rest():
    cfg = SolverConfig(n=16, dt=1e-3, T_end=3e-3)
    states = simulate(build_scenario('rest', cfg.grid), cfg)
    assert len(states) == 4
    for s in states:
        assert not np.any(s.v.as_array())
        assert not np.any(s.P.values)


def test_taylor_green_energy_decay():
    cfg = SolverConfig(n=32, dt=1e-3, T_end=0.02, mu=0.01)
    states = simulate(build_scenario('taylor_green', cfg.grid), cfg, record_every=5)
    for s in states:
        exact = taylor_green_energy(1.0, cfg.mu, s.t)
        assert kinetic_energy(s) == pytest.approx(exact, rel=2e-3)


def test_step_keeps_divergence_free_and_density_exact():
    cfg = SolverConfig(n=16, dt=1e-3, T_end=1e-3, mu=0.1)
    state = build_scenario('drop', cfg.grid, velocity='taylor_green')
    new = step(state, cfg)
    assert lp_norm(spectral_gradient(new.v, 'div'), 2) < 1e-10
    assert new.rho.values.min() == 0.0 and new.rho.values.max() == 1.0
    assert abs(new.P.mean()) < 1e-12
    assert new.vt is not None


def test_momentum_step_constant_density_matches_implicit_decay():
    cfg = SolverConfig(n=32, dt=1e-3, mu=0.05)
    grid = cfg.grid
    v = VectorField.from_functions(grid, lambda x, y: np.sin(2 * np.pi * y), lambda x, y: np.zeros_like(x))
    state = FluidState(0.0, ScalarField.constant(grid, 1.0), v, ScalarField.zeros(grid))
    v_new, _ = momentum_step(state, cfg)
    factor = 1.0 / (1.0 + cfg.dt * cfg.mu * 4 * np.pi ** 2)
    np.testing.assert_allclose(v_new.as_array(), factor * v.as_array(), atol=1e-6)


def test_nonconvergence_reports_partial_states():
    cfg = SolverConfig(n=16, dt=1e-3, T_end=5e-3, mu=0.1, eps_floor=1e-3, inner_maxit=1, inner_tol=1e-14)
    initial = build_scenario('drop', cfg.grid, velocity='taylor_green')
    initial = FluidState(0.0, ScalarField(cfg.grid, np.maximum(initial.rho.values, 1e-3)), initial.v, initial.P)
    with pytest.raises(SolverNonconvergenceError) as info:
        simulate(initial, cfg)
    assert info.value.iterations >= 1
    assert info.value.partial_states and info.value.partial_states[0].t == 0.0


def test_epsilon_list_must_decrease():
    cfg = SolverConfig(n=16, dt=1e-3, T_end=2e-3)
    with pytest.raises(ValueError):
        epsilon_continuation(build_scenario('drop', cfg.grid), cfg, [1e-3, 1e-2])


def test_epsilon_continuation_reports_differences():
    cfg = SolverConfig(n=16, dt=1e-3, T_end=3e-3, mu=1.0)
    report = epsilon_continuation(build_scenario('drop', cfg.grid), cfg, [1e-1, 3e-2, 1e-2], workers=2)
    assert report.complete
    assert len(report.l2h1_differences) == 2
    assert all(d is not None and d >= 0 for d in report.l2h1_differences)
    assert set(report.timings) == {repr(e) for e in (1e-1, 3e-2, 1e-2)}


def test_convergence_report_monotone():
    assert ConvergenceReport([1, 0.1, 0.01], [0.3, 0.1]).monotone
    assert not ConvergenceReport([1, 0.1, 0.01], [0.1, 0.1]).monotone
    assert not ConvergenceReport([1, 0.1, 0.01], [0.3, None]).monotone


def taylor_green_errors(cfg, record_every):
    states = simulate(build_scenario('taylor_green', cfg.grid), cfg, record_every=record_every)
    return max(abs(kinetic_energy(s) - taylor_green_energy(1.0, cfg.mu, s.t)) / taylor_green_energy(1.0, cfg.mu, s.t)
               for s in states)


@pytest.mark.slow
def test_taylor_green_acceptance_run_is_first_order():
    scenario = load_config(Path(__file__).parent / 'scenarios' / 'taylor_green.toml')
    cfg = scenario.solver_config()
    assert (cfg.n, cfg.dt, cfg.mu, cfg.T_end) == (128, 1e-3, 0.01, 0.5)
    coarse = taylor_green_errors(cfg, scenario.output.record_every)
    fine = taylor_green_errors(replace(cfg, dt=cfg.dt / 2), 2 * scenario.output.record_every)
    assert coarse < 1e-3
    assert 1.6 <= coarse / fine <= 2.4


def test_pressure_correction_keeps_taylor_green_steady_in_shape():
    cfg = SolverConfig(n=32, dt=2e-3, T_end=0.1, mu=0.01)
    states = simulate(build_scenario('taylor_green', cfg.grid), cfg, record_every=10)
    shape = build_scenario('taylor_green', cfg.grid).v.as_array()
    for s in states[1:]:
        decay = np.exp(-8 * np.pi ** 2 * cfg.mu * s.t)
        assert np.abs(s.v.as_array() - decay * shape).max() < 5e-3
        assert abs(s.P.values).max() > 0.1


def test_constant_density_ignores_the_floor():
    cfg = SolverConfig(n=16, dt=1e-3, T_end=5e-3, mu=0.1)
    report = epsilon_continuation(build_scenario('taylor_green', cfg.grid), cfg, [0.5, 0.1, 0.01], workers=3)
    assert report.complete
    assert all(d < 1e-10 for d in report.l2h1_differences)
    assert all(d < 1e-10 for d in report.linf_l2_differences)


def test_step_records_scheme_dissipation():
    cfg = SolverConfig(n=16, dt=1e-3, T_end=1e-3, mu=10.0)
    rest = step(build_scenario('rest', cfg.grid), cfg)
    assert rest.scheme_dissipation == 0.0

    state = build_scenario('taylor_green', cfg.grid)
    new = step(state, cfg)
    factor = 1.0 / (1.0 + cfg.dt * cfg.mu * 8 * np.pi ** 2)
    # implicit decay dominates the projected advection increment
    assert new.scheme_dissipation == pytest.approx(0.25 * (1.0 - factor) ** 2, rel=0.05)
