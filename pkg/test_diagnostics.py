"""
Tests for the conserved-quantity diagnostics and the a-priori functionals
"""

import math
from pathlib import Path

import numpy as np
import pytest

from diagnostics import (apriori_functionals, conserved_report, energy_residual, gronwall_log_bound,
                         integrate_comparison_ode, riccati_bound_3d, run_with_diagnostics, shift_exponent,
                         shift_range_ok, threed_formulas, trajectory_from_states, write_apriori_json,
                         write_diagnostics_csv)
from fields import Grid
from scenario_config import load_config
from scenarios import build_scenario
from solver import SolverConfig


@pytest.fixture(scope='module')
def drop_trajectory():
    cfg = SolverConfig(n=16, dt=1e-3, T_end=5e-3, mu=0.1)
    return run_with_diagnostics(build_scenario('drop', cfg.grid), cfg)


def test_taylor_green_conserved_report():
    state = build_scenario('taylor_green', Grid(16, 2))
    record = conserved_report(state, p_list=[1.0, 2.0])
    assert record.kinetic_energy == pytest.approx(0.25)
    assert record.total_mass == pytest.approx(1.0)
    np.testing.assert_allclose(record.total_momentum, [0.0, 0.0], atol=1e-14)
    assert record.rho_lp == {1.0: pytest.approx(1.0), 2.0: pytest.approx(1.0)}
    assert record.sqrho_vt_l2 == 0.0
    assert record.divergence_l2 < 1e-12


def test_drop_run_conserves_mass_and_bounds(drop_trajectory):
    records = drop_trajectory.records
    assert len(records) == 6
    mass0 = records[0].total_mass
    for r in records:
        assert r.total_mass == pytest.approx(mass0, rel=0.05)
        assert 0.0 <= r.rho_min <= r.rho_max <= 1.0
    dissipation = [r.cumulative_dissipation for r in records]
    assert dissipation == sorted(dissipation)


def test_energy_residual(drop_trajectory):
    residual = energy_residual(drop_trajectory)
    assert residual[0] == 0.0
    assert residual.shape == (6,)
    single = trajectory_from_states(drop_trajectory.states[:1], mu=0.1)
    with pytest.raises(ValueError):
        energy_residual(single)


def test_apriori_functionals(drop_trajectory, tmp_path):
    report = apriori_functionals(drop_trajectory, prs_table=[[4.0, 3.0, 1.0], [2.0, 3.0, 1.0]])
    assert len(report.h1_lhs) == len(report.times) == 6
    assert all(lhs <= rhs * (1 + 1e-9) for lhs, rhs in zip(report.h1_lhs, report.gronwall_rhs))
    assert report.fitted_C0 >= 0
    assert [row['in_range'] for row in report.shift_norms] == [True, False]
    assert report.shift_norms[0]['beta'] == pytest.approx(0.25)
    assert report.holder_l1_linf['lhs'] >= 0

    path = write_apriori_json(report, tmp_path / 'apriori.json', extra={'note': {'value': 1}})
    assert '"note"' in path.read_text()


def test_diagnostics_csv(drop_trajectory, tmp_path):
    path = write_diagnostics_csv(drop_trajectory.records, tmp_path / 'diagnostics.csv')
    lines = path.read_text().splitlines()
    assert len(lines) == 7
    assert 'momentum_0' in lines[0] and 'rho_l4' in lines[0]


@pytest.mark.parametrize('p, r, s, expected', [
    (4, 3, 1, True),
    (4, 5, 1, False),
    (2, 10, 1, False),
    (4, 3, 2, False),
    (1, 3, 1, False),
])
def test_shift_range(p, r, s, expected):
    assert shift_range_ok(p, r, s) is expected


def test_shift_exponent():
    assert shift_exponent(4, 1) == pytest.approx(0.25)
    assert shift_exponent(math.inf, 1) == pytest.approx(0.5)


def test_gronwall_bound_dominates_ode():
    rng = np.random.default_rng(7)
    times = np.linspace(0.0, 1.0, 21)
    f = rng.uniform(0.0, 1.0, times.size)
    bound = gronwall_log_bound(2.0, f, times)
    solution = integrate_comparison_ode('log', 2.0, times, f)
    assert bound[0] == pytest.approx(2.0)
    assert np.all(solution <= bound * (1 + 1e-8))


def test_riccati_bound_matches_cubic_ode():
    times = np.linspace(0.0, 1.0, 11)
    f = np.full(times.size, 0.25)
    result = riccati_bound_3d(1.0, f, times)
    assert not result.blowup
    solution = integrate_comparison_ode('cubic', 1.0, times, f)
    np.testing.assert_allclose(solution, result.bound, rtol=1e-6)


def test_riccati_blowup_is_flagged():
    times = np.linspace(0.0, 1.0, 11)
    f = np.ones(times.size)
    result = riccati_bound_3d(1.0, f, times)
    assert result.blowup
    assert result.blowup_time == pytest.approx(0.5)
    assert np.isinf(result.bound[-1])
    solution = integrate_comparison_ode('cubic', 1.0, times, f)
    assert np.isnan(solution[-1])


def test_comparison_inputs_validated():
    with pytest.raises(ValueError):
        gronwall_log_bound(-1.0, [1.0, 1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        riccati_bound_3d(1.0, [-1.0, 1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        integrate_comparison_ode('quartic', 1.0, [0.0, 1.0], [1.0, 1.0])


def test_threed_formulas():
    values = threed_formulas(1.0, 1.0, 0.5, 0.5)
    assert values['smallness_margin'] == pytest.approx(0.75)
    assert values['local_time'] == pytest.approx(1.0 / (0.25 * 0.5 ** 6))
    assert values['h1_time'] == pytest.approx(1.0 / (0.25 * 0.5 ** 6))
    at_rest = threed_formulas(1.0, 1.0, 0.0, 1.0)
    assert math.isinf(at_rest['local_time']) and math.isinf(at_rest['h1_time'])
    with pytest.raises(ValueError):
        threed_formulas(1.0, 0.0, 1.0, 1.0)


def test_gronwall_bound_dominates_ode_over_many_seeds():
    times = np.linspace(0.0, 1.0, 21)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        f = rng.uniform(0.0, 1.0, times.size)
        X0 = rng.uniform(0.0, 5.0)
        bound = gronwall_log_bound(X0, f, times)
        solution = integrate_comparison_ode('log', X0, times, f)
        assert np.all(solution <= bound * (1 + 1e-8)), seed


def test_riccati_bound_with_varying_f():
    times = np.linspace(0.0, 1.0, 41)
    f = 0.2 * (1.0 + np.sin(6.0 * times))
    result = riccati_bound_3d(1.0, f, times)
    assert not result.blowup
    solution = integrate_comparison_ode('cubic', 1.0, times, f)
    assert np.all(solution <= result.bound * (1 + 1e-6))
    np.testing.assert_allclose(solution, result.bound, rtol=1e-6)


def taylor_green_trajectory(dt):
    cfg = SolverConfig(n=64, dt=dt, T_end=0.1, mu=0.02)
    return run_with_diagnostics(build_scenario('taylor_green', cfg.grid), cfg, record_every=10)


def test_energy_residual_shrinks_with_dt():
    coarse = taylor_green_trajectory(2e-3)
    fine = taylor_green_trajectory(1e-3)
    coarse_residual = energy_residual(coarse).max()
    fine_residual = energy_residual(fine).max()
    assert 1.6 <= coarse_residual / fine_residual <= 2.4


def test_discrete_balance_accounts_for_time_stepping():
    trajectory = taylor_green_trajectory(2e-3)
    continuous = energy_residual(trajectory).max()
    discrete = energy_residual(trajectory, discrete=True).max()
    assert discrete < 1e-3
    assert discrete < 0.1 * continuous
    scheme = [r.cumulative_scheme_dissipation for r in trajectory.records]
    assert scheme[0] == 0.0
    assert scheme[-1] > 0


@pytest.mark.slow
def test_drop_acceptance_run_balances_energy():
    scenario = load_config(Path(__file__).parent / 'scenarios' / 'drop.toml')
    cfg = scenario.solver_config()
    sc = scenario.scenario
    initial = build_scenario(sc.name, cfg.grid, rho_star=sc.rho_star, amplitude=sc.amplitude, radius=sc.radius,
                             center=sc.center, velocity=sc.velocity)
    trajectory = run_with_diagnostics(initial, cfg, record_every=scenario.output.record_every)
    assert energy_residual(trajectory, discrete=True).max() < 1e-3
    mass0 = trajectory.records[0].total_mass
    for r in trajectory.records:
        assert abs(r.total_mass - mass0) / mass0 < 1e-3
        assert r.rho_min == 0.0 and r.rho_max == 1.0
