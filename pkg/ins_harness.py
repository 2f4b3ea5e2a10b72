#!/usr/bin/env python3
"""
Vacuum INS harness - batch runs, inequality suites and reports

Usage:
    python ins_harness.py run scenarios/drop.toml
    python ins_harness.py ineq scenarios/inequalities.toml
    python ins_harness.py epsilon scenarios/drop.toml
    python ins_harness.py report ~/.ins_harness/runs/drop_0123456789ab
"""

import argparse
import json
import logging
import platform
import sys
import time
import traceback
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import openpyxl
import scipy

from config import LOG_FILE, LOGGING_CONFIG, OUTPUT_CONFIG, OUTPUT_DIR, ensure_directories
from diagnostics import (apriori_functionals, energy_residual, write_apriori_json, write_diagnostics_csv,
                         DiagnosticsTracker, Trajectory)
from fields import ScalarField, write_snapshot
from inequalities import (FieldEnsemble, desjardins_check, fractional_time_norm, refinement_study,
                          sample_random_field)
from lagrangian import (BoundaryCurve, VelocityHistory, deformation_inverse, integrate_flow, pullback,
                        track_boundary, write_boundary_csv, ReseedingRequiredError, SingularMapError)
from scenario_config import ConfigError, ScenarioConfig, emit_config, load_config
from scenarios import build_scenario, taylor_green_energy
from solver import SolverNonconvergenceError, epsilon_continuation, simulate

logger = logging.getLogger(__name__)

PATCH_SCENARIOS = ('drop', 'bubble', 'two_phase')
CHECK_TOLERANCE = 1e-3
ORACLE_REFINEMENT = 4
ORACLE_TOLERANCE = 0.1
DET_TOLERANCE = 1e-4


def setup_logging(verbose: bool = False):
    """Log to the harness log file and the console"""
    ensure_directories()
    level = logging.DEBUG if verbose else getattr(logging, str(LOGGING_CONFIG['level']).upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format=LOGGING_CONFIG['format'],
        handlers=[
            logging.FileHandler(LOG_FILE),
            logging.StreamHandler()
        ]
    )


def output_directory(cfg: ScenarioConfig, out: Optional[Path] = None, suffix: str = '') -> Path:
    """Explicit directory, the config's directory, or one named after the config hash"""
    if out is not None:
        directory = Path(out)
    elif cfg.output.directory:
        directory = Path(cfg.output.directory).expanduser()
    else:
        directory = OUTPUT_DIR / f"{cfg.scenario.name}{suffix}_{cfg.config_hash()[:12]}"
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def write_manifest(directory: Path, cfg: ScenarioConfig, verb: str, timings: Dict[str, float],
                   checks: Dict[str, bool]) -> Path:
    manifest = {
        'verb': verb,
        'config_hash': cfg.config_hash(),
        'config': emit_config(cfg),
        'grid': {'n': cfg.scenario.n, 'd': 2},
        'versions': {
            'python': platform.python_version(),
            'numpy': np.__version__,
            'scipy': scipy.__version__,
            'openpyxl': openpyxl.__version__,
        },
        'timings': timings,
        'checks': checks,
        'passed': all(checks.values()),
    }
    path = directory / OUTPUT_CONFIG['manifest_json']
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def write_failure(directory: Path, error: Exception, **details) -> Path:
    record = {'error': type(error).__name__, 'message': str(error), **details}
    path = directory / OUTPUT_CONFIG['failure_json']
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=float))
    return path


def _uniform_prefix(states: List) -> List:
    """Longest prefix of states on a uniform time grid"""
    if len(states) < 3:
        return states
    times = np.array([s.t for s in states])
    step = times[1] - times[0]
    if np.allclose(np.diff(times), step, rtol=1e-8):
        return states
    return states[:-1]


def _conservation_checks(trajectory: Trajectory) -> Dict[str, bool]:
    records = trajectory.records
    first = records[0]
    mass_drift = max(abs(r.total_mass - first.total_mass) for r in records) / first.total_mass
    speed = float(np.abs(trajectory.states[0].v.as_array()).max())
    momentum_scale = max(np.linalg.norm(first.total_momentum), first.total_mass * speed, 1e-14)
    momentum_drift = max(np.linalg.norm(np.subtract(r.total_momentum, first.total_momentum))
                         for r in records) / momentum_scale
    discrete_residual = float(energy_residual(trajectory, discrete=True).max())
    checks = {
        'energy_balance': bool(discrete_residual < CHECK_TOLERANCE),
        'mass_drift': bool(mass_drift < CHECK_TOLERANCE),
        'momentum_drift': bool(momentum_drift < CHECK_TOLERANCE),
        'density_bounds': all(first.rho_min <= r.rho_min and r.rho_max <= first.rho_max for r in records),
    }
    logger.info(f"Energy residual {discrete_residual:.3e} (continuous form {energy_residual(trajectory).max():.3e}), "
                f"mass drift {mass_drift:.3e}, momentum drift {momentum_drift:.3e}")
    return checks


def _lagrangian_summary(states: List, history: VelocityHistory, flow_dt: float) -> Dict[str, Any]:
    """Flow map on the label grid: det drift, series smallness and density pullback error"""
    grid = states[0].grid
    flowmap = integrate_flow(history, grid, flow_dt)
    summary = {'det_error': flowmap.det_error, 'gradient_integral': flowmap.gradient_integral}
    try:
        _, _, series_error = deformation_inverse(flowmap)
        summary['neumann_error'] = series_error
    except SingularMapError as e:
        logger.warning(f"Deformation inverse failed: {e}")
        summary['neumann_error'] = None
    pulled = pullback(states[-1].rho, flowmap, order=1)
    summary['pullback_l1'] = float(np.abs(pulled.values - states[0].rho.values).sum() * grid.cell_volume)
    return summary


def run_scenario(cfg: ScenarioConfig, out: Optional[Path] = None) -> Dict[str, Any]:
    """
    Simulate one scenario and write its diagnostics, a priori report and boundary series

    Returns:
        Result dict with success, passed, checks and output_dir
    """
    directory = output_directory(cfg, out)
    timings: Dict[str, float] = {}
    sc = cfg.scenario
    solver_cfg = cfg.solver_config()
    diagnostics = cfg.diagnostics
    record_every = cfg.output.record_every

    try:
        initial = build_scenario(sc.name, solver_cfg.grid, rho_star=sc.rho_star, amplitude=sc.amplitude,
                                 radius=sc.radius, center=sc.center, velocity=sc.velocity, eta1=sc.eta1,
                                 eta2=sc.eta2, seed=sc.seed, kmax=sc.kmax)
        tracker = DiagnosticsTracker(solver_cfg.mu, diagnostics.p_list)
        started = time.perf_counter()
        try:
            states = simulate(initial, solver_cfg, record_every=record_every, observer=tracker,
                              snapshot_every=cfg.output.snapshot_every, snapshot_dir=directory / 'snapshots')
        except SolverNonconvergenceError as e:
            write_diagnostics_csv(tracker.records, directory / OUTPUT_CONFIG['diagnostics_csv'])
            last = e.partial_states[-1] if e.partial_states else initial
            write_failure(directory, e, t=last.t, residual=e.residual, iterations=e.iterations)
            write_manifest(directory, cfg, 'run', {'simulate': time.perf_counter() - started}, {'solver': False})
            return {'success': False, 'passed': False, 'error': str(e), 'output_dir': str(directory),
                    'message': 'Solver did not converge; partial outputs written'}
        timings['simulate'] = time.perf_counter() - started

        trajectory = Trajectory(states, tracker.records, solver_cfg.mu, solver_cfg.rho_star)
        checks = _conservation_checks(trajectory)

        if sc.name == 'taylor_green':
            errors = [abs(r.kinetic_energy - sc.rho_star * taylor_green_energy(sc.amplitude, solver_cfg.mu, r.t))
                      / (sc.rho_star * taylor_green_energy(sc.amplitude, solver_cfg.mu, r.t))
                      for r in tracker.records]
            checks['taylor_green'] = bool(max(errors) < CHECK_TOLERANCE)
            logger.info(f"Taylor-Green max relative energy error {max(errors):.3e}")

        started = time.perf_counter()
        report = apriori_functionals(trajectory, diagnostics.prs_table)
        extras: Dict[str, Any] = {'fractional': []}
        uniform = _uniform_prefix(states)
        if len(uniform) >= 3:
            series = [s.v for s in uniform]
            times = [s.t for s in uniform]
            for alpha in diagnostics.alpha_list:
                result = fractional_time_norm(series, times, alpha, 4.0)
                extras['fractional'].append({'alpha': alpha, 'norm': result.norm, 'bound': result.bound_rhs,
                                             'constant': result.constant})
                checks[f'fractional_{alpha:g}'] = bool(result.norm <= result.bound_rhs * (1 + 1e-9))
        timings['apriori'] = time.perf_counter() - started

        if sc.name in PATCH_SCENARIOS and diagnostics.track_boundary and len(states) >= 2:
            started = time.perf_counter()
            history = VelocityHistory.from_states(states)
            flow_dt = solver_cfg.dt * record_every
            boundary0 = BoundaryCurve.circle(sc.radius, sc.center, diagnostics.markers)
            try:
                curves, seminorms = track_boundary(history, boundary0, diagnostics.holder_alpha, flow_dt)
                write_boundary_csv(curves, directory / OUTPUT_CONFIG['boundary_csv'])
                by_time = {round(c.time, 12): h for c, h in zip(curves, seminorms)}
                for record in tracker.records:
                    record.holder_seminorm = by_time.get(round(record.t, 12))
                checks['boundary_bounded'] = bool(max(seminorms) <= 10.0 * seminorms[0])

                fine0 = BoundaryCurve.circle(sc.radius, sc.center, ORACLE_REFINEMENT * diagnostics.markers)
                _, oracle = track_boundary(history, fine0, diagnostics.holder_alpha, flow_dt)
                oracle_error = max(abs(h - o) / o for h, o in zip(seminorms, oracle))
                checks['boundary_oracle'] = bool(oracle_error < ORACLE_TOLERANCE)
                extras['boundary'] = {'alpha': diagnostics.holder_alpha, 'seminorms': seminorms,
                                      'oracle_seminorms': oracle, 'oracle_error': oracle_error}
            except ReseedingRequiredError as e:
                logger.error(f"Boundary tracking stopped: {e}")
                checks['boundary_bounded'] = False
                extras['boundary'] = {'error': str(e), 'spacing_ratio': e.spacing_ratio}
            extras['lagrangian'] = _lagrangian_summary(states, history, flow_dt)
            checks['flow_det'] = bool(extras['lagrangian']['det_error'] < DET_TOLERANCE)
            timings['lagrangian'] = time.perf_counter() - started

        write_diagnostics_csv(tracker.records, directory / OUTPUT_CONFIG['diagnostics_csv'])
        write_apriori_json(report, directory / OUTPUT_CONFIG['apriori_json'], extras)
        write_manifest(directory, cfg, 'run', timings, checks)

        passed = all(checks.values())
        logger.info(f"Run {sc.name} finished: {'passed' if passed else 'FAILED'} ({directory})")
        return {'success': True, 'passed': passed, 'checks': checks, 'output_dir': str(directory),
                'message': 'Run completed'}

    except Exception as e:
        logger.error(f"Run {sc.name} failed: {e}")
        logger.error(traceback.format_exc())
        write_failure(directory, e)
        write_manifest(directory, cfg, 'run', timings, {'run': False})
        return {'success': False, 'passed': False, 'error': str(e), 'output_dir': str(directory),
                'message': 'Run failed'}


def epsilon_run(cfg: ScenarioConfig, out: Optional[Path] = None, workers: Optional[int] = None) -> Dict[str, Any]:
    """Regularized runs for every eps floor and their successive differences"""
    directory = output_directory(cfg, out, suffix='_epsilon')
    sc = cfg.scenario
    solver_cfg = cfg.solver_config()
    started = time.perf_counter()
    try:
        initial = build_scenario(sc.name, solver_cfg.grid, rho_star=sc.rho_star, amplitude=sc.amplitude,
                                 radius=sc.radius, center=sc.center, velocity=sc.velocity, eta1=sc.eta1,
                                 eta2=sc.eta2, seed=sc.seed, kmax=sc.kmax)
        report = epsilon_continuation(initial, solver_cfg, cfg.epsilon.eps_list, workers=workers,
                                      record_every=cfg.output.record_every)
    except Exception as e:
        logger.error(f"Epsilon continuation failed: {e}")
        logger.error(traceback.format_exc())
        write_failure(directory, e)
        write_manifest(directory, cfg, 'epsilon', {'epsilon': time.perf_counter() - started},
                       {'epsilon_complete': False})
        return {'success': False, 'passed': False, 'error': str(e), 'output_dir': str(directory),
                'message': 'Epsilon continuation failed'}

    (directory / 'epsilon.json').write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    checks = {'epsilon_complete': report.complete, 'epsilon_monotone': report.monotone}
    write_manifest(directory, cfg, 'epsilon', {'epsilon': time.perf_counter() - started, **report.timings}, checks)
    return {'success': True, 'passed': all(checks.values()), 'checks': checks, 'output_dir': str(directory),
            'message': 'Epsilon continuation completed'}


def inequality_suite(cfg: ScenarioConfig, out: Optional[Path] = None, workers: Optional[int] = None) -> Dict[str, Any]:
    """
    Run every configured lemma over the ensemble on each resolution

    Assertable lemmas pass or fail; fitted lemmas report constants and refinement
    stability. Offending samples are written as snapshots under violations/.
    """
    directory = output_directory(cfg, out, suffix='_ineq')
    en = cfg.ensemble
    n_list = sorted(en.n_list)
    ensemble = FieldEnsemble(seed=en.seed, count=en.count, spectrum_decay=en.spectrum_decay,
                             density_model=en.density_model, n=n_list[0], rho_star=cfg.scenario.rho_star,
                             mass=en.mass, kmax=en.kmax)
    started = time.perf_counter()
    reports = {}
    checks = {}
    for lemma in en.lemmas:
        report = refinement_study(lemma, ensemble, n_list, workers, rhs_scale=en.rhs_scale,
                                  truncation_n=en.truncation_n)
        reports[lemma] = report.to_dict()
        checks[lemma] = report.passed and (report.assertable or report.stable is not False)
        if report.violations:
            violation_dir = directory / 'violations'
            violation_dir.mkdir(exist_ok=True)
            finest = replace(ensemble, n=n_list[-1])
            for index in report.violations[:5]:
                a, z = sample_random_field(finest, index)
                write_snapshot(violation_dir / f"{lemma}_{index:05d}_a.bin", a, 'a', 0.0)
                write_snapshot(violation_dir / f"{lemma}_{index:05d}_z.bin", z, 'z', 0.0)
            logger.error(f"{lemma}: offending samples written to {violation_dir}")

    # literal weighted L4 form fails for constant z
    grid = ensemble.grid
    literal = desjardins_check(ScalarField.constant(grid, cfg.scenario.rho_star),
                               ScalarField.constant(grid, 1.0), cfg.scenario.rho_star)
    summary = {'reports': reports, 'literal_desjardins_constant_z': literal.literal_ratio}
    (directory / 'inequalities.json').write_text(json.dumps(summary, indent=2, sort_keys=True, default=float))
    write_manifest(directory, cfg, 'ineq', {'suite': time.perf_counter() - started}, checks)
    passed = all(checks.values())
    logger.info(f"Inequality suite {'passed' if passed else 'FAILED'} ({directory})")
    return {'success': True, 'passed': passed, 'checks': checks, 'output_dir': str(directory),
            'message': 'Inequality suite completed'}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Vacuum INS verification harness")
    parser.add_argument('--verbose', '-v', action='store_true', help="debug logging")
    sub = parser.add_subparsers(dest='verb', required=True)
    for verb, help_text in (('run', "simulate a scenario"), ('ineq', "run the inequality suite"),
                            ('epsilon', "run the eps-floor continuation")):
        command = sub.add_parser(verb, help=help_text)
        command.add_argument('config', type=Path, help="scenario TOML file")
        command.add_argument('--out', type=Path, default=None, help="output directory")
        if verb != 'run':
            command.add_argument('--workers', type=int, default=None, help="worker threads")
    command = sub.add_parser('report', help="write the summary workbook of a run directory")
    command.add_argument('directory', type=Path)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns 0 when every assertion passed"""
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)

    if args.verb == 'report':
        from report_workbook import write_summary_workbook
        result = write_summary_workbook(args.directory)
        return 0 if result['success'] and result.get('passed', False) else 1

    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        logger.error(f"Invalid config {args.config}: {e}")
        return 2

    if args.verb == 'run':
        result = run_scenario(cfg, args.out)
    elif args.verb == 'epsilon':
        result = epsilon_run(cfg, args.out, args.workers)
    else:
        result = inequality_suite(cfg, args.out, args.workers)
    logger.info(f"{result['message']}: {result['output_dir']}")
    return 0 if result['success'] and result['passed'] else 1


if __name__ == "__main__":
    sys.exit(main())
