"""
End-to-end tests for the harness verbs on tiny grids
"""

import json

import pytest

import ins_harness
from ins_harness import build_parser, epsilon_run, inequality_suite, main, run_scenario
from scenario_config import parse_config

REST = """\
[scenario]
name = "rest"
n = 16

[solver]
T_end = 0.005
"""

DROP = """\
[scenario]
name = "drop"
n = 16

[solver]
mu = 1.0
T_end = 0.003

[diagnostics]
alpha_list = [0.25]
markers = 32
"""

SUITE = """\
[ensemble]
seed = 3
count = 4
n_list = [32]
kmax = 6
lemmas = ["weighted_poincare", "truncation_tail", "ladyzhenskaya"]
"""


@pytest.fixture
def quiet_logging(monkeypatch, tmp_path):
    monkeypatch.setattr(ins_harness, 'LOG_FILE', tmp_path / 'harness.log')
    monkeypatch.setattr(ins_harness, 'ensure_directories', lambda: None)


def test_rest_run_passes(tmp_path):
    result = run_scenario(parse_config(REST), tmp_path / 'rest')
    assert result['success'] and result['passed']
    assert result['checks']['energy_balance']
    manifest = json.loads((tmp_path / 'rest' / 'manifest.json').read_text())
    assert manifest['passed']
    assert manifest['config_hash'] == parse_config(REST).config_hash()
    assert set(manifest['versions']) >= {'python', 'numpy', 'scipy'}
    assert (tmp_path / 'rest' / 'diagnostics.csv').exists()
    assert (tmp_path / 'rest' / 'apriori.json').exists()


def test_runs_are_deterministic(tmp_path):
    cfg = parse_config(DROP)
    first = run_scenario(cfg, tmp_path / 'a')
    second = run_scenario(cfg, tmp_path / 'b')
    assert first['success'] and second['success']
    assert (tmp_path / 'a' / 'diagnostics.csv').read_text() == (tmp_path / 'b' / 'diagnostics.csv').read_text()
    assert (tmp_path / 'a' / 'boundary.csv').read_text() == (tmp_path / 'b' / 'boundary.csv').read_text()

    apriori = json.loads((tmp_path / 'a' / 'apriori.json').read_text())
    assert len(apriori['boundary']['seminorms']) == 4
    assert apriori['fractional'][0]['alpha'] == 0.25
    assert 'pullback_l1' in apriori['lagrangian']


def test_nonconvergence_writes_partial_outputs(tmp_path):
    text = DROP.replace('mu = 1.0', 'mu = 0.1\neps_floor = 0.001\ninner_maxit = 1\ninner_tol = 1e-14')
    result = run_scenario(parse_config(text), tmp_path / 'stuck')
    assert not result['success']
    failure = json.loads((tmp_path / 'stuck' / 'failure.json').read_text())
    assert failure['error'] == 'SolverNonconvergenceError'
    assert failure['iterations'] >= 1
    assert not json.loads((tmp_path / 'stuck' / 'manifest.json').read_text())['passed']


def test_inequality_suite_passes(tmp_path):
    result = inequality_suite(parse_config(SUITE), tmp_path / 'suite', workers=2)
    assert result['passed']
    summary = json.loads((tmp_path / 'suite' / 'inequalities.json').read_text())
    assert set(summary['reports']) == {'weighted_poincare', 'truncation_tail', 'ladyzhenskaya'}
    assert summary['reports']['weighted_poincare']['violations'] == []
    assert not (tmp_path / 'suite' / 'violations').exists()


def test_empty_suite_passes(tmp_path):
    result = inequality_suite(parse_config(SUITE.replace('count = 4', 'count = 0')), tmp_path / 'empty', workers=1)
    assert result['passed']


def test_shrunk_right_side_fails_with_snapshots(tmp_path):
    text = SUITE.replace('lemmas = ["weighted_poincare", "truncation_tail", "ladyzhenskaya"]',
                         'lemmas = ["weighted_poincare"]\nrhs_scale = 0.01')
    result = inequality_suite(parse_config(text), tmp_path / 'faulty', workers=2)
    assert not result['passed']
    assert list((tmp_path / 'faulty' / 'violations').glob('weighted_poincare_*_z.bin'))


def test_epsilon_run(tmp_path):
    text = DROP + "\n[epsilon]\neps_list = [0.1, 0.03]\n"
    result = epsilon_run(parse_config(text), tmp_path / 'eps', workers=2)
    assert result['success']
    report = json.loads((tmp_path / 'eps' / 'epsilon.json').read_text())
    assert report['complete']
    assert len(report['l2h1_differences']) == 1


def test_main_exit_codes(tmp_path, quiet_logging):
    bad = tmp_path / 'bad.toml'
    bad.write_text("[solver]\neps_floor = -1.0\n")
    assert main(['run', str(bad)]) == 2

    good = tmp_path / 'rest.toml'
    good.write_text(REST)
    out = tmp_path / 'out'
    assert main(['run', str(good), '--out', str(out)]) == 0
    assert main(['report', str(out)]) == 0
    assert (out / 'summary.xlsx').exists()
    assert main(['report', str(tmp_path / 'missing')]) == 1


def test_drop_run_checks_flow_determinant(tmp_path, monkeypatch):
    result = run_scenario(parse_config(DROP), tmp_path / 'drop')
    assert result['checks']['flow_det']
    apriori = json.loads((tmp_path / 'drop' / 'apriori.json').read_text())
    assert apriori['lagrangian']['det_error'] < ins_harness.DET_TOLERANCE

    monkeypatch.setattr(ins_harness, 'DET_TOLERANCE', -1.0)
    strict = run_scenario(parse_config(DROP), tmp_path / 'strict')
    assert strict['success'] and not strict['passed']
    assert not strict['checks']['flow_det']


def test_unexpected_error_still_writes_manifest(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("functional evaluation broke")

    monkeypatch.setattr(ins_harness, 'apriori_functionals', broken)
    result = run_scenario(parse_config(REST), tmp_path / 'broken')
    assert not result['success'] and not result['passed']
    failure = json.loads((tmp_path / 'broken' / 'failure.json').read_text())
    assert failure['error'] == 'RuntimeError'
    manifest = json.loads((tmp_path / 'broken' / 'manifest.json').read_text())
    assert not manifest['passed']
    assert 'simulate' in manifest['timings']


def test_run_has_no_workers_option():
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(['run', 'scenario.toml', '--workers', '2'])
    assert parser.parse_args(['ineq', 'suite.toml', '--workers', '2']).workers == 2
    assert parser.parse_args(['epsilon', 'eps.toml', '--workers', '3']).workers == 3
