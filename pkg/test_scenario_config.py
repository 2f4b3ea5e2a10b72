"""
Tests for scenario file parsing and emission
"""

import pytest

from scenario_config import ConfigError, ScenarioConfig, emit_config, load_config, parse_config

TAYLOR_GREEN = """\
[scenario]
name = "taylor_green"
n = 32

[solver]
mu = 0.01
dt = 0.001
T_end = 0.02
"""


def test_missing_keys_take_defaults():
    cfg = parse_config(TAYLOR_GREEN)
    assert cfg.scenario.name == 'taylor_green'
    assert cfg.scenario.n == 32
    assert cfg.solver.mu == 0.01
    assert cfg.solver.eps_floor == ScenarioConfig().solver.eps_floor
    assert cfg.epsilon.eps_list == [1e-2, 1e-3, 1e-4]

    solver_cfg = cfg.solver_config()
    assert solver_cfg.n == 32 and solver_cfg.n_steps == 20


def test_integers_are_accepted_for_floats():
    cfg = parse_config("[solver]\nmu = 1\n")
    assert cfg.solver.mu == 1.0 and isinstance(cfg.solver.mu, float)


def test_invariant_violation_reports_line():
    text = "[scenario]\nname = \"drop\"\n\n[solver]\ndt = 0.001\neps_floor = -1.0\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == 6
    assert 'eps_floor' in str(info.value)


def test_unknown_key_and_section():
    with pytest.raises(ConfigError) as info:
        parse_config("[solver]\nmu = 0.1\nviscosity = 0.1\n")
    assert info.value.line == 3
    with pytest.raises(ConfigError) as info:
        parse_config("[plots]\ncolor = \"red\"\n")
    assert info.value.line == 1


def test_type_mismatch():
    with pytest.raises(ConfigError) as info:
        parse_config("[scenario]\nn = 32.0\n")
    assert info.value.line == 2
    with pytest.raises(ConfigError):
        parse_config("[solver]\ndealias = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[diagnostics]\np_list = [1.0, \"two\"]\n")


def test_malformed_toml():
    with pytest.raises(ConfigError) as info:
        parse_config("[solver]\nmu = = 1\n")
    assert info.value.line == 2


@pytest.mark.parametrize('text', [
    "[epsilon]\neps_list = [1e-3, 1e-2]\n",
    "[scenario]\nn = 24\n",
    "[scenario]\nname = \"vortex\"\n",
    "[ensemble]\nlemmas = [\"sobolev\"]\n",
    "[diagnostics]\nalpha_list = [0.5]\n",
    "[ensemble]\nkmax = 40\n",
])
def test_invariants(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_emit_round_trip(tmp_path):
    cfg = parse_config(TAYLOR_GREEN + "\n[epsilon]\neps_list = [0.1, 0.003]\n")
    text = emit_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert emit_config(again) == text
    assert again.config_hash() == cfg.config_hash()

    path = tmp_path / 'scenario.toml'
    path.write_text(text)
    assert load_config(path) == cfg


def test_hash_changes_with_content():
    assert parse_config(TAYLOR_GREEN).config_hash() != parse_config(TAYLOR_GREEN.replace('0.01', '0.02')).config_hash()
