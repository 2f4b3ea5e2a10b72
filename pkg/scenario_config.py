"""
Scenario files: TOML text with [scenario], [solver], [diagnostics], [output],
[epsilon] and [ensemble] sections
"""

import hashlib
import json
import logging
import math
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from config import DIAGNOSTICS_CONFIG, ENSEMBLE_CONFIG, LAGRANGIAN_CONFIG, OUTPUT_CONFIG, SOLVER_CONFIG
from fields import Grid
from inequalities import DENSITY_MODELS, LEMMAS
from scenarios import SCENARIOS, VELOCITY_KINDS
from solver import SolverConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unknown keys, type mismatches and invariant violations"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


def _list(kind: str, default: List[Any]):
    return field(default_factory=lambda: [list(x) if isinstance(x, (list, tuple)) else x for x in default],
                 metadata={'kind': kind})


@dataclass
class ScenarioSection:
    name: str = 'drop'
    n: int = SOLVER_CONFIG['n']
    rho_star: float = SOLVER_CONFIG['rho_star']
    amplitude: float = 1.0
    radius: float = 0.25
    center: List[float] = _list('floats', [0.5, 0.5])
    velocity: str = 'taylor_green'
    eta1: float = 1.0
    eta2: float = 0.0
    seed: int = 0
    kmax: int = 4


@dataclass
class SolverSection:
    mu: float = SOLVER_CONFIG['mu']
    dt: float = SOLVER_CONFIG['dt']
    eps_floor: float = SOLVER_CONFIG['eps_floor']
    inner_tol: float = SOLVER_CONFIG['inner_tol']
    inner_maxit: int = SOLVER_CONFIG['inner_maxit']
    T_end: float = SOLVER_CONFIG['T_end']
    cfl_bound: float = SOLVER_CONFIG['cfl_bound']
    dealias: bool = SOLVER_CONFIG['dealias']


@dataclass
class DiagnosticsSection:
    p_list: List[float] = _list('floats', DIAGNOSTICS_CONFIG['p_list'])
    prs_table: List[List[float]] = _list('table', DIAGNOSTICS_CONFIG['prs_table'])
    alpha_list: List[float] = _list('floats', DIAGNOSTICS_CONFIG['alpha_list'])
    holder_alpha: float = DIAGNOSTICS_CONFIG['holder_alpha']
    track_boundary: bool = True
    markers: int = LAGRANGIAN_CONFIG['markers']


@dataclass
class OutputSection:
    directory: str = ''
    snapshot_every: int = OUTPUT_CONFIG['snapshot_every']
    record_every: int = OUTPUT_CONFIG['record_every']


@dataclass
class EpsilonSection:
    eps_list: List[float] = _list('floats', [1e-2, 1e-3, 1e-4])


@dataclass
class EnsembleSection:
    seed: int = ENSEMBLE_CONFIG['seed']
    count: int = ENSEMBLE_CONFIG['count']
    spectrum_decay: float = 2.0
    density_model: str = 'patch'
    n_list: List[int] = _list('ints', ENSEMBLE_CONFIG['n_list'])
    kmax: int = ENSEMBLE_CONFIG['kmax']
    mass: float = ENSEMBLE_CONFIG['mass']
    truncation_n: int = ENSEMBLE_CONFIG['truncation_n']
    lemmas: List[str] = _list('strs', list(LEMMAS))
    rhs_scale: float = 1.0


SECTIONS = {
    'scenario': ScenarioSection,
    'solver': SolverSection,
    'diagnostics': DiagnosticsSection,
    'output': OutputSection,
    'epsilon': EpsilonSection,
    'ensemble': EnsembleSection,
}


@dataclass
class ScenarioConfig:
    """A validated scenario file"""

    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    solver: SolverSection = field(default_factory=SolverSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    output: OutputSection = field(default_factory=OutputSection)
    epsilon: EpsilonSection = field(default_factory=EpsilonSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(rho_star=self.scenario.rho_star, n=self.scenario.n, **asdict(self.solver))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(emit_config(self).encode('utf-8')).hexdigest()


def _kind(f) -> str:
    if 'kind' in f.metadata:
        return f.metadata['kind']
    return {bool: 'bool', int: 'int', float: 'float', str: 'str'}[type(f.default)]


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(kind: str, value: Any) -> Any:
    """Convert a TOML value to the field kind, or raise TypeError"""
    if kind == 'bool' and isinstance(value, bool):
        return value
    if kind == 'int' and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind == 'float' and _is_number(value):
        return float(value)
    if kind == 'str' and isinstance(value, str):
        return value
    if kind == 'floats' and isinstance(value, list) and all(_is_number(v) for v in value):
        return [float(v) for v in value]
    if kind == 'ints' and isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool)
                                                        for v in value):
        return list(value)
    if kind == 'strs' and isinstance(value, list) and all(isinstance(v, str) for v in value):
        return list(value)
    if kind == 'table' and isinstance(value, list) and all(
            isinstance(row, list) and all(_is_number(v) for v in row) for row in value):
        return [[float(v) for v in row] for row in value]
    raise TypeError(f"expected {kind}, got {type(value).__name__}")


def _line_of(text: str, section: str, key: Optional[str] = None) -> Optional[int]:
    """1-based line of a section header or of a key inside it"""
    current = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        header = re.match(r'^\[\s*([A-Za-z0-9_]+)\s*\]', line)
        if header:
            current = header.group(1)
            if key is None and current == section:
                return number
            continue
        if key is not None and current == section and re.match(rf'^{re.escape(key)}\s*=', line):
            return number
    return None


def _invariant_errors(cfg: ScenarioConfig) -> List[Tuple[str, str, str]]:
    """(section, key, message) for every broken invariant"""
    errors = []
    sc, so = cfg.scenario, cfg.solver
    if sc.name not in SCENARIOS:
        errors.append(('scenario', 'name', f"unknown scenario '{sc.name}'"))
    if sc.velocity not in VELOCITY_KINDS:
        errors.append(('scenario', 'velocity', f"unknown velocity '{sc.velocity}'"))
    try:
        Grid(sc.n, 2)
    except ValueError as e:
        errors.append(('scenario', 'n', str(e)))
    if sc.rho_star <= 0:
        errors.append(('scenario', 'rho_star', "rho_star must be positive"))
    for key in ('eta1', 'eta2'):
        value = getattr(sc, key)
        if not 0 <= value <= sc.rho_star:
            errors.append(('scenario', key, f"{key} must lie in [0, rho_star]"))
    if sc.name == 'two_phase' and sc.eta1 == 0 and sc.eta2 == 0:
        errors.append(('scenario', 'eta1', "two_phase needs positive mass"))
    if len(sc.center) != 2:
        errors.append(('scenario', 'center', "center needs two coordinates"))
    if not 0 < sc.radius < 0.5:
        errors.append(('scenario', 'radius', "radius must lie in (0, 1/2)"))
    if 2 * sc.kmax >= sc.n:
        errors.append(('scenario', 'kmax', "kmax is not resolved on n"))

    checks = [
        ('dt', so.dt > 0, "dt must be positive"),
        ('mu', so.mu > 0, "mu must be positive"),
        ('eps_floor', 0 <= so.eps_floor <= sc.rho_star, "eps_floor must lie in [0, rho_star]"),
        ('inner_tol', so.inner_tol > 0, "inner_tol must be positive"),
        ('inner_maxit', so.inner_maxit >= 1, "inner_maxit must be at least 1"),
        ('T_end', so.T_end > 0, "T_end must be positive"),
        ('cfl_bound', so.cfl_bound > 0, "cfl_bound must be positive"),
    ]
    errors += [('solver', key, message) for key, ok, message in checks if not ok]

    di = cfg.diagnostics
    if any(p < 1 for p in di.p_list):
        errors.append(('diagnostics', 'p_list', "Lp exponents must be >= 1"))
    if any(len(row) != 3 for row in di.prs_table):
        errors.append(('diagnostics', 'prs_table', "rows must be (p, r, s)"))
    if any(not 0 < a < 0.5 for a in di.alpha_list):
        errors.append(('diagnostics', 'alpha_list', "alpha must lie in (0, 1/2)"))
    if not 0 < di.holder_alpha < 1:
        errors.append(('diagnostics', 'holder_alpha', "holder_alpha must lie in (0, 1)"))
    if di.markers < 8:
        errors.append(('diagnostics', 'markers', "at least 8 markers are needed"))

    out = cfg.output
    if out.snapshot_every < 0:
        errors.append(('output', 'snapshot_every', "snapshot_every must be nonnegative"))
    if out.record_every < 1:
        errors.append(('output', 'record_every', "record_every must be at least 1"))

    eps = cfg.epsilon.eps_list
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        errors.append(('epsilon', 'eps_list', "eps_list must be positive and strictly decreasing"))

    en = cfg.ensemble
    if en.count < 0:
        errors.append(('ensemble', 'count', "count must be nonnegative"))
    if en.density_model not in DENSITY_MODELS:
        errors.append(('ensemble', 'density_model', f"unknown density model '{en.density_model}'"))
    unknown = [lemma for lemma in en.lemmas if lemma not in LEMMAS]
    if unknown:
        errors.append(('ensemble', 'lemmas', f"unknown lemmas {unknown}"))
    for n in en.n_list:
        try:
            Grid(n, 2)
        except ValueError as e:
            errors.append(('ensemble', 'n_list', str(e)))
            break
    if en.n_list and 2 * en.kmax >= min(en.n_list):
        errors.append(('ensemble', 'kmax', "kmax is not resolved on every n"))
    if not 0 < en.mass <= sc.rho_star:
        errors.append(('ensemble', 'mass', "mass must lie in (0, rho_star]"))
    if en.truncation_n < 2:
        errors.append(('ensemble', 'truncation_n', "truncation_n must be at least 2"))
    if en.rhs_scale <= 0:
        errors.append(('ensemble', 'rhs_scale', "rhs_scale must be positive"))
    return errors


def parse_config(text: str) -> ScenarioConfig:
    """
    Parse and validate scenario text

    Missing sections and keys take their defaults.

    Raises:
        ConfigError: with the 1-based line of the offending key when known
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        found = re.search(r'line (\d+)', str(e))
        raise ConfigError(f"malformed config: {e}", int(found.group(1)) if found else None) from e

    sections = {}
    for name, values in raw.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]", _line_of(text, name))
        if not isinstance(values, dict):
            raise ConfigError(f"'{name}' must be a section", _line_of(text, name))
        known = {f.name: f for f in fields(SECTIONS[name])}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown key '{key}' in [{name}]", _line_of(text, name, key))
            try:
                kwargs[key] = _coerce(_kind(known[key]), value)
            except TypeError as e:
                raise ConfigError(f"[{name}] {key}: {e}", _line_of(text, name, key)) from e
        sections[name] = SECTIONS[name](**kwargs)

    cfg = ScenarioConfig(**sections)
    errors = _invariant_errors(cfg)
    if errors:
        section, key, message = errors[0]
        raise ConfigError(f"[{section}] {key}: {message}", _line_of(text, section, key))
    logger.debug(f"Parsed scenario '{cfg.scenario.name}' (hash {cfg.config_hash()[:12]})")
    return cfg


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    return parse_config(Path(path).read_text(encoding='utf-8'))


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return '[' + ', '.join(_format(v) for v in value) + ']'
    raise TypeError(f"Cannot format {type(value).__name__}")


def emit_config(cfg: ScenarioConfig) -> str:
    """Canonical text form; parse_config(emit_config(cfg)) == cfg"""
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        lines.extend(f"{f.name} = {_format(getattr(section, f.name))}" for f in fields(section))
        lines.append('')
    return '\n'.join(lines)
