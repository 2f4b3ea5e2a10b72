"""
Conserved quantities, a-priori functionals and comparison bounds for solver runs
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp, trapezoid

from config import DIAGNOSTICS_CONFIG, SOLVER_CONFIG
from fields import nodal_lp, spectral_ops
from solver import FluidState, SolverConfig, simulate

logger = logging.getLogger(__name__)


@dataclass
class DiagnosticsRecord:
    """Identities and norms at one time"""

    t: float
    kinetic_energy: float
    cumulative_dissipation: float
    total_mass: float
    total_momentum: List[float]
    rho_min: float
    rho_max: float
    rho_lp: Dict[float, float]
    grad_v_l2: float
    sqrho_vt_l2: float
    hess_v_l2: float
    grad_P_l2: float
    weighted_vt: float
    weighted_grad_vt_cum: float
    grad_vt_l2: float = 0.0
    divergence_l2: float = 0.0
    cumulative_scheme_dissipation: float = 0.0
    holder_seminorm: Optional[float] = None

    def to_row(self) -> Dict[str, Any]:
        row = {k: v for k, v in asdict(self).items() if k not in ('total_momentum', 'rho_lp')}
        for i, m in enumerate(self.total_momentum):
            row[f'momentum_{i}'] = m
        for p, value in self.rho_lp.items():
            row[f'rho_l{p:g}'] = value
        return row


@dataclass
class Trajectory:
    """Recorded states plus one record per time step"""

    states: List[FluidState]
    records: List[DiagnosticsRecord]
    mu: float = SOLVER_CONFIG['mu']
    rho_star: float = SOLVER_CONFIG['rho_star']


@dataclass
class AprioriReport:
    """H1 functional, time-weighted quantities and shifted Bochner norms"""

    times: List[float]
    h1_lhs: List[float]
    gronwall_rhs: List[float]
    fitted_C0: float
    weighted_vt_sup: float
    weighted_grad_vt_cum: float
    shift_norms: List[Dict[str, Any]] = field(default_factory=list)
    holder_l1_linf: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _l2(values: np.ndarray, cell_volume: float) -> float:
    return float(np.sqrt((values ** 2).sum() * cell_volume))


def conserved_report(state: FluidState, p_list: Optional[Sequence[float]] = None) -> DiagnosticsRecord:
    """
    Quadrature of the conserved quantities and regularity norms of one state

    Cumulative entries are left at zero; DiagnosticsTracker fills them along a run.
    """
    p_list = p_list if p_list is not None else DIAGNOSTICS_CONFIG['p_list']
    grid = state.grid
    ops = spectral_ops(grid)
    vol = grid.cell_volume
    rho = state.rho.values
    v = state.v.as_array()

    grad_v = ops.gradient_tensor(v)
    hess_v = np.stack([ops.hessian(component) for component in v])
    grad_P = ops.grad(state.P.values)
    if state.vt is not None:
        vt = state.vt.as_array()
        sqrho_vt = _l2(np.sqrt(rho) * vt, vol)
        grad_vt = _l2(ops.gradient_tensor(vt), vol)
    else:
        sqrho_vt = grad_vt = 0.0

    return DiagnosticsRecord(
        t=state.t,
        kinetic_energy=float(0.5 * (rho * (v ** 2).sum(axis=0)).sum() * vol),
        cumulative_dissipation=0.0,
        total_mass=float(rho.sum() * vol),
        total_momentum=[float((rho * component).sum() * vol) for component in v],
        rho_min=float(rho.min()),
        rho_max=float(rho.max()),
        rho_lp={float(p): nodal_lp(np.abs(rho), grid, p) for p in p_list},
        grad_v_l2=_l2(grad_v, vol),
        sqrho_vt_l2=sqrho_vt,
        hess_v_l2=_l2(hess_v, vol),
        grad_P_l2=_l2(grad_P, vol),
        weighted_vt=state.t * sqrho_vt ** 2,
        weighted_grad_vt_cum=0.0,
        grad_vt_l2=grad_vt,
        divergence_l2=_l2(ops.div(v), vol),
    )


class DiagnosticsTracker:
    """Per-step observer accumulating the time integrals of a run"""

    def __init__(self, mu: float, p_list: Optional[Sequence[float]] = None):
        self.mu = mu
        self.p_list = p_list
        self.records: List[DiagnosticsRecord] = []
        self._dissipation = 0.0
        self._weighted_grad_vt = 0.0
        self._scheme_dissipation = 0.0

    def __call__(self, state: FluidState):
        record = conserved_report(state, self.p_list)
        if self.records:
            dt = state.t - self.records[-1].t
            # implicit update: right-endpoint rule
            self._dissipation += self.mu * dt * record.grad_v_l2 ** 2
            self._weighted_grad_vt += dt * state.t * record.grad_vt_l2 ** 2
            self._scheme_dissipation += state.scheme_dissipation
        record.cumulative_dissipation = self._dissipation
        record.weighted_grad_vt_cum = self._weighted_grad_vt
        record.cumulative_scheme_dissipation = self._scheme_dissipation
        self.records.append(record)


def run_with_diagnostics(initial: FluidState, cfg: SolverConfig, p_list: Optional[Sequence[float]] = None,
                         record_every: Optional[int] = None, **simulate_kwargs) -> Trajectory:
    """Simulate and track diagnostics at every step"""
    tracker = DiagnosticsTracker(cfg.mu, p_list)
    states = simulate(initial, cfg, record_every=record_every, observer=tracker, **simulate_kwargs)
    return Trajectory(states, tracker.records, cfg.mu, cfg.rho_star)


def trajectory_from_states(states: Sequence[FluidState], mu: float, rho_star: float = 1.0,
                           p_list: Optional[Sequence[float]] = None) -> Trajectory:
    """Build a trajectory whose records follow the given states"""
    tracker = DiagnosticsTracker(mu, p_list)
    for state in states:
        tracker(state)
    return Trajectory(list(states), tracker.records, mu, rho_star)


def energy_residual(trajectory: Trajectory, floor: Optional[float] = None, discrete: bool = False) -> np.ndarray:
    """
    |E(t) + mu int |grad v|^2 - E(0)| / max(E(0), floor) per record

    With discrete=True the energy the time stepping removed (implicit increment,
    dealias filter, pressure correction, floor mass) is added to the balance, which
    leaves transport and interpolation errors only.
    """
    records = trajectory.records
    if len(records) < 2:
        raise ValueError("energy_residual needs at least two slices")
    floor = DIAGNOSTICS_CONFIG['energy_floor'] if floor is None else floor
    e0 = records[0].kinetic_energy
    scale = max(e0, floor)
    balance = np.array([r.kinetic_energy + r.cumulative_dissipation for r in records])
    if discrete:
        balance += np.array([r.cumulative_scheme_dissipation for r in records])
    return np.abs(balance - e0) / scale


def shift_range_ok(p: float, r: float, s: float) -> bool:
    """2D admissible ranges of the integrability shift: p >= 2, 2 <= r < 2p/(p-2), 1 <= s < 2, ps < 2(p-s)"""
    if p < 2 or r < 2 or not 1 <= s < 2:
        return False
    r_crit = math.inf if p == 2 else (2 * p / (p - 2) if math.isfinite(p) else 2.0)
    if not r < r_crit:
        return False
    return s < 2 if math.isinf(p) else p * s < 2 * (p - s)


def shift_exponent(p: float, s: float) -> float:
    """beta = (2p - 2s - ps)/(2ps)"""
    if math.isinf(p):
        return (2 - s) / (2 * s)
    return (2 * p - 2 * s - p * s) / (2 * p * s)


def _bochner(samples: np.ndarray, widths: np.ndarray, p: float) -> float:
    if samples.size == 0:
        return 0.0
    if math.isinf(p):
        return float(samples.max())
    return float((widths * samples ** p).sum() ** (1.0 / p))


def apriori_functionals(trajectory: Trajectory, prs_table: Optional[Sequence[Sequence[float]]] = None) -> AprioriReport:
    """
    Left-hand sides of the H1 bound, the time-weighted bounds and the shifted norms

    Args:
        trajectory: run with records at every step and states at the output cadence
        prs_table: rows (p, r, s)

    Returns:
        AprioriReport; C0 is the smallest constant making the H1 bound hold on this run
    """
    prs_table = prs_table if prs_table is not None else DIAGNOSTICS_CONFIG['prs_table']
    records = trajectory.records
    rho_star = trajectory.rho_star
    times = np.array([r.t for r in records])

    integrand = np.array([r.sqrho_vt_l2 ** 2 + (r.hess_v_l2 ** 2 + r.grad_P_l2 ** 2) / rho_star for r in records])
    widths = np.diff(times)
    integral = np.concatenate([[0.0], np.cumsum(widths * integrand[1:])])
    h1_lhs = np.array([r.grad_v_l2 ** 2 for r in records]) + 0.5 * integral

    x0 = records[0].grad_v_l2 ** 2
    e0 = 2.0 * records[0].kinetic_energy
    needed = [0.0]
    for value in h1_lhs:
        if value <= x0:
            continue
        if e0 <= 0:
            needed.append(math.inf)
            continue
        needed.append(math.log(math.log(math.e + value) / math.log(math.e + x0)) / e0)
    fitted_c0 = max(needed)
    try:
        rhs = (math.e + x0) ** math.exp(fitted_c0 * e0) - math.e
    except OverflowError:
        rhs = math.inf
    logger.info(f"H1 bound: fitted C0={fitted_c0:.4g} over {len(records)} slices")

    report = AprioriReport(
        times=times.tolist(),
        h1_lhs=h1_lhs.tolist(),
        gronwall_rhs=[float(rhs)] * len(records),
        fitted_C0=float(fitted_c0),
        weighted_vt_sup=float(max(r.weighted_vt for r in records)),
        weighted_grad_vt_cum=float(records[-1].weighted_grad_vt_cum),
    )
    report.shift_norms = _shift_norms(trajectory.states, prs_table)
    report.holder_l1_linf = _holder_l1_linf(trajectory.states)
    return report


def _state_norm_samples(states: Sequence[FluidState], r_values: Sequence[float]) -> Dict[str, np.ndarray]:
    samples: Dict[str, List] = {'t': [], 'grad_v_inf': []}
    for r in r_values:
        samples[f'hess_{r}'] = []
        samples[f'gradP_{r}'] = []
    for state in states:
        ops = spectral_ops(state.grid)
        v = state.v.as_array()
        grad_mag = np.sqrt((ops.gradient_tensor(v) ** 2).sum(axis=(0, 1)))
        hess_mag = np.sqrt((np.stack([ops.hessian(c) for c in v]) ** 2).sum(axis=(0, 1, 2)))
        gradp_mag = np.sqrt((ops.grad(state.P.values) ** 2).sum(axis=0))
        samples['t'].append(state.t)
        samples['grad_v_inf'].append(float(grad_mag.max()))
        for r in r_values:
            samples[f'hess_{r}'].append(nodal_lp(hess_mag, state.grid, r))
            samples[f'gradP_{r}'].append(nodal_lp(gradp_mag, state.grid, r))
    return {k: np.array(v) for k, v in samples.items()}


def _shift_norms(states: Sequence[FluidState], prs_table: Sequence[Sequence[float]]) -> List[Dict[str, Any]]:
    if not prs_table:
        return []
    r_values = sorted({float(row[1]) for row in prs_table})
    samples = _state_norm_samples(states, r_values)
    t = samples['t']
    widths = np.diff(t)
    sqrt_t = np.sqrt(t[1:])
    grad_inf = samples['grad_v_inf']
    rows = []
    for p, r, s in prs_table:
        p, r, s = float(p), float(r), float(s)
        in_range = shift_range_ok(p, r, s)
        if not in_range:
            logger.warning(f"(p, r, s) = ({p}, {r}, {s}) lies outside the admissible shift ranges; computed anyway")
        rows.append({
            'p': p, 'r': r, 's': s,
            'sqrt_t_hess_v': _bochner(sqrt_t * samples[f'hess_{r}'][1:], widths, p),
            'sqrt_t_grad_P': _bochner(sqrt_t * samples[f'gradP_{r}'][1:], widths, p),
            'grad_v_linf_s_integral': float(trapezoid(grad_inf ** s, t)) if len(t) > 1 else 0.0,
            'beta': shift_exponent(p, s),
            'in_range': in_range,
        })
    return rows


def _holder_l1_linf(states: Sequence[FluidState]) -> Dict[str, float]:
    """int |grad v|_inf against 4^(2/3) T^(1/6) |sqrt(t) grad v|_{L3(Linf)}"""
    samples = _state_norm_samples(states, [])
    t = samples['t']
    if len(t) < 2:
        return {'lhs': 0.0, 'rhs': 0.0}
    widths = np.diff(t)
    lhs = float(trapezoid(samples['grad_v_inf'], t))
    weighted = _bochner(np.sqrt(t[1:]) * samples['grad_v_inf'][1:], widths, 3.0)
    horizon = t[-1] - t[0]
    return {'lhs': lhs, 'rhs': float(4.0 ** (2.0 / 3.0) * horizon ** (1.0 / 6.0) * weighted)}


def _check_samples(f_samples: Sequence[float], times: Sequence[float]):
    f = np.asarray(f_samples, dtype=float)
    t = np.asarray(times, dtype=float)
    if f.shape != t.shape:
        raise ValueError("f_samples and times must have the same length")
    if np.any(f < 0):
        raise ValueError("Comparison bounds need nonnegative f")
    return f, t


def gronwall_log_bound(X0: float, f_samples: Sequence[float], times: Sequence[float]) -> np.ndarray:
    """(e + X0)^(exp int_0^t f) - e with the integral by the trapezoid rule"""
    if X0 < 0:
        raise ValueError(f"X0 must be nonnegative, got {X0}")
    f, t = _check_samples(f_samples, times)
    integral = cumulative_trapezoid(f, t, initial=0.0)
    with np.errstate(over='ignore'):
        return (math.e + X0) ** np.exp(integral) - math.e


@dataclass
class RiccatiBound:
    bound: np.ndarray
    blowup: bool
    blowup_time: Optional[float] = None


def riccati_bound_3d(X0: float, f_samples: Sequence[float], times: Sequence[float]) -> RiccatiBound:
    """
    X(t) <= X0 / sqrt(1 - 2 X0^2 int_0^t f) while the denominator is positive

    Returns:
        RiccatiBound with +inf past the blowup time, which is located by linear
        interpolation of the integral
    """
    f, t = _check_samples(f_samples, times)
    integral = cumulative_trapezoid(f, t, initial=0.0)
    denominator = 1.0 - 2.0 * X0 ** 2 * integral
    bound = np.full_like(integral, math.inf)
    alive = denominator > 0
    bound[alive] = X0 / np.sqrt(denominator[alive])
    if alive.all():
        return RiccatiBound(bound, False)
    first = int(np.argmin(alive))
    if first == 0:
        return RiccatiBound(bound, True, float(t[0]))
    target = 1.0 / (2.0 * X0 ** 2)
    t_a, t_b = t[first - 1], t[first]
    f_a, f_b = integral[first - 1], integral[first]
    blowup_time = t_a + (target - f_a) * (t_b - t_a) / (f_b - f_a) if f_b > f_a else t_b
    logger.info(f"Riccati bound blows up at t={blowup_time:.6g}")
    return RiccatiBound(bound, True, float(blowup_time))


def integrate_comparison_ode(kind: str, X0: float, times: Sequence[float], f_samples: Sequence[float]) -> np.ndarray:
    """
    Reference solution of X' = f X log(e + X) ('log') or X' = f X^3 ('cubic')

    f is linear between samples. Values after a blowup are NaN.
    """
    f, t = _check_samples(f_samples, times)
    if kind == 'log':
        def rhs(tau, x):
            return np.interp(tau, t, f) * x * np.log(math.e + x)
    elif kind == 'cubic':
        def rhs(tau, x):
            return np.interp(tau, t, f) * x ** 3
    else:
        raise ValueError(f"Unknown comparison ODE: {kind}")

    def escape(tau, x):
        return 1e12 - x[0]

    escape.terminal = True
    max_step = float(np.min(np.diff(t))) if len(t) > 1 else np.inf
    solution = solve_ivp(rhs, (t[0], t[-1]), [X0], method='DOP853', t_eval=t, rtol=1e-11,
                         atol=1e-13, max_step=max_step, events=escape)
    values = np.full(t.shape, np.nan)
    values[:solution.y.shape[1]] = solution.y[0]
    return values


def threed_formulas(rho_star: float, mu: float, e0: float, g0: float, c: float = 1.0) -> Dict[str, float]:
    """
    Smallness margin and existence times of the 3D theory

    Returns:
        smallness_margin = c mu^2 - rho*^(3/2) e0 g0
        local_time = (mu/rho*)^7 c rho* / (e0^2 g0^6)
        h1_time = c / (rho*^6 e0^2 g0^6)
    """
    if rho_star <= 0 or mu <= 0 or c <= 0:
        raise ValueError("rho_star, mu and c must be positive")
    if e0 < 0 or g0 < 0:
        raise ValueError("e0 and g0 must be nonnegative")
    margin = c * mu ** 2 - rho_star ** 1.5 * e0 * g0
    if e0 == 0 or g0 == 0:
        return {'smallness_margin': margin, 'local_time': math.inf, 'h1_time': math.inf}
    local_time = (mu / rho_star) ** 7 * c * rho_star / (e0 ** 2 * g0 ** 6)
    h1_time = c / (rho_star ** 6 * e0 ** 2 * g0 ** 6)
    return {'smallness_margin': margin, 'local_time': local_time, 'h1_time': h1_time}


def write_diagnostics_csv(records: Sequence[DiagnosticsRecord], path: Path) -> Path:
    """One DiagnosticsRecord per row"""
    path = Path(path)
    rows = [r.to_row() for r in records]
    if not rows:
        path.write_text('')
        return path
    with open(path, 'w', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"Wrote {len(rows)} diagnostics rows to {path}")
    return path


def write_apriori_json(report: AprioriReport, path: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    """The report plus optional extra sections"""
    path = Path(path)
    data = report.to_dict()
    data.update(extra or {})
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float))
    return path
