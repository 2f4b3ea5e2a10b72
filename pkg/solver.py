"""
Variable-density incompressible Navier-Stokes solver on the 2D torus

Density is transported semi-Lagrangian with clipped cubic interpolation; the
momentum update is a semi-implicit Stokes problem with density-weighted inertia,
solved by conjugate gradients on divergence-free fields preconditioned by the
constant-coefficient Stokes operator. The old pressure gradient is carried along
the characteristic to its midpoint.
"""

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.sparse.linalg import LinearOperator, cg

from config import OUTPUT_CONFIG, SOLVER_CONFIG
from fields import Grid, ScalarField, VectorField, lp_norm, spectral_ops, write_snapshot

logger = logging.getLogger(__name__)


class SolverNonconvergenceError(RuntimeError):
    """Raised when the momentum solve misses inner_tol within inner_maxit iterations"""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.partial_states: List['FluidState'] = []


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping controls; defaults come from SOLVER_CONFIG"""

    mu: float = SOLVER_CONFIG['mu']
    dt: float = SOLVER_CONFIG['dt']
    eps_floor: float = SOLVER_CONFIG['eps_floor']
    rho_star: float = SOLVER_CONFIG['rho_star']
    n: int = SOLVER_CONFIG['n']
    inner_tol: float = SOLVER_CONFIG['inner_tol']
    inner_maxit: int = SOLVER_CONFIG['inner_maxit']
    T_end: float = SOLVER_CONFIG['T_end']
    cfl_bound: float = SOLVER_CONFIG['cfl_bound']
    dealias: bool = SOLVER_CONFIG['dealias']

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.rho_star <= 0:
            raise ValueError(f"rho_star must be positive, got {self.rho_star}")
        if not 0 <= self.eps_floor <= self.rho_star:
            raise ValueError(f"eps_floor must lie in [0, rho_star], got {self.eps_floor}")
        if self.inner_tol <= 0 or self.inner_maxit < 1:
            raise ValueError("inner_tol must be positive and inner_maxit at least 1")
        if self.T_end <= 0:
            raise ValueError(f"T_end must be positive, got {self.T_end}")
        Grid(self.n, 2)

    @property
    def grid(self) -> Grid:
        return Grid(self.n, 2)

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T_end / self.dt)))


@dataclass
class FluidState:
    """
    One time slice (t, rho, v, P, vt); vt is None at t = 0

    scheme_dissipation is the kinetic energy the time discretization removed in
    the step that produced this state (zero at t = 0).
    """

    t: float
    rho: ScalarField
    v: VectorField
    P: ScalarField
    vt: Optional[VectorField] = None
    scheme_dissipation: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.rho.grid

    @classmethod
    def at_rest(cls, rho: ScalarField, t: float = 0.0) -> 'FluidState':
        return cls(t, rho, VectorField.zeros(rho.grid), ScalarField.zeros(rho.grid))


def validate_state(state: FluidState, cfg: SolverConfig):
    """Raise ValueError when the state breaks the density bounds or grid agreement"""
    if state.v.grid != state.rho.grid or state.P.grid != state.rho.grid:
        raise ValueError("rho, v and P must share one grid")
    if state.grid.d != 2:
        raise ValueError("The solver steps 2D states only")
    lo, hi = state.rho.values.min(), state.rho.values.max()
    if lo < 0 or hi > cfg.rho_star * (1 + 1e-12):
        raise ValueError(f"Density range [{lo}, {hi}] outside [0, {cfg.rho_star}]")


def _periodic_interp(values: np.ndarray, coords: np.ndarray, order: int = 3) -> np.ndarray:
    return ndimage.map_coordinates(values, coords, order=order, mode='grid-wrap')


def _departure_points(grid: Grid, v_arr: np.ndarray, dt: float) -> np.ndarray:
    """Index-space feet of the backward characteristics, midpoint RK2"""
    nodes = np.indices(grid.shape, dtype=float)
    scale = dt / grid.h
    mid = nodes - 0.5 * scale * v_arr
    v_mid = np.stack([_periodic_interp(v_arr[i], mid) for i in range(grid.d)])
    return nodes - scale * v_mid


def _clipped_interp(values: np.ndarray, feet: np.ndarray) -> np.ndarray:
    """Cubic interpolation clipped to the range of the enclosing cell"""
    n = values.shape[0]
    raw = _periodic_interp(values, feet)
    base = np.floor(feet).astype(int)
    corners = [values[tuple((base[a] + offset[a]) % n for a in range(len(offset)))]
               for offset in itertools.product((0, 1), repeat=feet.shape[0])]
    return np.clip(raw, np.minimum.reduce(corners), np.maximum.reduce(corners))


def advect_density(rho: ScalarField, v_half: VectorField, dt: float,
                   cfl_bound: Optional[float] = None) -> ScalarField:
    """
    Semi-Lagrangian density update rho(x) <- rho(foot(x))

    Args:
        rho: density at the old time
        v_half: divergence-free transporting velocity
        dt: time step
        cfl_bound: CFL number above which a warning is logged

    Returns:
        Density at the new time, inside [min rho, max rho]
    """
    grid = rho.grid
    v_arr = v_half.as_array()
    if not np.any(v_arr):
        return rho.copy()

    bound = SOLVER_CONFIG['cfl_bound'] if cfl_bound is None else cfl_bound
    cfl = dt * float(np.sqrt((v_arr ** 2).sum(axis=0)).max()) / grid.h
    if cfl > bound:
        logger.warning(f"CFL number {cfl:.3f} exceeds configured bound {bound}")

    feet = _departure_points(grid, v_arr, dt)
    updated = _clipped_interp(rho.values, feet)
    return ScalarField(grid, np.clip(updated, rho.values.min(), rho.values.max()))


def _advected_velocity(state: FluidState, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Velocity at the feet of the characteristics and the pressure correction

    The correction (grad P(foot) - grad P(x))/2 moves the old pressure force to
    the midpoint of the characteristic.
    """
    grid = state.grid
    shape = (grid.d,) + grid.shape
    v_arr = state.v.as_array()
    correction = np.zeros(shape)
    if not np.any(v_arr):
        return np.zeros(shape), correction
    feet = _departure_points(grid, v_arr, dt)
    v_tilde = np.stack([_periodic_interp(v_arr[i], feet) for i in range(grid.d)])
    if np.any(state.P.values):
        grad_p = spectral_ops(grid).grad(state.P.values)
        at_feet = np.stack([_periodic_interp(grad_p[i], feet) for i in range(grid.d)])
        correction = 0.5 * (at_feet - grad_p)
    return v_tilde, correction


def _momentum_solve(state: FluidState, cfg: SolverConfig) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Solve rho~ (v_new - v~)/dt - mu Lap v_new + grad P_new + G = 0, div v_new = 0

    Returns:
        (v_new, P_new, scheme_dissipation) as arrays and the discrete energy the
        step removed besides mu dt |grad v_new|^2
    """
    grid = state.grid
    ops = spectral_ops(grid)
    dt, mu = cfg.dt, cfg.mu
    shape = (grid.d,) + grid.shape

    v_tilde, correction = _advected_velocity(state, dt)
    rho = state.rho.values
    rho_t = np.maximum(rho, cfg.eps_floor)
    rho_bar = float(rho_t.mean())
    if rho_bar <= 0:
        raise ValueError("Momentum solve needs positive total mass")

    momentum = rho_t * v_tilde
    filtered = ops.dealias(momentum) if cfg.dealias else momentum
    rhs = filtered / dt - correction
    b, _ = ops.leray(rhs)
    x0, _ = ops.leray(v_tilde)

    def apply(x):
        u = x.reshape(shape)
        weighted, _ = ops.leray(rho_t * u / dt)
        return (weighted - mu * ops.laplacian(u)).ravel()

    symbol = rho_bar / dt + mu * ops.ksq

    def precondition(r):
        return ops.inverse(ops.forward(r.reshape(shape)) / symbol).ravel()

    size = int(np.prod(shape))
    operator = LinearOperator((size, size), matvec=apply, dtype=float)
    preconditioner = LinearOperator((size, size), matvec=precondition, dtype=float)
    iterations = [0]

    def count(_):
        iterations[0] += 1

    x, info = cg(operator, b.ravel(), x0=x0.ravel(), rtol=cfg.inner_tol, atol=0.0,
                 maxiter=cfg.inner_maxit, M=preconditioner, callback=count)

    b_norm = float(np.linalg.norm(b))
    residual = float(np.linalg.norm(b.ravel() - apply(x))) / b_norm if b_norm > 0 else 0.0
    if info != 0:
        raise SolverNonconvergenceError(
            f"Momentum solve stopped after {iterations[0]} iterations with relative residual {residual:.3e} "
            f"(eps_floor={cfg.eps_floor})",
            residual=residual, iterations=iterations[0])
    logger.debug(f"Momentum solve converged in {iterations[0]} iterations, residual {residual:.2e}")

    v_new, _ = ops.leray(x.reshape(shape))
    force = rhs - rho_t * v_new / dt
    pressure = ops.potential(ops.gradient_part(ops.forward(force)))

    # implicit increment, dealias filter, pressure correction work, energy held by the floor mass
    increment = ((v_new - v_tilde) ** 2).sum(axis=0)
    floor_exchange = (rho_t - rho) * ((v_new ** 2).sum(axis=0) - (v_tilde ** 2).sum(axis=0))
    dissipation = grid.cell_volume * float(0.5 * (rho_t * increment).sum()
                                           + ((momentum - filtered) * v_new).sum()
                                           + dt * (correction * v_new).sum()
                                           + 0.5 * floor_exchange.sum())
    return v_new, pressure, dissipation


def momentum_step(state: FluidState, cfg: SolverConfig) -> Tuple[VectorField, ScalarField]:
    """
    Solve rho~ (v_new - v~)/dt - mu Lap v_new + grad P_new + G = 0, div v_new = 0

    rho~ = max(rho, eps_floor), v~ is the semi-Lagrangian advected velocity and G
    is the midpoint pressure correction built from state.P.

    Returns:
        (v_new, P_new) with P_new of zero mean
    """
    v_new, pressure, _ = _momentum_solve(state, cfg)
    return VectorField.from_array(state.grid, v_new), ScalarField(state.grid, pressure)


def step(state: FluidState, cfg: SolverConfig) -> FluidState:
    """Advance one time step: transport the density, then the implicit Stokes update"""
    grid = state.grid
    rho_new = advect_density(state.rho, state.v, cfg.dt, cfg.cfl_bound)
    rho_new = ScalarField(grid, np.clip(rho_new.values, 0.0, cfg.rho_star))
    v_arr, p_arr, dissipation = _momentum_solve(FluidState(state.t, rho_new, state.v, state.P), cfg)
    v_new = VectorField.from_array(grid, v_arr)
    P_new = ScalarField(grid, p_arr - p_arr.mean())
    vt = (v_new - state.v) * (1.0 / cfg.dt)
    return FluidState(state.t + cfg.dt, rho_new, v_new, P_new, vt, dissipation)


def simulate(initial: FluidState, cfg: SolverConfig, record_every: Optional[int] = None,
             observer: Optional[Callable[[FluidState], None]] = None,
             snapshot_every: Optional[int] = None,
             snapshot_dir: Optional[Path] = None) -> List[FluidState]:
    """
    Run from the initial state to T_end

    Args:
        initial: state at t = 0
        cfg: solver configuration
        record_every: keep every k-th state (the final state is always kept)
        observer: called with every state, including the initial one
        snapshot_every: write rho, v, P snapshots every k steps into snapshot_dir

    Returns:
        Recorded states, starting with the initial state
    """
    validate_state(initial, cfg)
    record_every = record_every or OUTPUT_CONFIG['record_every']
    snapshot_every = OUTPUT_CONFIG['snapshot_every'] if snapshot_every is None else snapshot_every
    if snapshot_every and snapshot_dir is not None:
        Path(snapshot_dir).mkdir(parents=True, exist_ok=True)

    states = [initial]
    state = initial
    if observer:
        observer(initial)
    started = time.perf_counter()
    for index in range(1, cfg.n_steps + 1):
        try:
            state = step(state, cfg)
        except SolverNonconvergenceError as e:
            logger.error(f"Run stopped at step {index}: {e}")
            e.partial_states = states
            raise
        if observer:
            observer(state)
        if index % record_every == 0 or index == cfg.n_steps:
            states.append(state)
        if snapshot_every and snapshot_dir is not None and index % snapshot_every == 0:
            _write_state_snapshots(Path(snapshot_dir), state, index)
    logger.info(f"Simulated {cfg.n_steps} steps to t={state.t:.4f} in {time.perf_counter() - started:.2f}s")
    return states


def _write_state_snapshots(directory: Path, state: FluidState, index: int):
    write_snapshot(directory / f"rho_{index:06d}.bin", state.rho, 'rho', state.t)
    write_snapshot(directory / f"v_{index:06d}.bin", state.v, 'v', state.t)
    write_snapshot(directory / f"P_{index:06d}.bin", state.P, 'P', state.t)


@dataclass
class ConvergenceReport:
    """Pairwise differences between consecutive eps-floored runs"""

    eps_list: List[float]
    l2h1_differences: List[Optional[float]] = field(default_factory=list)
    linf_l2_differences: List[Optional[float]] = field(default_factory=list)
    failures: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.failures

    @property
    def monotone(self) -> bool:
        values = self.l2h1_differences
        if any(v is None for v in values):
            return False
        return all(b < a for a, b in zip(values, values[1:]))

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['complete'] = self.complete
        data['monotone'] = self.monotone
        return data


def velocity_difference_norms(run_a: Sequence[FluidState], run_b: Sequence[FluidState]) -> Tuple[float, float]:
    """L2(0,T;H1) and Linf(0,T;L2) norms of the velocity difference of two runs on one cadence"""
    if len(run_a) != len(run_b):
        raise ValueError("Runs must be recorded on the same cadence")
    ops = spectral_ops(run_a[0].grid)
    l2h1 = 0.0
    linf = 0.0
    for i, (a, b) in enumerate(zip(run_a, run_b)):
        delta = a.v - b.v
        l2 = lp_norm(delta, 2)
        linf = max(linf, l2)
        if i == 0:
            continue
        grad = np.sqrt((ops.gradient_tensor(delta.as_array()) ** 2).sum(axis=(0, 1)))
        h1_sq = l2 ** 2 + float((grad ** 2).sum() * a.grid.cell_volume)
        l2h1 += (a.t - run_a[i - 1].t) * h1_sq
    return float(np.sqrt(l2h1)), linf


def epsilon_continuation(scenario: FluidState, cfg: SolverConfig, eps_list: Sequence[float],
                         workers: Optional[int] = None, record_every: Optional[int] = None) -> ConvergenceReport:
    """
    Run the scenario with rho0 -> max(rho0, eps) and eps_floor = eps for each eps

    Args:
        scenario: initial state of the unregularized problem
        cfg: solver configuration shared by all members
        eps_list: strictly decreasing positive floors
        workers: worker threads for the members

    Returns:
        ConvergenceReport with differences between consecutive members
    """
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError(f"eps_list must be positive and strictly decreasing, got {eps_list}")
    workers = workers or OUTPUT_CONFIG['workers']
    report = ConvergenceReport(eps_list=eps_list)

    def member(eps: float):
        started = time.perf_counter()
        rho0 = ScalarField(scenario.grid, np.maximum(scenario.rho.values, eps))
        initial = FluidState(scenario.t, rho0, scenario.v, scenario.P)
        try:
            states = simulate(initial, replace(cfg, eps_floor=eps), record_every=record_every)
            return eps, states, None, time.perf_counter() - started
        except (SolverNonconvergenceError, ValueError) as e:
            return eps, None, str(e), time.perf_counter() - started

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(member, eps_list))

    for eps, _, error, elapsed in results:
        report.timings[repr(eps)] = elapsed
        if error:
            logger.error(f"eps={eps} member failed: {error}")
            report.failures[repr(eps)] = error

    for (eps_a, run_a, _, _), (eps_b, run_b, _, _) in zip(results, results[1:]):
        if run_a is None or run_b is None:
            report.l2h1_differences.append(None)
            report.linf_l2_differences.append(None)
            continue
        l2h1, linf = velocity_difference_norms(run_a, run_b)
        logger.info(f"eps {eps_a:g} vs {eps_b:g}: L2H1 difference {l2h1:.3e}, LinfL2 difference {linf:.3e}")
        report.l2h1_differences.append(l2h1)
        report.linf_l2_differences.append(linf)
    return report
