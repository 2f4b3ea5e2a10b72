"""
Fixed-point solver for the twisted divergence equation div(A w) = g
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from config import OUTPUT_CONFIG, TWISTED_CONFIG
from fields import Grid, ScalarField, VectorField, nodal_lp, random_vector_field, spectral_ops
from lagrangian import FlowMap, deformation_inverse, lagrangian_ops

logger = logging.getLogger(__name__)

OUTCOMES = ('converged', 'diverged', 'stalled')


class TwistedDivergenceError(RuntimeError):
    """Raised when the fixed-point iterates keep growing"""

    def __init__(self, message: str, expansion_factor: float, iterations: int):
        super().__init__(message)
        self.expansion_factor = expansion_factor
        self.iterations = iterations


def _as_series(A: np.ndarray, grid: Grid) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    d = grid.d
    if A.shape == (d, d) + grid.shape:
        return A[None]
    if A.shape[1:] != (d, d) + grid.shape:
        raise ValueError(f"Matrix series must have shape (K, {d}, {d}, *{grid.shape}), got {A.shape}")
    return A


def _pointwise(A: np.ndarray) -> np.ndarray:
    """Move the matrix axes of (K, d, d, *shape) to the end"""
    return np.moveaxis(A, (1, 2), (-2, -1))


@dataclass
class TwistedProblem:
    """
    Matrix series A (time-parametrized, det A = 1) and forcing R with g = div R

    A has shape (K, d, d, *grid shape), or (d, d, *grid shape) for a single slice.
    """

    A: np.ndarray
    R: List[VectorField]
    times: Optional[np.ndarray] = None
    tol: float = TWISTED_CONFIG['tol']
    maxit: int = TWISTED_CONFIG['maxit']
    det_tolerance: float = TWISTED_CONFIG['det_tolerance']
    id_minus_A_linf: float = field(init=False, default=0.0)
    id_minus_A_max_entry: float = field(init=False, default=0.0)
    A_t_l2l6: float = field(init=False, default=0.0)

    def __post_init__(self):
        if isinstance(self.R, VectorField):
            self.R = [self.R]
        self.R = list(self.R)
        if not self.R:
            raise ValueError("TwistedProblem needs at least one forcing slice")
        grid = self.R[0].grid
        if any(r.grid != grid for r in self.R):
            raise ValueError("All forcing slices must share one grid")
        self.A = _as_series(self.A, grid)
        if len(self.A) != len(self.R):
            raise ValueError(f"{len(self.A)} matrix slices for {len(self.R)} forcing slices")
        self.times = np.arange(len(self.R), dtype=float) if self.times is None else np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.R) or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase and match the slices")

        mats = _pointwise(self.A)
        det_error = float(np.abs(np.linalg.det(mats) - 1.0).max())
        if det_error > self.det_tolerance:
            raise ValueError(f"A must have unit determinant (max |det A - 1| = {det_error:.3e})")
        deviation = np.eye(grid.d) - mats
        self.id_minus_A_linf = float(np.linalg.norm(deviation, ord=2, axis=(-2, -1)).max())
        self.id_minus_A_max_entry = float(np.abs(deviation).max())
        self.A_t_l2l6 = self._time_derivative_norm()

    @property
    def grid(self) -> Grid:
        return self.R[0].grid

    def g(self, index: int) -> ScalarField:
        return ScalarField(self.grid, spectral_ops(self.grid).div(self.R[index].as_array()))

    def _time_derivative_norm(self) -> float:
        if len(self.times) < 2:
            return 0.0
        steps = np.diff(self.times)
        rates = np.diff(self.A, axis=0) / steps[:, None, None, None, None]
        magnitude = np.sqrt((rates ** 2).sum(axis=(1, 2)))
        l6 = np.array([nodal_lp(m, self.grid, 6) for m in magnitude])
        return float(np.sqrt((steps * l6 ** 2).sum()))


@dataclass
class TwistedSolution:
    w: List[VectorField]
    iterations: List[int]
    converged: bool
    residuals: List[float]
    distances: List[List[float]]

    def to_dict(self) -> Dict[str, Any]:
        return {'iterations': self.iterations, 'converged': self.converged,
                'residuals': self.residuals, 'distances': self.distances}


def _phi(A: np.ndarray, R: np.ndarray, v: np.ndarray, grid: Grid) -> np.ndarray:
    """Gradient part of (Id - A) v + R"""
    ops = spectral_ops(grid)
    twisted = v - np.einsum('ij...,j...->i...', A, v) + R
    return ops.inverse(ops.gradient_part(ops.forward(twisted)))


def _l2(values: np.ndarray, grid: Grid) -> float:
    return nodal_lp(np.sqrt((values ** 2).sum(axis=0)), grid, 2)


def _solve_slice(problem: TwistedProblem, index: int, maxit: int):
    grid = problem.grid
    A = problem.A[index]
    R = problem.R[index].as_array()
    growth_limit = TWISTED_CONFIG['growth_steps']

    v = np.zeros_like(R)
    scale = None
    distances: List[float] = []
    growth = 0
    for k in range(1, maxit + 1):
        nxt = _phi(A, R, v, grid)
        dist = _l2(nxt - v, grid)
        if not np.isfinite(dist):
            raise TwistedDivergenceError(f"Slice {index}: iterate overflow", float('inf'), k)
        scale = max(dist, 1e-300) if scale is None else scale
        distances.append(dist)
        v = nxt
        if dist < problem.tol * scale:
            return v, k - 1, True, distances
        if len(distances) > 1 and dist > distances[-2]:
            growth += 1
            if growth >= growth_limit:
                factor = dist / distances[-2]
                raise TwistedDivergenceError(
                    f"Slice {index}: iterates grew for {growth} steps (factor {factor:.3f})", factor, k)
        else:
            growth = 0
    logger.warning(f"Twisted solve stalled on slice {index} after {maxit} iterations")
    return v, maxit, False, distances


def solve_twisted(problem: TwistedProblem, maxit: Optional[int] = None,
                  workers: Optional[int] = None) -> TwistedSolution:
    """
    Solve div(A w) = div R slice by slice by iterating Phi from v = 0

    Iteration stops once successive iterates differ by less than tol times
    |Phi(0)|_2. iterations counts the updates that moved the iterate.

    Raises:
        TwistedDivergenceError: iterates grew over consecutive steps
    """
    maxit = maxit or problem.maxit
    workers = workers or OUTPUT_CONFIG['workers']
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda i: _solve_slice(problem, i, maxit), range(len(problem.R))))

    grid = problem.grid
    w = [VectorField.from_array(grid, r[0]) for r in results]
    residuals = []
    for index, wi in enumerate(w):
        div_Aw = lagrangian_ops(problem.A[index], wi)['div_Az']
        residuals.append(nodal_lp(np.abs(div_Aw.values - problem.g(index).values), grid, 2))
    solution = TwistedSolution(w, [r[1] for r in results], all(r[2] for r in results), residuals,
                               [r[3] for r in results])
    logger.info(f"Twisted solve: converged={solution.converged}, iterations={solution.iterations}, "
                f"max residual {max(residuals):.3e}")
    return solution


def classify_twisted(problem: TwistedProblem, maxit: Optional[int] = None) -> Dict[str, Any]:
    """Attempt a solve and report the outcome with the smallness quantities"""
    record = {
        'id_minus_A_linf': problem.id_minus_A_linf,
        'id_minus_A_max_entry': problem.id_minus_A_max_entry,
        'A_t_l2l6': problem.A_t_l2l6,
        'expansion_factor': None,
        'residual': None,
        'iterations': None,
    }
    try:
        solution = solve_twisted(problem, maxit)
    except TwistedDivergenceError as e:
        logger.info(f"Twisted solve diverged: {e}")
        record.update(outcome='diverged', expansion_factor=e.expansion_factor, iterations=e.iterations)
        return record
    record.update(outcome='converged' if solution.converged else 'stalled',
                  residual=max(solution.residuals), iterations=max(solution.iterations))
    return record


def _time_pieces(series: Sequence[np.ndarray], times: np.ndarray, grid: Grid) -> float:
    """L4(L2) + L2(H1) + L4/3(L3/2) of the time differences for one series of (d, ...) arrays"""
    ops = spectral_ops(grid)
    l2 = np.array([_l2(v, grid) for v in series])
    h1 = np.array([_l2(ops.gradient_tensor(v).reshape((-1,) + grid.shape), grid) for v in series])
    if len(series) == 1:
        return float(l2[0] + h1[0])
    steps = np.diff(times)
    weights = np.concatenate([[steps[0] / 2], (steps[:-1] + steps[1:]) / 2, [steps[-1] / 2]])
    rates = [(b - a) / s for a, b, s in zip(series, series[1:], steps)]
    l32 = np.array([nodal_lp(np.sqrt((r ** 2).sum(axis=0)), grid, 1.5) for r in rates])
    return float((weights * l2 ** 4).sum() ** 0.25 + (weights * h1 ** 2).sum() ** 0.5
                 + (steps * l32 ** (4 / 3)).sum() ** 0.75)


def contraction_estimate(problem: TwistedProblem, samples: Optional[int] = None, seed: int = 0,
                         kmax: int = 6) -> float:
    """max over random pairs of |Phi(v2) - Phi(v1)|_X / |v2 - v1|_X"""
    samples = samples or TWISTED_CONFIG['samples']
    if samples < 2:
        raise ValueError("contraction_estimate needs at least two samples")
    grid = problem.grid
    kmax = min(kmax, grid.n // 2 - 1)
    rng = np.random.default_rng(seed)
    zero = np.zeros_like(problem.R[0].as_array())
    worst = 0.0
    for _ in range(samples):
        v1 = [random_vector_field(grid, rng, kmax, 1.5).as_array() for _ in problem.R]
        v2 = [random_vector_field(grid, rng, kmax, 1.5).as_array() for _ in problem.R]
        # R cancels in the difference
        images = [_phi(A, zero, b - a, grid) for A, a, b in zip(problem.A, v1, v2)]
        denominator = _time_pieces([b - a for a, b in zip(v1, v2)], problem.times, grid)
        if denominator > 0:
            worst = max(worst, _time_pieces(images, problem.times, grid) / denominator)
    logger.info(f"Contraction estimate {worst:.4f} (|Id - A| = {problem.id_minus_A_linf:.4f})")
    return worst


def solution_bounds(problem: TwistedProblem, solution: TwistedSolution) -> Dict[str, Optional[float]]:
    """Ratios of the solution norms to the data norms they are controlled by"""
    grid = problem.grid
    ops = spectral_ops(grid)
    times = problem.times
    w = [v.as_array() for v in solution.w]
    R = [r.as_array() for r in problem.R]

    def bochner(samples, p):
        samples = np.asarray(samples)
        if len(samples) == 1:
            return float(samples[0])
        steps = np.diff(times)
        weights = np.concatenate([[steps[0] / 2], (steps[:-1] + steps[1:]) / 2, [steps[-1] / 2]])
        return float((weights * samples ** p).sum() ** (1.0 / p))

    def ratio(num, den):
        return num / den if den > 0 else None

    w_l4l2 = bochner([_l2(v, grid) for v in w], 4)
    R_l4l2 = bochner([_l2(r, grid) for r in R], 4)
    grad_w = bochner([_l2(ops.gradient_tensor(v).reshape((-1,) + grid.shape), grid) for v in w], 2)
    g_l2 = bochner([nodal_lp(np.abs(problem.g(i).values), grid, 2) for i in range(len(R))], 2)
    bounds = {'w_l4l2': ratio(w_l4l2, R_l4l2), 'grad_w_l2l2': ratio(grad_w, g_l2), 'w_t': None}

    if len(times) >= 2:
        steps = np.diff(times)

        def rate_norm(series):
            rates = [(b - a) / s for a, b, s in zip(series, series[1:], steps)]
            l32 = np.array([nodal_lp(np.sqrt((r ** 2).sum(axis=0)), grid, 1.5) for r in rates])
            return float((steps * l32 ** (4 / 3)).sum() ** 0.75)

        R_mid = [(a + b) / 2 for a, b in zip(R, R[1:])]
        R_l43 = float((steps * np.array([nodal_lp(np.sqrt((r ** 2).sum(axis=0)), grid, 1.5)
                                          for r in R_mid]) ** (4 / 3)).sum() ** 0.75)
        bounds['w_t'] = ratio(rate_norm(w), R_l43 + rate_norm(R))
    return bounds


def shear_matrix_field(grid: Grid, amplitude: float, profile: str = 'cosine') -> np.ndarray:
    """A = [[1, -c], [0, 1]] with c = amplitude cos(2 pi y2) or the constant amplitude"""
    y1, y2 = grid.coordinates()
    if profile == 'cosine':
        c = amplitude * np.cos(2 * np.pi * y2)
    elif profile == 'constant':
        c = np.full(grid.shape, float(amplitude))
    else:
        raise ValueError(f"Unknown shear profile: {profile}")
    one, zero = np.ones(grid.shape), np.zeros(grid.shape)
    return np.array([[one, -c], [zero, one]])


def two_shear_matrix_field(grid: Grid, fp: Union[float, np.ndarray], gp: Union[float, np.ndarray]) -> np.ndarray:
    """Inverse deformation gradient [[1 + g'f', -f'], [-g', 1]] of two composed shears"""
    fp = np.broadcast_to(np.asarray(fp, dtype=float), grid.shape)
    gp = np.broadcast_to(np.asarray(gp, dtype=float), grid.shape)
    one = np.ones(grid.shape)
    return np.array([[one + gp * fp, -fp], [-gp, one]])


def matrix_field_from_flowmap(flowmap: FlowMap) -> np.ndarray:
    """A series (K, d, d, *grid shape) of a flow map on grid labels"""
    if flowmap.grid is None:
        raise ValueError("A flow map on grid labels is required")
    if flowmap.A is None:
        deformation_inverse(flowmap)
    d = flowmap.grid.d
    return flowmap.A.reshape((len(flowmap.times), d, d) + flowmap.grid.shape)


def write_twisted_log(records: Sequence[Dict[str, Any]], path: Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(list(records), indent=2, default=float))
    return path
