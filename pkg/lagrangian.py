"""
Flow maps, deformation gradients and density-patch boundary tracking
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.integrate import trapezoid

from config import LAGRANGIAN_CONFIG
from fields import Field, Grid, ScalarField, VectorField, field_values, like, nodal_lp, spectral_ops
from solver import FluidState

logger = logging.getLogger(__name__)


class SingularMapError(ArithmeticError):
    """Raised when a deformation gradient cannot be inverted"""


class ReseedingRequiredError(RuntimeError):
    """Raised when boundary markers have spread too unevenly"""

    def __init__(self, message: str, spacing_ratio: float):
        super().__init__(message)
        self.spacing_ratio = spacing_ratio


class VelocityHistory:
    """
    Velocity samples in time with cubic-spline space and linear time interpolation

    Points are (d, m) arrays of physical coordinates; they are wrapped onto the torus.
    """

    def __init__(self, times: Sequence[float], fields: Sequence[VectorField], order: Optional[int] = None):
        if len(times) != len(fields) or not fields:
            raise ValueError("VelocityHistory needs matching, nonempty times and fields")
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("VelocityHistory times must increase")
        self.grid = fields[0].grid
        self.order = order or LAGRANGIAN_CONFIG['interpolation_order']
        self._velocity = [f.as_array() for f in fields]
        self._coeffs: Dict[Tuple[str, int], np.ndarray] = {}

    @classmethod
    def from_states(cls, states: Sequence[FluidState], order: Optional[int] = None) -> 'VelocityHistory':
        return cls([s.t for s in states], [s.v for s in states], order)

    @classmethod
    def steady(cls, v: VectorField, t_end: float, order: Optional[int] = None) -> 'VelocityHistory':
        return cls([0.0, t_end], [v, v], order)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def _spline(self, kind: str, index: int) -> np.ndarray:
        key = (kind, index)
        if key not in self._coeffs:
            arr = self._velocity[index]
            if kind == 'gradient':
                arr = spectral_ops(self.grid).gradient_tensor(arr)
            flat = arr.reshape((-1,) + self.grid.shape)
            self._coeffs[key] = np.stack([
                ndimage.spline_filter(c, order=self.order, mode='grid-wrap') for c in flat
            ]).reshape(arr.shape)
        return self._coeffs[key]

    def _bracket(self, t: float) -> List[Tuple[int, float]]:
        slack = 1e-12 * max(1.0, abs(self.t_end))
        if t < self.t_start - slack or t > self.t_end + slack:
            raise ValueError(f"t={t} outside the velocity history [{self.t_start}, {self.t_end}]")
        if len(self.times) == 1:
            return [(0, 1.0)]
        i = int(np.clip(np.searchsorted(self.times, t, side='right') - 1, 0, len(self.times) - 2))
        w = float(np.clip((t - self.times[i]) / (self.times[i + 1] - self.times[i]), 0.0, 1.0))
        return [(i, 1.0 - w), (i + 1, w)]

    def _interpolate(self, kind: str, t: float, points: np.ndarray) -> np.ndarray:
        coords = np.asarray(points, dtype=float) * self.grid.n
        out = None
        for index, weight in self._bracket(t):
            if weight == 0.0:
                continue
            coeffs = self._spline(kind, index)
            flat = coeffs.reshape((-1,) + self.grid.shape)
            sampled = np.stack([
                ndimage.map_coordinates(c, coords, order=self.order, mode='grid-wrap', prefilter=False)
                for c in flat
            ]).reshape(coeffs.shape[:-self.grid.d] + coords.shape[1:])
            out = weight * sampled if out is None else out + weight * sampled
        return out

    def sample(self, t: float, points: np.ndarray) -> np.ndarray:
        """v(t, points), shape (d, m)"""
        return self._interpolate('velocity', t, points)

    def sample_gradient(self, t: float, points: np.ndarray) -> np.ndarray:
        """grad v(t, points) with [i, j] = d v_i / d x_j, shape (d, d, m)"""
        return self._interpolate('gradient', t, points)


@dataclass
class FlowMap:
    """
    Characteristics X(t, y) and deformation gradients of a set of labels

    X holds positions (unwrapped) with shape (K, d, m); gradX has shape (K, d, d, m).
    When the labels are the nodes of a grid, grid is set and matrix fields can be
    reshaped onto it.
    """

    times: np.ndarray
    labels: np.ndarray
    X: np.ndarray
    gradX: np.ndarray
    grid: Optional[Grid] = None
    A: Optional[np.ndarray] = None
    gradient_integral: float = 0.0
    accuracy_error: float = 0.0

    @property
    def displacement(self) -> np.ndarray:
        return self.X - self.labels[None]

    @property
    def det(self) -> np.ndarray:
        return np.linalg.det(np.moveaxis(self.gradX, (1, 2), (-2, -1)))

    @property
    def det_error(self) -> float:
        return float(np.abs(self.det - 1.0).max())

    def matrix_field(self, index: int = -1, which: str = 'A') -> np.ndarray:
        """A or gradX at one time as a (d, d, *grid shape) array"""
        if self.grid is None:
            raise ValueError("Matrix fields need a flow map on grid labels")
        source = self.A if which == 'A' else self.gradX
        if source is None:
            raise ValueError("A is not available; call deformation_inverse first")
        d = self.grid.d
        return source[index].reshape((d, d) + self.grid.shape)


def grid_labels(grid: Grid) -> np.ndarray:
    """Node coordinates flattened to (d, n^d)"""
    return np.stack([c.ravel() for c in grid.coordinates()])


def _flow_rhs(history: VelocityHistory, t: float, X: np.ndarray, F: np.ndarray):
    return history.sample(t, X), np.einsum('ikm,kjm->ijm', history.sample_gradient(t, X), F)


def _operator_norm(mats: np.ndarray) -> np.ndarray:
    """Spectral norm of (d, d, m) matrices, one value per point"""
    return np.linalg.norm(np.moveaxis(mats, (0, 1), (-2, -1)), ord=2, axis=(-2, -1))


def _rk4(history: VelocityHistory, labels: np.ndarray, t0: float, t1: float, steps: int,
         record_every: int):
    d, m = labels.shape
    X = labels.copy()
    F = np.broadcast_to(np.eye(d)[:, :, None], (d, d, m)).copy()
    dt = (t1 - t0) / steps if steps else 0.0
    times, positions, gradients = [t0], [X.copy()], [F.copy()]
    indicator_samples = []

    def indicator(t, X, F):
        return float(_operator_norm(np.einsum('ikm,kjm->ijm', history.sample_gradient(t, X), F)).max())

    indicator_samples.append(indicator(t0, X, F))
    for k in range(steps):
        t = t0 + k * dt
        k1x, k1f = _flow_rhs(history, t, X, F)
        k2x, k2f = _flow_rhs(history, t + dt / 2, X + dt / 2 * k1x, F + dt / 2 * k1f)
        k3x, k3f = _flow_rhs(history, t + dt / 2, X + dt / 2 * k2x, F + dt / 2 * k2f)
        k4x, k4f = _flow_rhs(history, t + dt, X + dt * k3x, F + dt * k3f)
        X = X + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        F = F + dt / 6 * (k1f + 2 * k2f + 2 * k3f + k4f)
        t_next = t0 + (k + 1) * dt
        indicator_samples.append(indicator(t_next, X, F))
        if (k + 1) % record_every == 0 or k + 1 == steps:
            times.append(t_next)
            positions.append(X.copy())
            gradients.append(F.copy())
    integral = float(trapezoid(indicator_samples, dx=dt)) if steps else 0.0
    return np.array(times), np.stack(positions), np.stack(gradients), integral


def integrate_flow(history: VelocityHistory, labels: Union[Grid, np.ndarray], dt: float,
                   t_end: Optional[float] = None, record_every: int = 1,
                   check_accuracy: bool = False, tolerance: Optional[float] = None) -> FlowMap:
    """
    Integrate dX/dt = v(t, X), dF/dt = grad v(t, X) F from X = y, F = Id by RK4

    Args:
        history: velocity record covering [t_start, t_end]
        labels: a Grid (all nodes) or a (d, m) array of starting points
        dt: time step; shrunk so that it divides the window
        t_end: end of the window (defaults to the end of the history)
        record_every: keep every k-th step
        check_accuracy: repeat with dt/2 and compare final positions
        tolerance: accuracy threshold for the step-halving estimate

    Returns:
        FlowMap with positions, deformation gradients and the integral of
        max |grad_y u| over the window
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    grid = labels if isinstance(labels, Grid) else None
    points = grid_labels(labels) if grid is not None else np.asarray(labels, dtype=float)
    t0 = history.t_start
    t1 = history.t_end if t_end is None else t_end
    steps = max(int(math.ceil((t1 - t0) / dt - 1e-9)), 0)
    times, X, gradX, integral = _rk4(history, points, t0, t1, steps, max(record_every, 1))

    flowmap = FlowMap(times, points, X, gradX, grid, gradient_integral=integral)
    if check_accuracy and steps:
        tolerance = tolerance or LAGRANGIAN_CONFIG['accuracy_tolerance']
        _, X_half, _, _ = _rk4(history, points, t0, t1, 2 * steps, 2 * steps)
        flowmap.accuracy_error = float(np.abs(X_half[-1] - X[-1]).max())
        if flowmap.accuracy_error > tolerance:
            logger.warning(f"Flow map step-halving error {flowmap.accuracy_error:.3e} exceeds {tolerance:.1e}")
    logger.debug(f"Integrated {points.shape[1]} labels over [{t0}, {t1}] in {steps} steps")
    return flowmap


def deformation_inverse(flowmap: FlowMap, terms: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Invert gradX directly and by the series sum_k (-(gradX - Id))^k

    Sets flowmap.A to the direct inverse.

    Returns:
        (A_direct, A_neumann, series_error) in the flow map's (K, d, d, m) layout
    """
    terms = LAGRANGIAN_CONFIG['neumann_terms'] if terms is None else terms
    mats = np.moveaxis(flowmap.gradX, (1, 2), (-2, -1))
    det = np.linalg.det(mats)
    worst = float(np.abs(det).min())
    if worst < LAGRANGIAN_CONFIG['singular_det']:
        raise SingularMapError(f"Deformation gradient is singular (min |det| = {worst:.3e})")
    direct = np.linalg.inv(mats)

    identity = np.broadcast_to(np.eye(mats.shape[-1]), mats.shape)
    step = identity - mats
    term = identity.copy()
    series = identity.copy()
    for _ in range(terms):
        term = term @ step
        series = series + term
    error = float(np.abs(direct - series).max())
    if flowmap.gradient_integral > 0.5:
        logger.info(f"Series smallness indicator {flowmap.gradient_integral:.3f} exceeds 1/2")

    flowmap.A = np.moveaxis(direct, (-2, -1), (1, 2))
    return flowmap.A, np.moveaxis(series, (-2, -1), (1, 2)), error


def lagrangian_ops(A: np.ndarray, z: Field) -> Dict[str, object]:
    """
    Lagrangian derivatives with respect to the matrix field A of shape (d, d, *grid shape)

    Scalar z gives grad_u = A^T grad z. Vector z gives div_u = sum A_ji d_j z_i, the
    independently computed div(A z), and the L2 norm of their difference.
    """
    grid = z.grid
    d = grid.d
    if A.shape != (d, d) + grid.shape:
        raise ValueError(f"Matrix field must have shape {(d, d) + grid.shape}, got {A.shape}")
    ops = spectral_ops(grid)
    if isinstance(z, ScalarField):
        gradient = ops.grad(z.values)
        return {'grad_u': VectorField.from_array(grid, np.einsum('ji...,j...->i...', A, gradient))}

    values = z.as_array()
    tensor = ops.gradient_tensor(values)
    div_u = np.einsum('ji...,ij...->...', A, tensor)
    div_Az = ops.div(np.einsum('ji...,i...->j...', A, values))
    return {
        'grad_u': np.einsum('kj...,ik...->ij...', A, tensor),
        'div_u': ScalarField(grid, div_u),
        'div_Az': ScalarField(grid, div_Az),
        'discrepancy': nodal_lp(np.abs(div_u - div_Az), grid, 2),
    }


def pullback(f: Field, flowmap: FlowMap, index: int = -1, order: Optional[int] = None) -> Field:
    """f composed with X(t_index, .) on the label grid"""
    if flowmap.grid is None or flowmap.grid != f.grid:
        raise ValueError("pullback needs a flow map on the field's grid")
    order = LAGRANGIAN_CONFIG['interpolation_order'] if order is None else order
    grid = f.grid
    coords = flowmap.X[index] * grid.n
    values = field_values(f)
    flat = values.reshape((-1,) + grid.shape)
    out = np.stack([ndimage.map_coordinates(c, coords, order=order, mode='grid-wrap') for c in flat])
    return like(f, out.reshape(values.shape))


def _flow_map_on_grid(grid: Grid, X: np.ndarray, gradX: np.ndarray, A: np.ndarray) -> FlowMap:
    d = grid.d
    m = grid.n ** d
    flowmap = FlowMap(np.array([0.0]), grid_labels(grid), X.reshape(1, d, m), gradX.reshape(1, d, d, m), grid,
                      A.reshape(1, d, d, m))
    flowmap.gradient_integral = float(_operator_norm(flowmap.gradX[0] - np.eye(d)[:, :, None]).max())
    return flowmap


def shear_map(grid: Grid, amplitude: float) -> FlowMap:
    """X = (y1 + a sin 2 pi y2, y2); gradX = [[1, c], [0, 1]] with c = 2 pi a cos 2 pi y2"""
    y1, y2 = grid.coordinates()
    c = 2 * np.pi * amplitude * np.cos(2 * np.pi * y2)
    one, zero = np.ones_like(c), np.zeros_like(c)
    X = np.stack([y1 + amplitude * np.sin(2 * np.pi * y2), y2])
    gradX = np.array([[one, c], [zero, one]])
    A = np.array([[one, -c], [zero, one]])
    return _flow_map_on_grid(grid, X, gradX, A)


def two_shear_map(grid: Grid, a: float, b: float) -> FlowMap:
    """Horizontal shear a sin 2 pi y2 followed by vertical shear b sin 2 pi x1; det gradX = 1 exactly"""
    y1, y2 = grid.coordinates()
    x1 = y1 + a * np.sin(2 * np.pi * y2)
    fp = 2 * np.pi * a * np.cos(2 * np.pi * y2)
    gp = 2 * np.pi * b * np.cos(2 * np.pi * x1)
    one = np.ones_like(fp)
    X = np.stack([x1, y2 + b * np.sin(2 * np.pi * x1)])
    gradX = np.array([[one, fp], [gp, one + gp * fp]])
    A = np.array([[one + gp * fp, -fp], [-gp, one]])
    return _flow_map_on_grid(grid, X, gradX, A)


def scaled_map(grid: Grid, strength: float) -> FlowMap:
    """Compressible map with gradX = diag(1 + s sin 2 pi y1, 1), for negative controls"""
    if not 0 <= strength < 1:
        raise ValueError(f"strength must lie in [0, 1), got {strength}")
    y1, y2 = grid.coordinates()
    stretch = 1.0 + strength * np.sin(2 * np.pi * y1)
    one, zero = np.ones_like(stretch), np.zeros_like(stretch)
    X = np.stack([y1 - strength * np.cos(2 * np.pi * y1) / (2 * np.pi), y2])
    gradX = np.array([[stretch, zero], [zero, one]])
    A = np.array([[1.0 / stretch, zero], [zero, one]])
    return _flow_map_on_grid(grid, X, gradX, A)


@dataclass
class BoundaryCurve:
    """Marker polyline on the torus; points are unwrapped with shape (m, 2)"""

    points: np.ndarray
    closed: bool = True
    time: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 3:
            raise ValueError("BoundaryCurve needs at least three 2D markers")

    @classmethod
    def circle(cls, radius: float, center: Sequence[float] = (0.5, 0.5), markers: Optional[int] = None) -> 'BoundaryCurve':
        markers = markers or LAGRANGIAN_CONFIG['markers']
        theta = 2 * np.pi * np.arange(markers) / markers
        return cls(np.stack([center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)], axis=1))

    @classmethod
    def segment(cls, start: Sequence[float], end: Sequence[float], markers: Optional[int] = None) -> 'BoundaryCurve':
        markers = markers or LAGRANGIAN_CONFIG['markers']
        s = np.linspace(0.0, 1.0, markers)[:, None]
        return cls((1 - s) * np.asarray(start, dtype=float) + s * np.asarray(end, dtype=float), closed=False)

    def edges(self) -> np.ndarray:
        nxt = np.roll(self.points, -1, axis=0) if self.closed else self.points[1:]
        return nxt - self.points[:len(nxt)]

    def spacing(self) -> np.ndarray:
        return np.linalg.norm(self.edges(), axis=1)

    def spacing_ratio(self) -> float:
        spacing = self.spacing()
        return float(spacing.max() / spacing.min()) if spacing.min() > 0 else math.inf

    def arc_length(self) -> np.ndarray:
        """Arc-length coordinate of every marker"""
        return np.concatenate([[0.0], np.cumsum(self.spacing())])[:len(self.points)]

    @property
    def length(self) -> float:
        return float(self.spacing().sum())

    def tangents(self) -> np.ndarray:
        """Unit tangents from arc-length central differences (one-sided at open ends)"""
        s = self.arc_length()
        if self.closed:
            ds = np.roll(s, -1) - np.roll(s, 1)
            ds[0] += self.length
            ds[-1] += self.length
            raw = (np.roll(self.points, -1, axis=0) - np.roll(self.points, 1, axis=0)) / ds[:, None]
        else:
            raw = np.gradient(self.points, s, axis=0)
        return raw / np.linalg.norm(raw, axis=1, keepdims=True)

    def is_simple(self) -> bool:
        """No two non-adjacent edges intersect"""
        start = self.points[:len(self.edges())]
        end = start + self.edges()
        count = len(start)

        def orient(p, q, r):
            return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                           - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

        a, b = start[:, None], end[:, None]
        c, e = start[None, :], end[None, :]
        crossing = ((orient(a, b, c) * orient(a, b, e) < 0) & (orient(c, e, a) * orient(c, e, b) < 0))
        i, j = np.indices((count, count))
        adjacent = np.abs(i - j) <= 1
        if self.closed:
            adjacent |= np.abs(i - j) == count - 1
        return not np.any(crossing & ~adjacent)

    def holder_seminorm(self, alpha: float, cutoff: Optional[float] = None) -> float:
        """
        max |tau(s) - tau(s')| / dist(s, s')^alpha over marker pairs

        dist is the arc-length distance; pairs closer than cutoff times the mean
        marker spacing are ignored.
        """
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        cutoff = LAGRANGIAN_CONFIG['pair_cutoff'] if cutoff is None else cutoff
        tau = self.tangents()
        s = self.arc_length()
        dist = np.abs(s[:, None] - s[None, :])
        if self.closed:
            dist = np.minimum(dist, self.length - dist)
        keep = dist >= cutoff * self.spacing().mean()
        if not np.any(keep):
            return 0.0
        jumps = np.linalg.norm(tau[:, None, :] - tau[None, :, :], axis=-1)
        return float((jumps[keep] / dist[keep] ** alpha).max())


def patch_holder(flowmap: FlowMap, boundary0: BoundaryCurve, alpha: float,
                 max_spacing_ratio: Optional[float] = None) -> Tuple[List[BoundaryCurve], List[float]]:
    """
    Boundary curves carried by a flow map on the markers of boundary0, and their
    tangent Holder seminorms
    """
    max_spacing_ratio = max_spacing_ratio or LAGRANGIAN_CONFIG['max_spacing_ratio']
    if flowmap.X.shape[-1] != len(boundary0.points):
        raise ValueError("Flow map labels do not match the boundary markers")
    curves, seminorms = [], []
    for t, X in zip(flowmap.times, flowmap.X):
        curve = BoundaryCurve(X.T, boundary0.closed, float(t))
        ratio = curve.spacing_ratio()
        if ratio > max_spacing_ratio:
            raise ReseedingRequiredError(f"Marker spacing ratio {ratio:.1f} at t={t:.4f} exceeds {max_spacing_ratio}",
                                         ratio)
        if not curve.is_simple():
            logger.warning(f"Boundary curve self-intersects at t={t:.4f}")
        curves.append(curve)
        seminorms.append(curve.holder_seminorm(alpha))
    return curves, seminorms


def track_boundary(history: VelocityHistory, boundary0: BoundaryCurve, alpha: float, dt: float,
                   record_every: int = 1) -> Tuple[List[BoundaryCurve], List[float]]:
    """Advect the markers of boundary0 through the velocity history and measure C^(1,alpha) regularity"""
    flowmap = integrate_flow(history, boundary0.points.T, dt, record_every=record_every)
    curves, seminorms = patch_holder(flowmap, boundary0, alpha)
    logger.info(f"Tracked {len(boundary0.points)} markers to t={curves[-1].time:.4f}: "
                f"seminorm {seminorms[0]:.4g} -> {seminorms[-1]:.4g}")
    return curves, seminorms


def write_boundary_csv(curves: Sequence[BoundaryCurve], path: Path) -> Path:
    """Rows of (t, marker, x, y)"""
    path = Path(path)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(['t', 'marker', 'x', 'y'])
        for curve in curves:
            for index, (x, y) in enumerate(curve.points):
                writer.writerow([repr(curve.time), index, repr(float(x)), repr(float(y))])
    return path
