"""
Periodic grid, spectral calculus and norms for the vacuum INS harness

Fourier convention: f(x) = sum_k f_k exp(2 pi i k.x) on the unit torus, with
f_k = integral of f(x) exp(-2 pi i k.x) dx. Quadrature is nodal sums times h^d.
"""

import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy import fft as sfft

from config import GRID_CONFIG

logger = logging.getLogger(__name__)

SPECTRAL_MODES = ('grad', 'div', 'curl', 'laplacian', 'inv_laplacian')


class MeanViolationError(ValueError):
    """Raised when an operation requires a zero-mean field"""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the unit torus"""

    n: int = GRID_CONFIG['n']
    d: int = GRID_CONFIG['d']

    def __post_init__(self):
        if self.n < GRID_CONFIG['min_n'] or self.n & (self.n - 1):
            raise ValueError(f"Grid size must be a power of two >= {GRID_CONFIG['min_n']}, got {self.n}")
        if self.d not in (2, 3):
            raise ValueError(f"Grid dimension must be 2 or 3, got {self.d}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """Node coordinates, one array per axis (ij indexing)"""
        axis = np.arange(self.n) * self.h
        return tuple(np.meshgrid(*([axis] * self.d), indexing='ij'))


@dataclass
class ScalarField:
    """Real samples of a scalar function on a grid"""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"Expected values of shape {self.grid.shape}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Field values must be finite")

    @classmethod
    def zeros(cls, grid: Grid) -> 'ScalarField':
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> 'ScalarField':
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[..., np.ndarray]) -> 'ScalarField':
        return cls(grid, np.array(np.broadcast_to(func(*grid.coordinates()), grid.shape), dtype=float))

    def mean(self) -> float:
        return float(self.values.mean())

    def copy(self) -> 'ScalarField':
        return ScalarField(self.grid, self.values.copy())

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _raw(other))

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _raw(other))

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * _raw(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


@dataclass
class VectorField:
    """d scalar components on a shared grid"""

    components: Tuple[ScalarField, ...]

    def __post_init__(self):
        self.components = tuple(self.components)
        if not self.components:
            raise ValueError("VectorField needs at least one component")
        grid = self.components[0].grid
        if any(c.grid != grid for c in self.components):
            raise ValueError("All components must share one grid")
        if len(self.components) != grid.d:
            raise ValueError(f"Expected {grid.d} components, got {len(self.components)}")

    @property
    def grid(self) -> Grid:
        return self.components[0].grid

    @classmethod
    def from_array(cls, grid: Grid, array: np.ndarray) -> 'VectorField':
        array = np.asarray(array, dtype=float)
        return cls(tuple(ScalarField(grid, array[i]) for i in range(grid.d)))

    @classmethod
    def zeros(cls, grid: Grid) -> 'VectorField':
        return cls.from_array(grid, np.zeros((grid.d,) + grid.shape))

    @classmethod
    def from_functions(cls, grid: Grid, *funcs: Callable[..., np.ndarray]) -> 'VectorField':
        return cls(tuple(ScalarField.from_function(grid, f) for f in funcs))

    def as_array(self) -> np.ndarray:
        return np.stack([c.values for c in self.components])

    def copy(self) -> 'VectorField':
        return VectorField.from_array(self.grid, self.as_array())

    def __add__(self, other):
        return VectorField.from_array(self.grid, self.as_array() + _raw(other))

    def __sub__(self, other):
        return VectorField.from_array(self.grid, self.as_array() - _raw(other))

    def __mul__(self, other):
        return VectorField.from_array(self.grid, self.as_array() * _raw(other))

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField.from_array(self.grid, -self.as_array())


Field = Union[ScalarField, VectorField]


def _raw(other: Any):
    if isinstance(other, VectorField):
        return other.as_array()
    if isinstance(other, ScalarField):
        return other.values
    return other


def field_values(f: Field) -> np.ndarray:
    """Raw array of a field: grid shape for scalars, (d, *grid shape) for vectors"""
    return f.as_array() if isinstance(f, VectorField) else f.values


def like(f: Field, values: np.ndarray) -> Field:
    """Wrap an array with the same rank and grid as f"""
    if values.shape == f.grid.shape:
        return ScalarField(f.grid, values)
    return VectorField.from_array(f.grid, values)


class SpectralOps:
    """Fourier symbols and transforms for one grid

    First-derivative symbols drop the Nyquist component (it has no real
    derivative on the grid); the Laplacian keeps the full symbol.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        n, d = grid.n, grid.d
        k1 = sfft.fftfreq(n, d=1.0 / n)
        k_res = k1.copy()
        k_res[n // 2] = 0.0
        self.axes = tuple(range(-d, 0))
        self.k = np.array(np.meshgrid(*([k1] * d), indexing='ij'))
        self.k_abs = np.sqrt((self.k ** 2).sum(axis=0))
        self.kvec = 2.0 * np.pi * np.array(np.meshgrid(*([k_res] * d), indexing='ij'))
        self.ksq_resolved = (self.kvec ** 2).sum(axis=0)
        self.ksq = ((2.0 * np.pi * self.k) ** 2).sum(axis=0)
        cutoff = GRID_CONFIG['dealias_fraction'] * (n / 2)
        self.dealias_mask = np.all(np.abs(self.k) < cutoff, axis=0)
        for arr in (self.k, self.k_abs, self.kvec, self.ksq_resolved, self.ksq, self.dealias_mask):
            arr.setflags(write=False)

    def forward(self, values: np.ndarray) -> np.ndarray:
        return sfft.fftn(values, axes=self.axes, norm='forward')

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.ifftn(coeffs, axes=self.axes, norm='forward').real

    def grad(self, values: np.ndarray) -> np.ndarray:
        return self.inverse(1j * self.kvec * self.forward(values))

    def div(self, vec: np.ndarray) -> np.ndarray:
        return self.inverse((1j * self.kvec * self.forward(vec)).sum(axis=0))

    def gradient_tensor(self, vec: np.ndarray) -> np.ndarray:
        """Array T with T[i, j] = d v_i / d x_j"""
        coeffs = self.forward(vec)
        return self.inverse(1j * self.kvec[None, :] * coeffs[:, None])

    def hessian(self, values: np.ndarray) -> np.ndarray:
        """Array H with H[i, j] = d^2 f / dx_i dx_j"""
        coeffs = self.forward(values)
        return self.inverse(-self.kvec[:, None] * self.kvec[None, :] * coeffs)

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        return self.inverse(-self.ksq * self.forward(values))

    def inv_laplacian(self, values: np.ndarray) -> np.ndarray:
        coeffs = self.forward(values)
        out = np.zeros_like(coeffs)
        nonzero = np.broadcast_to(self.ksq > 0, coeffs.shape)
        np.divide(-coeffs, np.broadcast_to(self.ksq, coeffs.shape), out=out, where=nonzero)
        return self.inverse(out)

    def leray(self, vec: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Split vec into its divergence-free part and its gradient part"""
        coeffs = self.forward(vec)
        grad_coeffs = self.gradient_part(coeffs)
        return self.inverse(coeffs - grad_coeffs), self.inverse(grad_coeffs)

    def gradient_part(self, coeffs: np.ndarray) -> np.ndarray:
        """Fourier coefficients of the gradient part of a vector field"""
        proj = np.zeros(coeffs.shape[1:], dtype=complex)
        np.divide((self.kvec * coeffs).sum(axis=0), self.ksq_resolved, out=proj,
                  where=self.ksq_resolved > 0)
        return self.kvec * proj

    def potential(self, grad_coeffs: np.ndarray) -> np.ndarray:
        """Zero-mean scalar P with grad P equal to the given gradient part"""
        out = np.zeros(grad_coeffs.shape[1:], dtype=complex)
        np.divide(-1j * (self.kvec * grad_coeffs).sum(axis=0), self.ksq_resolved, out=out,
                  where=self.ksq_resolved > 0)
        return self.inverse(out)

    def dealias(self, values: np.ndarray) -> np.ndarray:
        return self.inverse(self.forward(values) * self.dealias_mask)


@lru_cache(maxsize=32)
def spectral_ops(grid: Grid) -> SpectralOps:
    return SpectralOps(grid)


def nodal_lp(magnitude: np.ndarray, grid: Grid, p: float) -> float:
    """Lp norm of a nonnegative nodal array by nodal quadrature"""
    if p < 1:
        raise ValueError(f"Lp norms need p >= 1, got {p}")
    if np.isinf(p):
        return float(magnitude.max()) if magnitude.size else 0.0
    return float((magnitude ** p).sum() * grid.cell_volume) ** (1.0 / p)


def pointwise_magnitude(f: Field) -> np.ndarray:
    if isinstance(f, VectorField):
        return np.sqrt((f.as_array() ** 2).sum(axis=0))
    return np.abs(f.values)


def _check_zero_mean(values: np.ndarray, grid: Grid):
    means = values.reshape(-1, *grid.shape).mean(axis=tuple(range(1, grid.d + 1)))
    rms = np.sqrt((values ** 2).mean())
    if np.any(np.abs(means) > GRID_CONFIG['mean_tolerance'] * max(rms, 1e-300)):
        raise MeanViolationError(f"inv_laplacian needs zero-mean input, got mean {means.tolist()}")


def spectral_gradient(f: Field, mode: str) -> Field:
    """
    Apply a Fourier-symbol differential operator

    Args:
        f: ScalarField or VectorField
        mode: one of grad, div, curl, laplacian, inv_laplacian

    Returns:
        Field of the rank the operator produces
    """
    if mode not in SPECTRAL_MODES:
        raise ValueError(f"Unknown spectral mode: {mode}")
    grid = f.grid
    ops = spectral_ops(grid)
    is_vector = isinstance(f, VectorField)

    if mode == 'grad':
        if is_vector:
            raise ValueError("grad expects a ScalarField")
        return VectorField.from_array(grid, ops.grad(f.values))
    if mode == 'div':
        if not is_vector:
            raise ValueError("div expects a VectorField")
        return ScalarField(grid, ops.div(f.as_array()))
    if mode == 'curl':
        if not is_vector:
            raise ValueError("curl expects a VectorField")
        t = ops.gradient_tensor(f.as_array())
        if grid.d == 2:
            return ScalarField(grid, t[1, 0] - t[0, 1])
        return VectorField.from_array(grid, np.stack([t[2, 1] - t[1, 2], t[0, 2] - t[2, 0], t[1, 0] - t[0, 1]]))
    values = field_values(f)
    if mode == 'laplacian':
        return like(f, ops.laplacian(values))
    _check_zero_mean(values, grid)
    return like(f, ops.inv_laplacian(values))


def leray_project(v: VectorField) -> Tuple[VectorField, VectorField]:
    """Helmholtz split v = v_df + grad_p, with div v_df = 0"""
    v_df, grad_p = spectral_ops(v.grid).leray(v.as_array())
    return VectorField.from_array(v.grid, v_df), VectorField.from_array(v.grid, grad_p)


def lp_norm(f: Field, p: float) -> float:
    """Lp norm over the torus; vectors use the pointwise Euclidean length, p=inf is the nodal max"""
    if p < 1:
        raise ValueError(f"Lp norms need p >= 1, got {p}")
    return nodal_lp(pointwise_magnitude(f), f.grid, p)


def hs_seminorm(f: Field, s: float) -> float:
    """Homogeneous H^s seminorm (sum over nonzero resolved modes of (2 pi |k|)^(2s) |f_k|^2)^(1/2)"""
    if s < 0:
        raise ValueError(f"hs_seminorm needs s >= 0, got {s}")
    ops = spectral_ops(f.grid)
    coeffs = ops.forward(field_values(f))
    active = ops.ksq_resolved > 0
    weight = np.zeros(f.grid.shape)
    weight[active] = ops.ksq_resolved[active] ** s
    return float(np.sqrt((weight * np.abs(coeffs) ** 2).sum()))


def fourier_truncate(f: ScalarField, n: int) -> Tuple[float, ScalarField, ScalarField]:
    """
    Split f into its mean, the modes 1 <= |k| <= n and the modes |k| > n

    Returns:
        (mean, low, high) with f = mean + low + high
    """
    if n < 1:
        raise ValueError(f"Truncation order must be >= 1, got {n}")
    ops = spectral_ops(f.grid)
    coeffs = ops.forward(f.values)
    low_mask = (ops.k_abs >= 1) & (ops.k_abs <= n)
    high_mask = ops.k_abs > n
    mean = float(coeffs[(0,) * f.grid.d].real)
    return (mean,
            ScalarField(f.grid, ops.inverse(coeffs * low_mask)),
            ScalarField(f.grid, ops.inverse(coeffs * high_mask)))


def random_scalar_field(grid: Grid, rng: np.random.Generator, kmax: int = 8,
                        decay: float = 1.0, mean: float = 0.0) -> ScalarField:
    """
    Band-limited random field with |f_k| ~ |k|^(-decay) and random phases

    Draws depend only on (rng, kmax, d), so the same generator state yields the
    same continuous field on every grid that resolves kmax.
    """
    if 2 * kmax >= grid.n:
        raise ValueError(f"kmax={kmax} is not resolved on n={grid.n}")
    box = np.arange(-kmax, kmax + 1)
    ks = np.array(np.meshgrid(*([box] * grid.d), indexing='ij'))
    radius = np.sqrt((ks ** 2).sum(axis=0))
    amplitude = np.zeros_like(radius)
    amplitude[radius > 0] = radius[radius > 0] ** (-decay)
    noise = rng.standard_normal(radius.shape) + 1j * rng.standard_normal(radius.shape)
    coeffs = np.zeros(grid.shape, dtype=complex)
    coeffs[np.ix_(*([box % grid.n] * grid.d))] = amplitude * noise / np.sqrt(2.0)
    values = sfft.ifftn(coeffs, norm='forward').real + mean
    return ScalarField(grid, values)


def random_vector_field(grid: Grid, rng: np.random.Generator, kmax: int = 8,
                        decay: float = 1.0, solenoidal: bool = False) -> VectorField:
    v = VectorField(tuple(random_scalar_field(grid, rng, kmax, decay) for _ in range(grid.d)))
    if solenoidal:
        v, _ = leray_project(v)
    return v


def write_snapshot(path: Union[str, Path], f: Field, name: str, time: float) -> Path:
    """
    Write a field snapshot

    Layout: uint32 LE header length, UTF-8 JSON header, then float64 LE values
    component-major in C order.
    """
    path = Path(path)
    values = field_values(f)
    components = values.shape[0] if isinstance(f, VectorField) else 1
    header = json.dumps({'n': f.grid.n, 'd': f.grid.d, 'name': name, 'time': float(time),
                         'components': components, 'dtype': '<f8'}, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as handle:
        handle.write(np.array([len(header)], dtype='<u4').tobytes())
        handle.write(header)
        handle.write(np.ascontiguousarray(values, dtype='<f8').tobytes(order='C'))
    logger.debug(f"Snapshot {name} at t={time} written to {path}")
    return path


def read_snapshot(path: Union[str, Path]) -> Tuple[Field, Dict[str, Any]]:
    """Read a snapshot written by write_snapshot"""
    raw = Path(path).read_bytes()
    length = int(np.frombuffer(raw[:4], dtype='<u4')[0])
    header = json.loads(raw[4:4 + length].decode('utf-8'))
    grid = Grid(header['n'], header['d'])
    values = np.frombuffer(raw[4 + length:], dtype='<f8').astype(float)
    if header['components'] == 1:
        return ScalarField(grid, values.reshape(grid.shape)), header
    return VectorField.from_array(grid, values.reshape((header['components'],) + grid.shape)), header
