"""
Functional-inequality checks over random field ensembles and solver trajectories
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad, trapezoid
from scipy.special import xlogy

from config import ENSEMBLE_CONFIG, OUTPUT_CONFIG
from fields import (Field, Grid, ScalarField, VectorField, field_values, fourier_truncate, hs_seminorm, like,
                    lp_norm, nodal_lp, pointwise_magnitude, random_scalar_field, spectral_gradient, spectral_ops)
from scenarios import disk_indicator

logger = logging.getLogger(__name__)

DENSITY_MODELS = ('constant', 'patch', 'clipped_random')
ASSERTABLE_LEMMAS = ('weighted_poincare', 'truncation_linf', 'truncation_tail')
FITTED_LEMMAS = ('log_poincare', 'ladyzhenskaya', 'desjardins')
LEMMAS = ASSERTABLE_LEMMAS + FITTED_LEMMAS


class DegenerateWeightError(ValueError):
    """Raised when a weight or density has zero total mass"""


class DegenerateFieldError(ValueError):
    """Raised when a ratio is undefined because the field is constant"""


class VacuumSupportError(ValueError):
    """Raised when z lives entirely in the vacuum of rho"""


@dataclass(frozen=True)
class FieldEnsemble:
    """Deterministic generator settings for (a, z) pairs"""

    seed: int = ENSEMBLE_CONFIG['seed']
    count: int = ENSEMBLE_CONFIG['count']
    spectrum_decay: float = 2.0
    density_model: str = 'patch'
    n: int = 64
    d: int = 2
    rho_star: float = ENSEMBLE_CONFIG['rho_star']
    mass: float = ENSEMBLE_CONFIG['mass']
    patch_area: Tuple[float, float] = ENSEMBLE_CONFIG['patch_area']
    kmax: int = ENSEMBLE_CONFIG['kmax']

    def __post_init__(self):
        if self.density_model not in DENSITY_MODELS:
            raise ValueError(f"Unknown density model: {self.density_model}")
        if self.count < 0:
            raise ValueError(f"count must be nonnegative, got {self.count}")
        if not 0 < self.mass <= self.rho_star:
            raise ValueError(f"constant density {self.mass} must lie in (0, rho_star]")
        if 2 * self.kmax >= self.n:
            raise ValueError(f"kmax={self.kmax} is not resolved on n={self.n}")

    @property
    def grid(self) -> Grid:
        return Grid(self.n, self.d)


@dataclass
class InequalityReport:
    """Per-sample sides and ratios of one inequality over one ensemble"""

    lemma: str
    n: int
    lhs: List[float] = field(default_factory=list)
    rhs: List[float] = field(default_factory=list)
    ratios: List[Optional[float]] = field(default_factory=list)
    violations: List[int] = field(default_factory=list)
    skipped: int = 0
    refinement: Dict[int, float] = field(default_factory=dict)
    stable: Optional[bool] = None

    @property
    def assertable(self) -> bool:
        return self.lemma in ASSERTABLE_LEMMAS

    @property
    def max_ratio(self) -> float:
        values = [r for r in self.ratios if r is not None]
        return max(values) if values else 0.0

    @property
    def passed(self) -> bool:
        return not self.violations if self.assertable else all(
            r is None or math.isfinite(r) for r in self.ratios)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.update(assertable=self.assertable, max_ratio=self.max_ratio, passed=self.passed)
        return data


def _mass(a: ScalarField) -> float:
    if a.values.min() < 0:
        raise ValueError("Weights must be nonnegative")
    mass = float(a.values.sum() * a.grid.cell_volume)
    if mass <= 0:
        raise DegenerateWeightError("Weight has zero total mass")
    return mass


def _integral(values: np.ndarray, grid: Grid) -> float:
    return float(values.sum() * grid.cell_volume)


def _grad_l2(z: ScalarField) -> float:
    return lp_norm(spectral_gradient(z, 'grad'), 2)


def _require_2d(f: Field):
    if f.grid.d != 2:
        raise ValueError("This inequality is checked in two dimensions")


def patch_density(grid: Grid, area: float, center: Sequence[float] = (0.5, 0.5),
                  rho_star: float = 1.0) -> ScalarField:
    """rho_star times the indicator of a disk of the given area"""
    return ScalarField(grid, rho_star * disk_indicator(grid, math.sqrt(area / math.pi), center))


def contrast_density(grid: Grid, contrast: float, rho_star: float = 1.0) -> ScalarField:
    """Patch whose relative deviation |a - M|_2 / M equals the contrast (up to grid error)"""
    return patch_density(grid, 1.0 / (1.0 + contrast ** 2), rho_star=rho_star)


def sample_random_field(ensemble: FieldEnsemble, index: int) -> Tuple[ScalarField, ScalarField]:
    """
    Deterministic (a, z) pair number index of the ensemble

    z is band-limited with |z_k| ~ |k|^(-q) and a random mean; a follows the
    density model and lies in [0, rho_star].
    """
    if not 0 <= index < ensemble.count:
        raise ValueError(f"Sample index {index} outside [0, {ensemble.count})")
    grid = ensemble.grid
    rng = np.random.default_rng([ensemble.seed, index])
    mean = 0.5 * rng.standard_normal()
    z = random_scalar_field(grid, rng, ensemble.kmax, ensemble.spectrum_decay, mean=mean)

    if ensemble.density_model == 'constant':
        a = ScalarField.constant(grid, ensemble.mass)
    elif ensemble.density_model == 'patch':
        area = rng.uniform(*ensemble.patch_area)
        center = rng.uniform(0.0, 1.0, size=grid.d)
        a = patch_density(grid, area, center, ensemble.rho_star)
    else:
        bump = random_scalar_field(grid, rng, min(ensemble.kmax, 4), 2.0).values
        scale = np.abs(bump).max() or 1.0
        a = ScalarField(grid, ensemble.rho_star * np.clip(0.3 + bump / scale, 0.0, 1.0))
    return a, z


def weighted_poincare_check(a: ScalarField, z: ScalarField) -> Tuple[float, float]:
    """|z|_2 against (1/M)|int a z| + (1 + |M - a|_2 / M) |grad z|_2"""
    mass = _mass(a)
    lhs = lp_norm(z, 2)
    rhs = (abs(_integral(a.values * z.values, a.grid)) / mass
           + (1.0 + nodal_lp(np.abs(a.values - mass), a.grid, 2) / mass) * _grad_l2(z))
    return lhs, rhs


def log_poincare_check(a: ScalarField, z: ScalarField) -> Tuple[float, float, Optional[float]]:
    """
    Logarithmic Poincare inequality with its constant left free

    Returns:
        (lhs, rhs_without_C, ratio) with lhs = |z|_2 - (1/M)|int a z| and
        rhs_without_C = log^(1/2)(e + |a - M|_2 / M) |grad z|_2; ratio is None when
        the right side vanishes
    """
    _require_2d(z)
    mass = _mass(a)
    lhs = lp_norm(z, 2) - abs(_integral(a.values * z.values, a.grid)) / mass
    spread = nodal_lp(np.abs(a.values - mass), a.grid, 2) / mass
    rhs = math.sqrt(math.log(math.e + spread)) * _grad_l2(z)
    if rhs <= 1e-12 * max(lp_norm(z, 2), 1e-300):
        return lhs, rhs, None
    return lhs, rhs, max(lhs, 0.0) / rhs


def ladyzhenskaya_ratio(z: ScalarField) -> float:
    """|z|_4^2 / (|z|_2 |grad z|_2)"""
    _require_2d(z)
    l2 = lp_norm(z, 2)
    grad = _grad_l2(z)
    if grad <= 1e-12 * max(l2, 1e-300):
        raise DegenerateFieldError("Ladyzhenskaya ratio is undefined for constant fields")
    return lp_norm(z, 4) ** 2 / (l2 * grad)


@dataclass
class DesjardinsResult:
    lhs: float
    rhs_core: float
    mean_term: float
    fitted_C: float
    literal_ratio: float


def desjardins_check(rho: ScalarField, z: ScalarField, rho_star: float) -> DesjardinsResult:
    """
    Weighted L4 interpolation with logarithmic correction

    lhs = (int rho z^4)^(1/2); rhs_core = |sqrt(rho) z|_2 |grad z|_2 log^(1/2)(e + |rho - M|_2^2/M^2
    + rho* |grad z|_2^2 / |sqrt(rho) z|_2^2); mean_term = |sqrt(rho) z|_2 |mean z|.
    fitted_C compares against rhs_core + mean_term; literal_ratio against rhs_core alone.
    """
    _require_2d(z)
    mass = _mass(rho)
    grid = rho.grid
    weighted = math.sqrt(_integral(rho.values * z.values ** 2, grid))
    if weighted == 0.0:
        raise VacuumSupportError("z is supported in the vacuum of rho")
    lhs = math.sqrt(_integral(rho.values * z.values ** 4, grid))
    grad = _grad_l2(z)
    log_arg = (math.e + nodal_lp(np.abs(rho.values - mass), grid, 2) ** 2 / mass ** 2
               + rho_star * grad ** 2 / weighted ** 2)
    rhs_core = weighted * grad * math.sqrt(math.log(log_arg))
    mean_term = weighted * abs(z.mean())
    literal = lhs / rhs_core if rhs_core > 0 else math.inf
    return DesjardinsResult(lhs, rhs_core, mean_term, lhs / (rhs_core + mean_term), literal)


def truncation_bounds(z: ScalarField, n: int) -> Dict[str, float]:
    """Sup bound of the low modes and H^(1/2) bound of the tail of a Fourier truncation"""
    _require_2d(z)
    if n < 2:
        raise ValueError(f"Truncation order must be >= 2, got {n}")
    _, low, high = fourier_truncate(z, n)
    ops = spectral_ops(z.grid)
    band = (ops.k_abs >= 1) & (ops.k_abs <= n)
    weight_sum = float((1.0 / (4 * math.pi ** 2 * ops.k_abs[band] ** 2)).sum())
    grad = _grad_l2(z)
    return {
        'linf_low': lp_norm(low, math.inf),
        'sqrtlog_bound': math.sqrt(weight_sum) * grad,
        'tail_hhalf': hs_seminorm(high, 0.5),
        'tail_bound': grad / math.sqrt(2 * math.pi * n),
    }


def velocity_lp_ratio(rho0: ScalarField, v0: VectorField, v: VectorField, p: float) -> Optional[float]:
    """(|v|_p - |int rho0 v0| / M) / ((1 + |M - rho0|_2 / M) |grad v|_2), None when grad v = 0"""
    mass = _mass(rho0)
    ops = spectral_ops(v.grid)
    grad = nodal_lp(np.sqrt((ops.gradient_tensor(v.as_array()) ** 2).sum(axis=(0, 1))), v.grid, 2)
    if grad == 0:
        return None
    momentum = np.array([_integral(rho0.values * c.values, rho0.grid) for c in v0.components])
    spread = nodal_lp(np.abs(rho0.values - mass), rho0.grid, 2) / mass
    return (lp_norm(v, p) - float(np.linalg.norm(momentum)) / mass) / ((1.0 + spread) * grad)


def fractional_time_constant(alpha: float, T: float, method: str = 'fubini') -> float:
    """
    Constant C(alpha, T) of the fractional time-regularity bound

    'fubini': (1/(1-2a)) int_0^T int_t^T ((s-t)^(2a-1) - T^(2a-1)) ds/s dt
    'direct': int_0^T h^(2a-2) int_0^(T-h) log((t+h)/t) dt dh, with the inner integral in closed form
    """
    if not 0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    if method == 'direct':
        def integrand(h):
            inner = xlogy(T, T) - xlogy(h, h) - xlogy(T - h, T - h)
            return h ** (2 * alpha - 2) * inner

        value, _ = quad(integrand, 0.0, T, limit=200)
        return float(value)
    if method != 'fubini':
        raise ValueError(f"Unknown method: {method}")

    exponent = 2 * alpha - 1

    def outer(t):
        if t >= T:
            return 0.0
        inner, _ = quad(lambda u: 1.0 / (t + u), 0.0, T - t, weight='alg', wvar=(exponent, 0.0))
        return inner - T ** exponent * math.log(T / t)

    value, _ = quad(outer, 0.0, T, limit=200)
    return float(value / (1 - 2 * alpha))


@dataclass
class FractionalNorm:
    norm: float
    bound_rhs: float
    l2lp: float
    difference_part: float
    weighted_derivative: float
    constant: float


def fractional_time_norm(series: Sequence[Any], times: Sequence[float], alpha: float, p: float,
                         constant_method: str = 'fubini') -> FractionalNorm:
    """
    H^(1/2 - alpha)(0,T;Lp) norm of a time series by finite differences

    norm^2 = |z|^2_{L2(Lp)} + int_0^T int_0^(T-h) |z(t+h) - z(t)|_p^2 h^(2 alpha - 2) dt dh, and
    bound_rhs^2 = |z|^2_{L2(Lp)} + C |sqrt(t) z_t|^2_{L2(Lp)} with t measured from the first sample.

    Args:
        series: scalar or vector fields on one grid at uniformly spaced times
        times: sample times
        alpha: in (0, 1/2)
        p: spatial Lebesgue exponent
    """
    if not 0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    t = np.asarray(times, dtype=float)
    if len(series) != len(t) or len(t) < 3:
        raise ValueError("fractional_time_norm needs at least three samples with matching times")
    step = t[1] - t[0]
    if step <= 0 or not np.allclose(np.diff(t), step, rtol=1e-8, atol=0.0):
        raise ValueError("fractional_time_norm needs a uniform increasing time grid")

    first = series[0]
    grid = first.grid
    values = np.stack([field_values(f) for f in series])

    def lp_of(arr):
        return nodal_lp(pointwise_magnitude(like(first, arr)), grid, p)

    count = len(t)
    horizon = t[-1] - t[0]
    l2lp_sq = float(trapezoid([lp_of(v) ** 2 for v in values], t))

    difference = 0.0
    for j in range(1, count):
        h = j * step
        increments = sum(lp_of(values[i + j] - values[i]) ** 2 for i in range(count - j))
        difference += step * step * increments * h ** (2 * alpha - 2)

    midpoints = (t[:-1] + t[1:]) / 2 - t[0]
    weighted_sq = float(sum(step * mid * (lp_of(values[i + 1] - values[i]) / step) ** 2
                            for i, mid in enumerate(midpoints)))
    constant = fractional_time_constant(alpha, horizon, constant_method)
    return FractionalNorm(
        norm=math.sqrt(l2lp_sq + difference),
        bound_rhs=math.sqrt(l2lp_sq + constant * weighted_sq),
        l2lp=math.sqrt(l2lp_sq),
        difference_part=difference,
        weighted_derivative=math.sqrt(weighted_sq),
        constant=constant,
    )


def evaluate_sample(lemma: str, a: ScalarField, z: ScalarField, rho_star: float = 1.0,
                    truncation_n: Optional[int] = None) -> Tuple[float, float, Optional[float]]:
    """(lhs, rhs, ratio) of one lemma on one sample"""
    truncation_n = truncation_n or ENSEMBLE_CONFIG['truncation_n']
    if lemma == 'weighted_poincare':
        lhs, rhs = weighted_poincare_check(a, z)
    elif lemma == 'log_poincare':
        return log_poincare_check(a, z)
    elif lemma == 'ladyzhenskaya':
        centered = z - z.mean()
        ratio = ladyzhenskaya_ratio(centered)
        lhs = lp_norm(centered, 4) ** 2
        return lhs, lhs / ratio, ratio
    elif lemma == 'desjardins':
        result = desjardins_check(a, z, rho_star)
        return result.lhs, result.rhs_core + result.mean_term, result.fitted_C
    elif lemma == 'truncation_linf':
        bounds = truncation_bounds(z, truncation_n)
        lhs, rhs = bounds['linf_low'], bounds['sqrtlog_bound']
    elif lemma == 'truncation_tail':
        bounds = truncation_bounds(z, truncation_n)
        lhs, rhs = bounds['tail_hhalf'], bounds['tail_bound']
    else:
        raise ValueError(f"Unknown lemma: {lemma}")
    return lhs, rhs, (lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf))


def run_ensemble(lemma: str, ensemble: FieldEnsemble, workers: Optional[int] = None,
                 rhs_scale: float = 1.0, truncation_n: Optional[int] = None) -> InequalityReport:
    """
    Evaluate one lemma on every sample of the ensemble

    Args:
        lemma: one of LEMMAS
        ensemble: sample generator
        workers: worker threads
        rhs_scale: multiplier on the right-hand side (negative controls)

    Returns:
        InequalityReport in sample order; assertable lemmas list their violations
    """
    if lemma not in LEMMAS:
        raise ValueError(f"Unknown lemma: {lemma}")
    workers = workers or OUTPUT_CONFIG['workers']
    report = InequalityReport(lemma=lemma, n=ensemble.n)

    def evaluate(index):
        a, z = sample_random_field(ensemble, index)
        try:
            return evaluate_sample(lemma, a, z, ensemble.rho_star, truncation_n)
        except (DegenerateFieldError, DegenerateWeightError, VacuumSupportError) as e:
            logger.warning(f"{lemma} sample {index} skipped: {e}")
            return None

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(evaluate, range(ensemble.count)))

    for index, result in enumerate(results):
        if result is None:
            report.skipped += 1
            continue
        lhs, rhs, ratio = result
        rhs *= rhs_scale
        if ratio is not None and rhs_scale != 1.0:
            ratio = ratio / rhs_scale
        report.lhs.append(lhs)
        report.rhs.append(rhs)
        report.ratios.append(ratio)
        if report.assertable and lhs > rhs * (1 + 1e-12) + 1e-14:
            report.violations.append(index)
    if report.violations:
        logger.error(f"{lemma}: {len(report.violations)} violations on n={ensemble.n}")
    logger.info(f"{lemma} on n={ensemble.n}: {ensemble.count} samples, max ratio {report.max_ratio:.4g}")
    return report


def refinement_study(lemma: str, ensemble: FieldEnsemble, n_list: Optional[Sequence[int]] = None,
                     workers: Optional[int] = None, band: Optional[float] = None,
                     rhs_scale: float = 1.0, truncation_n: Optional[int] = None) -> InequalityReport:
    """
    Run the ensemble on each resolution and compare the maximal ratios

    Returns:
        Report of the finest resolution with refinement max ratios and a stability
        flag (relative change of the max ratio within band between consecutive n)
    """
    n_list = sorted(n_list or ENSEMBLE_CONFIG['n_list'])
    band = ENSEMBLE_CONFIG['stability_band'] if band is None else band
    reports = [run_ensemble(lemma, replace(ensemble, n=n), workers, rhs_scale, truncation_n) for n in n_list]
    final = reports[-1]
    final.refinement = {r.n: r.max_ratio for r in reports}
    changes = [abs(b.max_ratio - a.max_ratio) / a.max_ratio
               for a, b in zip(reports, reports[1:]) if a.max_ratio > 0]
    final.stable = all(c <= band for c in changes)
    final.violations = sorted({i for r in reports for i in r.violations})
    return final
