"""Relaxation diagnostics: H-bar series, decay fits, timescale estimates.

The coarse-grained H-function is computed on a schedule of sample times by
reconstructing the ensemble density at each time (fresh backtracking run per
sample) and cell-averaging both the ensemble and Born densities on the same
sub-lattice. Error bars follow the resampling protocol: rerun with the
per-cell sampling bumped from 25 to 27 points per side and report the shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .coarsegrain import CoarseGrainSpec, CoarseMode, coarse_grain, hbar
from .errors import ConfigError, SingularField
from .integrator import IntegratorConfig
from .transport import InitialDensity, backtrack_lattice, cell_centered_axis, density_at
from .wavefield import (
    BOX_SIDE,
    ModeSuperposition,
    born_density,
    energy_spread,
    grad_psi,
    psi_at,
    state_hash,
)

RESAMPLE_STEP = 2  # 25x25 -> 27x27 per-cell resampling for error bars


@dataclass
class HSeries:
    times: np.ndarray
    hbar_values: np.ndarray
    error_bars: np.ndarray | None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.hbar_values = np.asarray(self.hbar_values, dtype=np.float64)
        if self.times.size != self.hbar_values.size:
            raise ConfigError("times and values differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("sample times must be strictly increasing")


@dataclass
class FitResult:
    """Log-linear least-squares fit of an H-bar series.

    t_c is the decay time constant -1/slope; it is +inf (degenerate) when
    the fitted slope is nonnegative.
    """

    t_c: float
    r_squared: float
    slope: float
    intercept: float

    @property
    def degenerate(self) -> bool:
        return not math.isfinite(self.t_c)


def fit_exponential(series) -> FitResult:
    """Ordinary least squares on (t, ln H); all H values must be positive."""
    if isinstance(series, HSeries):
        times, values = series.times, series.hbar_values
    else:
        times, values = (np.asarray(a, dtype=np.float64) for a in series)
    if times.size < 2:
        raise ConfigError("need at least two samples to fit")
    if np.any(values <= 0):
        raise ConfigError("all H values must be positive for a log fit")
    logs = np.log(values)
    t_mean = times.mean()
    l_mean = logs.mean()
    var = float(np.sum((times - t_mean) ** 2))
    slope = float(np.sum((times - t_mean) * (logs - l_mean)) / var)
    intercept = l_mean - slope * t_mean
    resid = logs - (slope * times + intercept)
    total = float(np.sum((logs - l_mean) ** 2))
    r_sq = 1.0 if total == 0.0 else 1.0 - float(np.sum(resid**2)) / total
    t_c = -1.0 / slope if slope < 0 else math.inf
    return FitResult(t_c=t_c, r_squared=r_sq, slope=slope, intercept=intercept)


def tau_rough(epsilon: float, delta_e: float) -> float:
    """Order-of-magnitude relaxation timescale (1/eps) * dE^(-3/2)."""
    if epsilon <= 0 or delta_e <= 0:
        raise ConfigError("epsilon and delta_e must be positive")
    return 1.0 / (epsilon * delta_e**1.5)


def _resampled_dims(grid_dims, spec: CoarseGrainSpec):
    """Grid for the error-bar rerun: per-cell sampling bumped by 2 points,
    scaled proportionally when the run's grid is not an exact multiple."""
    s = spec.samples_per_cell_side
    factor = (s + RESAMPLE_STEP) / s
    return tuple(int(round(n * factor)) for n in grid_dims)


def hbar_at_time(state: ModeSuperposition, rho0: InitialDensity, t: float,
                 spec: CoarseGrainSpec, config: IntegratorConfig, grid_dims,
                 cache_dir=None):
    """One H-bar sample: backtrack, reconstruct, cell-average both fields."""
    origin_map = backtrack_lattice(state, t, grid_dims, config, cache_dir=cache_dir)
    lattice = density_at(state, rho0, origin_map, config)
    rho_cells = coarse_grain(lattice, spec)
    psi2_cells = coarse_grain(lambda xs, ys: born_density(state, xs, ys, t),
                              spec, grid_dims=grid_dims)
    return hbar(rho_cells, psi2_cells), lattice


def hseries(state: ModeSuperposition, rho0: InitialDensity, horizon: float,
            sample_interval: float, spec: CoarseGrainSpec,
            config: IntegratorConfig, grid_dims=None, error_bars: bool = True,
            cache_dir=None, progress=None) -> HSeries:
    """H-bar sampled at 0, dt, 2 dt, ... up to the horizon (inclusive)."""
    if spec.mode is not CoarseMode.NON_OVERLAPPING:
        raise ConfigError("the H-function requires non-overlapping cells")
    if horizon <= 0 or sample_interval <= 0:
        raise ConfigError("horizon and sample_interval must be positive")
    count = int(round(horizon / sample_interval))
    if abs(count * sample_interval - horizon) > 1e-9:
        raise ConfigError("sample_interval must divide the horizon")
    if grid_dims is None:
        grid_dims = spec.default_grid()
    times = sample_interval * np.arange(count + 1)
    values = np.empty(times.size)
    errors = np.empty(times.size) if error_bars else None
    alt_dims = _resampled_dims(grid_dims, spec) if error_bars else None
    for k, t in enumerate(times):
        values[k], _ = hbar_at_time(state, rho0, float(t), spec, config,
                                    grid_dims, cache_dir=cache_dir)
        if error_bars:
            alt, _ = hbar_at_time(state, rho0, float(t), spec, config,
                                  alt_dims, cache_dir=cache_dir)
            errors[k] = abs(alt - values[k])
        if progress is not None:
            progress(k, times.size, float(t), values[k])
    meta = {
        "state": state_hash(state),
        "rho0": rho0.label,
        "epsilon": spec.cell_side,
        "grid": list(grid_dims),
        "resample_grid": list(alt_dims) if alt_dims else None,
        "delta_start": config.delta_start,
        "tableau": _kernels.TABLEAU_ID,
    }
    return HSeries(times=times, hbar_values=values, error_bars=errors, metadata=meta)


@dataclass
class CurvatureReport:
    """Initial-curvature timescale of the coarse-grained H-function."""

    tau: float
    i_value: float
    hbar0: float
    d2h_check: float  # leading-order initial second derivative, always <= 0
    excluded_fraction: float
    epsilon: float
    grid: tuple


def curvature_tau(hbar0: float, i_value: float, epsilon: float) -> float:
    """tau = (1/eps) sqrt(12 H0 / I); exactly proportional to 1/eps for
    fixed fields. +inf at equilibrium (I = 0)."""
    if i_value == 0.0:
        return math.inf
    return (1.0 / epsilon) * math.sqrt(12.0 * hbar0 / i_value)


def _f0_gradient_field(state, rho0):
    """Closure evaluating f0 = rho0/|psi0|^2 and its analytic gradient.

    The formulas are applied unclamped (only a denominator guard against
    literal zero), so identities like grad f0 = 0 at equilibrium hold
    exactly; node neighbourhoods, where the field genuinely diverges, are
    excluded at quadrature time.
    """
    if rho0.gradient is None:
        step = BOX_SIDE / 4096.0

        def rho_grad(xs, ys):
            gx = (-rho0(xs + 2 * step, ys) + 8 * rho0(xs + step, ys)
                  - 8 * rho0(xs - step, ys) + rho0(xs - 2 * step, ys)) / (12 * step)
            gy = (-rho0(xs, ys + 2 * step) + 8 * rho0(xs, ys + step)
                  - 8 * rho0(xs, ys - step) + rho0(xs, ys - 2 * step)) / (12 * step)
            return gx, gy
    else:
        rho_grad = rho0.gradient

    def field(xs, ys):
        psi = np.asarray(psi_at(state, xs, ys, 0.0))
        gx, gy = grad_psi(state, xs, ys, 0.0)
        gx, gy = np.asarray(gx), np.asarray(gy)
        born = np.maximum(np.abs(psi) ** 2, 1e-300)
        born_x = 2.0 * (psi.real * gx.real + psi.imag * gx.imag)
        born_y = 2.0 * (psi.real * gy.real + psi.imag * gy.imag)
        rho = np.asarray(rho0(xs, ys))
        rx, ry = rho_grad(xs, ys)
        f0 = rho / born
        f0x = (np.asarray(rx) * born - rho * born_x) / born**2
        f0y = (np.asarray(ry) * born - rho * born_y) / born**2
        return f0, f0x, f0y, born

    return field


def tau_curvature(state: ModeSuperposition, rho0: InitialDensity,
                  epsilon: float, fine_grid=(1024, 1024),
                  exclude_below_frac: float = 1e-6,
                  fd_step: float = BOX_SIDE / 4096.0,
                  max_excluded: float = 0.01) -> CurvatureReport:
    """Timescale from the initial curvature of the coarse-grained H.

    Builds the scalar field D = velocity . grad f0, integrates
    (|psi0|^2 / f0) |grad D|^2 by midpoint quadrature (excluding points where
    |psi0|^2 falls below exclude_below_frac of its maximum), and converts the
    leading-order curvature -eps^2 I / 12 into tau = (1/eps) sqrt(12 H0 / I).
    grad D uses five-point central differences of step fd_step.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    nx, ny = int(fine_grid[0]), int(fine_grid[1])
    if nx < 512 or ny < 512:
        raise ConfigError("fine_grid must be at least 512x512")
    xs = cell_centered_axis(nx)
    ys = cell_centered_axis(ny)
    xg, yg = np.meshgrid(xs, ys, indexing="ij")

    born0 = born_density(state, xg, yg, 0.0)
    born_max = float(born0.max())
    floor = exclude_below_frac * born_max
    f_field = _f0_gradient_field(state, rho0)

    def d_field(px, py):
        f0, f0x, f0y, born = f_field(px, py)
        gx, gy = grad_psi(state, px, py, 0.0)
        psi = np.asarray(psi_at(state, px, py, 0.0))
        vx = (psi.real * np.asarray(gx).imag - psi.imag * np.asarray(gx).real) / born
        vy = (psi.real * np.asarray(gy).imag - psi.imag * np.asarray(gy).real) / born
        return vx * f0x + vy * f0y

    h = fd_step
    dx = (-d_field(xg + 2 * h, yg) + 8 * d_field(xg + h, yg)
          - 8 * d_field(xg - h, yg) + d_field(xg - 2 * h, yg)) / (12 * h)
    dy = (-d_field(xg, yg + 2 * h) + 8 * d_field(xg, yg + h)
          - 8 * d_field(xg, yg - h) + d_field(xg, yg - 2 * h)) / (12 * h)

    rho = np.asarray(rho0(xg, yg))
    include = (born0 >= floor) & (rho > 0)
    excluded = 1.0 - float(include.mean())
    if excluded > max_excluded:
        raise SingularField(
            f"{excluded:.2%} of the box excluded from the curvature quadrature")
    weight = np.where(include, born0**2 / np.where(include, rho, 1.0), 0.0)
    integrand = weight * (dx**2 + dy**2)
    i_value = float(integrand.sum() * (BOX_SIDE / nx) * (BOX_SIDE / ny))

    psi2_spec = CoarseGrainSpec(cell_side=epsilon)
    h0 = hbar(coarse_grain(lambda a, b: np.asarray(rho0(a, b)), psi2_spec),
              coarse_grain(lambda a, b: born_density(state, a, b, 0.0), psi2_spec))
    d2h = -(epsilon**2) * i_value / 12.0
    tau = curvature_tau(h0, i_value, epsilon)
    return CurvatureReport(tau=tau, i_value=i_value, hbar0=h0, d2h_check=d2h,
                           excluded_fraction=excluded, epsilon=epsilon,
                           grid=(nx, ny))


def first_derivative_check(state: ModeSuperposition, rho0: InitialDensity,
                           spec: CoarseGrainSpec, config: IntegratorConfig,
                           dt: float = 0.01, grid_dims=None,
                           cache_dir=None) -> float:
    """Central-difference estimate of the initial H-bar slope; expected ~ 0.

    Continuity of both densities forces the first derivative to vanish at a
    microstructure-free start, so this is a pipeline self-check.
    """
    if grid_dims is None:
        grid_dims = spec.default_grid()
    plus, _ = hbar_at_time(state, rho0, dt, spec, config, grid_dims, cache_dir)
    minus, _ = hbar_at_time(state, rho0, -dt, spec, config, grid_dims, cache_dir)
    return (plus - minus) / (2.0 * dt)


@dataclass
class RelaxationReport:
    """Bundle of decay-fit and timescale numbers for one configured run."""

    t_c: float
    r_squared: float
    slope: float
    hbar0: float
    tau_rough: float
    energy_spread: float
    tau_curvature: float | None = None
    i_value: float | None = None
    details: dict = field(default_factory=dict)


def build_report(state: ModeSuperposition, series: HSeries, epsilon: float,
                 curvature: CurvatureReport | None = None) -> RelaxationReport:
    fit = fit_exponential(series)
    d_e = energy_spread(state)
    return RelaxationReport(
        t_c=fit.t_c, r_squared=fit.r_squared, slope=fit.slope,
        hbar0=float(series.hbar_values[0]), tau_rough=tau_rough(epsilon, d_e),
        energy_spread=d_e,
        tau_curvature=None if curvature is None else curvature.tau,
        i_value=None if curvature is None else curvature.i_value,
        details={"series_metadata": series.metadata})
