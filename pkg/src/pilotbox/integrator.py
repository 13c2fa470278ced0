"""Adaptive trajectory integration with ladder validation.

A trajectory is first run at the starting local tolerance, then rerun one
decade tighter; if the two endpoints agree within the global error threshold
the tighter result is kept as Validated. Otherwise the ladder descends decade
by decade until agreement, the tolerance floor, or the step budget runs out.
Problematic trajectories keep the best value available and carry an honest
status so callers can apply their own fallback policy.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import TABLEAU_ID  # re-exported; pinned in run manifests
from .errors import ConfigError, NodeSingularity
from .wavefield import NODE_FLOOR, ModeSuperposition, kernel_arrays


class TrajectoryStatus(enum.IntEnum):
    """Outcome of a trajectory run.

    COMPLETED marks a single-tolerance run that finished; VALIDATED is
    reserved for runs confirmed by two consecutive ladder levels agreeing
    within the global error threshold.
    """

    COMPLETED = _kernels.COMPLETED
    VALIDATED = _kernels.VALIDATED
    TOLERANCE_FLOOR = _kernels.TOLERANCE_FLOOR
    STEP_LIMIT = _kernels.STEP_LIMIT
    NODE_ABORT = _kernels.NODE_ABORT


@dataclass(frozen=True)
class IntegratorConfig:
    """Stepper and validation-ladder parameters.

    delta_start is the per-step tolerance: a step of size h is accepted only
    when both coordinate error estimates are below h * delta. The ladder
    tightens delta by delta_ladder_factor until two consecutive runs land
    within global_error_threshold of each other or delta_min is reached.
    """

    delta_start: float = 1e-6
    delta_min: float = 1e-12
    delta_ladder_factor: float = 10.0
    global_error_threshold: float = 0.01
    max_steps: int = 10**8
    node_floor: float = NODE_FLOOR
    safety_factor: float = 0.9
    initial_step_fraction: float = 1e-4

    def __post_init__(self):
        if self.delta_min > self.delta_start:
            raise ConfigError("delta_min must not exceed delta_start")
        for name in ("delta_start", "delta_min", "delta_ladder_factor",
                     "global_error_threshold", "node_floor", "safety_factor",
                     "initial_step_fraction"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be positive")
        if self.delta_ladder_factor <= 1:
            raise ConfigError("delta_ladder_factor must exceed 1")

    def ladder(self):
        """Tolerance levels from delta_start down to delta_min inclusive."""
        levels = []
        delta = self.delta_start
        while delta > self.delta_min * (1.0 + 1e-9):
            levels.append(delta)
            delta /= self.delta_ladder_factor
        levels.append(self.delta_min)
        return levels


@dataclass
class TrajectoryResult:
    endpoint: tuple
    status: TrajectoryStatus
    delta_used: float
    steps_taken: int
    samples: np.ndarray | None = None  # columns t, x, y, h


@dataclass
class BatchResult:
    """Endpoints of many trajectories sharing one (t0, t1) leg."""

    x: np.ndarray
    y: np.ndarray
    status: np.ndarray  # TrajectoryStatus codes
    delta_used: np.ndarray
    steps: np.ndarray

    @property
    def has_endpoint(self) -> np.ndarray:
        return ~np.isnan(self.x)

    @property
    def validated_fraction(self) -> float:
        return float(np.mean(self.status == int(TrajectoryStatus.VALIDATED)))


@dataclass
class DivergenceSeries:
    times: np.ndarray
    separations: np.ndarray
    path_a: np.ndarray  # (n, 2) positions at times
    path_b: np.ndarray


def _check_inside(x: float, y: float, label: str = "pos0"):
    if not (0.0 < x < math.pi and 0.0 < y < math.pi):
        raise ConfigError(f"{label}=({x}, {y}) must lie strictly inside the box")


def integrate(state: ModeSuperposition, pos0, t0: float, t1: float,
              delta: float, config: IntegratorConfig,
              record: bool = False, record_capacity: int = 2_000_000) -> TrajectoryResult:
    """Single run at one fixed local tolerance.

    Backward integration (t1 < t0) is the same ODE stepped with negative h.
    With record=True every accepted step is kept (columns t, x, y, h).
    Raises NodeSingularity when step halving underflowed beneath the node
    floor; other failures are reported in the status.
    """
    x0, y0 = float(pos0[0]), float(pos0[1])
    _check_inside(x0, y0)
    ms, ns, cre, cim, kmax = kernel_arrays(state)
    if record:
        rec_t = np.empty(record_capacity)
        rec_x = np.empty(record_capacity)
        rec_y = np.empty(record_capacity)
        rec_h = np.empty(record_capacity)
        x, y, status, steps, count = _kernels._endpoint_recorded(
            ms, ns, cre, cim, kmax, x0, y0, t0, t1, delta,
            config.node_floor, config.max_steps, config.safety_factor,
            config.initial_step_fraction, rec_t, rec_x, rec_y, rec_h)
        if status == _kernels.BUFFER_FULL:
            raise MemoryError(
                f"trajectory exceeded record_capacity={record_capacity} accepted steps; "
                "raise the capacity or disable recording")
        samples = np.column_stack([rec_t[:count], rec_x[:count], rec_y[:count], rec_h[:count]])
    else:
        x, y, status, steps = _kernels._endpoint(
            ms, ns, cre, cim, kmax, x0, y0, t0, t1, delta,
            config.node_floor, config.max_steps, config.safety_factor,
            config.initial_step_fraction)
        samples = None
    if status == _kernels.NODE_ABORT:
        raise NodeSingularity(
            f"step size underflowed below the node floor near ({x:.6f}, {y:.6f})")
    return TrajectoryResult(endpoint=(x, y), status=TrajectoryStatus(status),
                            delta_used=delta, steps_taken=int(steps), samples=samples)


def integrate_batch(state: ModeSuperposition, xs, ys, t0: float, t1: float,
                    delta: float, config: IntegratorConfig, idx=None):
    """One fixed-tolerance run over arrays of start points (parallel)."""
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    n = xs.size
    if idx is None:
        idx = np.arange(n, dtype=np.int64)
    ms, ns, cre, cim, kmax = kernel_arrays(state)
    out_x = np.full(n, np.nan)
    out_y = np.full(n, np.nan)
    out_status = np.full(n, -1, dtype=np.int64)
    out_steps = np.zeros(n, dtype=np.int64)
    if idx.size:
        _kernels._endpoints_batch(ms, ns, cre, cim, kmax, xs.ravel(), ys.ravel(),
                                  np.ascontiguousarray(idx, dtype=np.int64),
                                  t0, t1, delta, config.node_floor,
                                  config.max_steps, config.safety_factor,
                                  config.initial_step_fraction,
                                  out_x, out_y, out_status, out_steps)
    return out_x, out_y, out_status, out_steps


def integrate_batch_validated(state: ModeSuperposition, xs, ys, t0: float,
                              t1: float, config: IntegratorConfig,
                              progress=None) -> BatchResult:
    """Ladder-validated endpoints for many trajectories.

    Policy for problematic trajectories: a run that fails at the starting
    tolerance leaves no endpoint (NaN, caller applies a neighbour fallback);
    a failure deeper in the ladder keeps the endpoint from the smallest
    tolerance that completed; exhausting the ladder keeps the delta_min
    endpoint with status TOLERANCE_FLOOR.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    n = xs.size
    final_x = np.full(n, np.nan)
    final_y = np.full(n, np.nan)
    final_status = np.full(n, -1, dtype=np.int64)
    final_delta = np.zeros(n)
    total_steps = np.zeros(n, dtype=np.int64)

    ladder = config.ladder()
    pending = np.arange(n, dtype=np.int64)
    prev_x = np.full(n, np.nan)
    prev_y = np.full(n, np.nan)
    prev_delta = np.zeros(n)

    for level, delta in enumerate(ladder):
        if pending.size == 0:
            break
        run_x, run_y, run_status, run_steps = integrate_batch(
            state, xs, ys, t0, t1, delta, config, idx=pending)
        total_steps[pending] += run_steps[pending]
        if progress is not None:
            progress(level, delta, pending.size)

        completed = run_status == _kernels.COMPLETED
        failed = pending[~completed[pending]]
        if failed.size:
            # Keep the best earlier endpoint where one exists (NaN otherwise).
            final_x[failed] = prev_x[failed]
            final_y[failed] = prev_y[failed]
            final_status[failed] = run_status[failed]
            final_delta[failed] = np.where(np.isnan(prev_x[failed]), delta,
                                           prev_delta[failed])

        alive = pending[completed[pending]]
        if level == 0:
            prev_x[alive] = run_x[alive]
            prev_y[alive] = run_y[alive]
            prev_delta[alive] = delta
            pending = alive
            continue

        dist = np.hypot(run_x[alive] - prev_x[alive], run_y[alive] - prev_y[alive])
        agree = dist < config.global_error_threshold
        done = alive[agree]
        final_x[done] = run_x[done]
        final_y[done] = run_y[done]
        final_status[done] = _kernels.VALIDATED
        final_delta[done] = delta

        rest = alive[~agree]
        if delta <= config.delta_min * (1.0 + 1e-9):
            final_x[rest] = run_x[rest]
            final_y[rest] = run_y[rest]
            final_status[rest] = _kernels.TOLERANCE_FLOOR
            final_delta[rest] = delta
            pending = np.empty(0, dtype=np.int64)
        else:
            prev_x[rest] = run_x[rest]
            prev_y[rest] = run_y[rest]
            prev_delta[rest] = delta
            pending = rest

    return BatchResult(x=final_x, y=final_y, status=final_status,
                       delta_used=final_delta, steps=total_steps)


def integrate_validated(state: ModeSuperposition, pos0, t0: float, t1: float,
                        config: IntegratorConfig) -> TrajectoryResult:
    """Ladder-validated endpoint for one trajectory."""
    x0, y0 = float(pos0[0]), float(pos0[1])
    _check_inside(x0, y0)
    batch = integrate_batch_validated(state, np.array([x0]), np.array([y0]),
                                      t0, t1, config)
    status = TrajectoryStatus(int(batch.status[0]))
    return TrajectoryResult(endpoint=(float(batch.x[0]), float(batch.y[0])),
                            status=status,
                            delta_used=float(batch.delta_used[0]),
                            steps_taken=int(batch.steps[0]))


def _sampled_path(state, x0, y0, times, delta, config):
    ms, ns, cre, cim, kmax = kernel_arrays(state)
    out_x = np.empty(times.size)
    out_y = np.empty(times.size)
    status, filled = _kernels._through_times(
        ms, ns, cre, cim, kmax, x0, y0, times, delta, config.node_floor,
        config.max_steps, config.safety_factor, config.initial_step_fraction,
        out_x, out_y)
    return out_x, out_y, status, filled


def sampled_trajectory(state: ModeSuperposition, pos0, times,
                       config: IntegratorConfig) -> np.ndarray:
    """Ladder-validated positions at the given monotone times; (n, 2) array.

    Validation compares final positions of consecutive ladder levels, then
    keeps the tighter run's whole path.
    """
    x0, y0 = float(pos0[0]), float(pos0[1])
    _check_inside(x0, y0)
    times = np.asarray(times, dtype=np.float64)
    prev = None
    prev_delta = None
    for delta in config.ladder():
        out_x, out_y, status, filled = _sampled_path(state, x0, y0, times, delta, config)
        if status == _kernels.NODE_ABORT:
            raise NodeSingularity(f"path from ({x0}, {y0}) hit a node at tolerance {delta:g}")
        if status != _kernels.COMPLETED:
            if prev is not None:
                return prev
            raise NodeSingularity(
                f"path from ({x0}, {y0}) failed (status {status}) at tolerance {delta:g}")
        cur = np.column_stack([out_x, out_y])
        if prev is not None:
            gap = math.hypot(cur[-1, 0] - prev[-1, 0], cur[-1, 1] - prev[-1, 1])
            if gap < config.global_error_threshold:
                return cur
        prev = cur
        prev_delta = delta
    return prev  # tolerance floor: best available path


def pair_divergence(state: ModeSuperposition, pos_a, pos_b, t1: float,
                    sample_count: int, config: IntegratorConfig) -> DivergenceSeries:
    """Euclidean separation of two trajectories at uniform times in [0, t1]."""
    if sample_count < 2:
        raise ConfigError("sample_count must be at least 2")
    times = np.linspace(0.0, t1, sample_count)
    path_a = sampled_trajectory(state, pos_a, times, config)
    path_b = sampled_trajectory(state, pos_b, times, config)
    separations = np.hypot(path_a[:, 0] - path_b[:, 0], path_a[:, 1] - path_b[:, 1])
    return DivergenceSeries(times=times, separations=separations,
                            path_a=path_a, path_b=path_b)
