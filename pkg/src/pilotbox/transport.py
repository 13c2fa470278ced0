"""Density evolution by backward-trajectory reconstruction.

The ratio f = rho / |psi|^2 is exactly conserved along trajectories, so the
ensemble density at any time is reconstructed on a regular lattice by
integrating each lattice point backward to t = 0 and carrying f from there.
Lattice points whose integration fails inherit the origin of their nearest
successfully computed neighbour and are flagged.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, FallbackUnavailable
from .integrator import IntegratorConfig, TrajectoryStatus, integrate_batch_validated
from .wavefield import (
    BOX_SIDE,
    ModeSuperposition,
    born_density,
    grad_psi,
    psi_at,
    state_hash,
)

FULL_BOX = (0.0, BOX_SIDE, 0.0, BOX_SIDE)


def cell_centered_axis(n: int, lo: float = 0.0, hi: float = BOX_SIDE) -> np.ndarray:
    """n points offset half a spacing from the interval ends."""
    if n < 1:
        raise ConfigError("axis needs at least one point")
    step = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * step


@dataclass
class InitialDensity:
    """Ensemble density at t = 0, as a vectorized evaluator.

    gradient (optional) returns (d rho/dx, d rho/dy) and enables analytic
    derivatives in the relaxation-timescale quadratures. normalization is the
    midpoint quadrature of the evaluator over the box, or None when the
    density is defined by trajectory transport (exactly normalized by
    construction, but too irregular for a coarse quadrature check).
    """

    evaluator: object
    label: str
    gradient: object = None
    normalization: float | None = None

    def __call__(self, xs, ys):
        return self.evaluator(xs, ys)


def _quadrature_check(fn, grid: int = 512) -> float:
    axis = cell_centered_axis(grid)
    xg, yg = np.meshgrid(axis, axis, indexing="ij")
    vals = np.asarray(fn(xg, yg))
    return float(vals.sum() * (BOX_SIDE / grid) ** 2)


def from_callable(fn, label: str = "custom", gradient=None,
                  check: bool = True) -> InitialDensity:
    norm = None
    if check:
        norm = _quadrature_check(fn)
        if abs(norm - 1.0) > 1e-4:
            raise ConfigError(f"initial density {label!r} integrates to {norm!r}, not 1")
    return InitialDensity(evaluator=fn, label=label, gradient=gradient,
                          normalization=norm)


def ground_state_density() -> InitialDensity:
    """The product-of-squared-sines hump (2/pi)^2 sin^2 x sin^2 y.

    This is the ground-mode Born density; used as the standard smooth,
    microstructure-free nonequilibrium initial condition.
    """

    def rho(xs, ys):
        return (2.0 / math.pi) ** 2 * np.sin(np.asarray(xs)) ** 2 * np.sin(np.asarray(ys)) ** 2

    def grad(xs, ys):
        xs = np.asarray(xs)
        ys = np.asarray(ys)
        c = (2.0 / math.pi) ** 2
        gx = 2.0 * c * np.sin(xs) * np.cos(xs) * np.sin(ys) ** 2
        gy = 2.0 * c * np.sin(xs) ** 2 * np.sin(ys) * np.cos(ys)
        return gx, gy

    return InitialDensity(evaluator=rho, label="eq15-ground-hump", gradient=grad,
                          normalization=1.0)


def equilibrium_density(state: ModeSuperposition) -> InitialDensity:
    """rho = |psi(., 0)|^2; preserved exactly by the dynamics."""

    def rho(xs, ys):
        return born_density(state, xs, ys, 0.0)

    def grad(xs, ys):
        psi = np.asarray(psi_at(state, xs, ys, 0.0))
        gx, gy = grad_psi(state, xs, ys, 0.0)
        return 2.0 * (psi.real * np.asarray(gx).real + psi.imag * np.asarray(gx).imag), \
               2.0 * (psi.real * np.asarray(gy).real + psi.imag * np.asarray(gy).imag)

    return InitialDensity(evaluator=rho, label="equilibrium", gradient=grad,
                          normalization=1.0)


@dataclass
class OriginMap:
    """Backtracked origins for a regular lattice at one time."""

    time: float
    lattice_x: np.ndarray  # (nx,) cell centers
    lattice_y: np.ndarray  # (ny,)
    origin_x: np.ndarray  # (nx, ny)
    origin_y: np.ndarray
    status: np.ndarray  # (nx, ny) TrajectoryStatus codes
    delta_used: np.ndarray
    steps: np.ndarray
    fallback_flags: np.ndarray  # (nx, ny) bool: origin copied from a neighbour
    window: tuple = FULL_BOX

    @property
    def grid_dims(self):
        return (self.lattice_x.size, self.lattice_y.size)

    @property
    def fallback_fraction(self) -> float:
        return float(self.fallback_flags.mean())

    @property
    def non_validated_fraction(self) -> float:
        return float(np.mean(self.status != int(TrajectoryStatus.VALIDATED)))


def _ring_source(valid: np.ndarray, preferred: np.ndarray, i: int, j: int):
    """Nearest usable neighbour of (i, j): smallest Chebyshev ring, cells
    satisfying `preferred` first, ties broken by signed (drow, dcol) order."""
    nx, ny = valid.shape
    max_r = max(nx, ny)
    for r in range(1, max_r):
        best = None
        best_pref = None
        for di in range(-r, r + 1):
            ii = i + di
            if ii < 0 or ii >= nx:
                continue
            if abs(di) == r:
                djs = range(-r, r + 1)
            else:
                djs = (-r, r)
            for dj in djs:
                jj = j + dj
                if jj < 0 or jj >= ny or not valid[ii, jj]:
                    continue
                if preferred[ii, jj]:
                    if best_pref is None:
                        best_pref = (ii, jj)
                elif best is None:
                    best = (ii, jj)
        if best_pref is not None:
            return best_pref
        if best is not None:
            return best
    return None


def _assign_fallbacks(values, valid, preferred):
    """Fill invalid cells from ring-nearest valid neighbours (sequential,
    deterministic; sources are restricted to originally valid cells).

    values: list of arrays to fill in place. Returns the flag array."""
    flags = ~valid
    bad = np.argwhere(flags)
    for i, j in bad:
        src = _ring_source(valid, preferred, int(i), int(j))
        if src is None:
            raise FallbackUnavailable("no lattice point produced a usable value")
        for arr in values:
            arr[i, j] = arr[src]
    return flags


def _map_cache_key(state, t, nx, ny, window, config):
    payload = json.dumps({
        "state": state_hash(state),
        "t": "%.17g" % t,
        "grid": [nx, ny],
        "window": ["%.17g" % w for w in window],
        "delta_start": config.delta_start,
        "delta_min": config.delta_min,
        "factor": config.delta_ladder_factor,
        "threshold": config.global_error_threshold,
        "max_steps": config.max_steps,
        "node_floor": config.node_floor,
        "safety": config.safety_factor,
        "h0": config.initial_step_fraction,
        "tableau": _kernels.TABLEAU_ID,
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def backtrack_lattice(state: ModeSuperposition, t: float, grid_dims,
                      config: IntegratorConfig, window=None,
                      cache_dir=None) -> OriginMap:
    """Integrate a cell-centered lattice at time t backward to t = 0.

    window restricts the lattice to (x0, x1, y0, y1) for close-up studies;
    by default it spans the whole box. cache_dir, when given, memoizes the
    computed map on disk keyed by every parameter that affects it.
    """
    nx, ny = int(grid_dims[0]), int(grid_dims[1])
    if nx < 2 or ny < 2:
        raise ConfigError("grid must be at least 2x2")
    window = FULL_BOX if window is None else tuple(float(w) for w in window)
    xs = cell_centered_axis(nx, window[0], window[1])
    ys = cell_centered_axis(ny, window[2], window[3])

    cache_path = None
    if cache_dir:
        key = _map_cache_key(state, t, nx, ny, window, config)
        cache_path = os.path.join(cache_dir, f"originmap-{key}.npz")
        if os.path.exists(cache_path):
            data = np.load(cache_path)
            return OriginMap(time=t, lattice_x=xs, lattice_y=ys,
                             origin_x=data["ox"], origin_y=data["oy"],
                             status=data["status"], delta_used=data["delta"],
                             steps=data["steps"], fallback_flags=data["flags"],
                             window=window)

    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    if t == 0.0:
        ox = xg.copy()
        oy = yg.copy()
        status = np.full((nx, ny), int(TrajectoryStatus.VALIDATED), dtype=np.int64)
        delta = np.full((nx, ny), config.delta_start / config.delta_ladder_factor)
        steps = np.zeros((nx, ny), dtype=np.int64)
        flags = np.zeros((nx, ny), dtype=bool)
    else:
        batch = integrate_batch_validated(state, xg.ravel(), yg.ravel(), t, 0.0, config)
        ox = batch.x.reshape(nx, ny)
        oy = batch.y.reshape(nx, ny)
        status = batch.status.reshape(nx, ny)
        delta = batch.delta_used.reshape(nx, ny)
        steps = batch.steps.reshape(nx, ny)
        valid = ~np.isnan(ox)
        preferred = status == int(TrajectoryStatus.VALIDATED)
        flags = _assign_fallbacks([ox, oy], valid, preferred)

    if cache_path:
        os.makedirs(cache_dir, exist_ok=True)
        tmp = cache_path[:-4] + ".tmp.npz"
        np.savez_compressed(tmp, ox=ox, oy=oy, status=status, delta=delta,
                            steps=steps, flags=flags)
        os.replace(tmp, cache_path)

    return OriginMap(time=t, lattice_x=xs, lattice_y=ys, origin_x=ox,
                     origin_y=oy, status=status, delta_used=delta,
                     steps=steps, fallback_flags=flags, window=window)


@dataclass
class DensityLattice:
    """f = rho/|psi|^2 and rho on a regular lattice at one time."""

    time: float
    lattice_x: np.ndarray
    lattice_y: np.ndarray
    f_values: np.ndarray  # (nx, ny)
    rho_values: np.ndarray
    flags: np.ndarray  # bool: value inherited from a neighbour
    metadata: dict

    @property
    def grid_dims(self):
        return (self.lattice_x.size, self.lattice_y.size)

    @property
    def flagged_fraction(self) -> float:
        return float(self.flags.mean())

    def to_csv(self, path, sidecar: bool = True):
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["x", "y", "f", "rho", "flagged"])
            for i, x in enumerate(self.lattice_x):
                for j, y in enumerate(self.lattice_y):
                    writer.writerow(["%.17g" % x, "%.17g" % y,
                                     "%.17g" % self.f_values[i, j],
                                     "%.17g" % self.rho_values[i, j],
                                     int(self.flags[i, j])])
        if sidecar:
            side = os.fspath(path)
            side = side[:-4] + ".json" if side.endswith(".csv") else side + ".json"
            with open(side, "w", encoding="utf-8") as handle:
                json.dump(self.metadata | {"time": self.time,
                                           "grid": list(self.grid_dims)},
                          handle, indent=2, sort_keys=True)
                handle.write("\n")


def density_at(state: ModeSuperposition, rho0: InitialDensity,
               origin_map: OriginMap, config: IntegratorConfig) -> DensityLattice:
    """Reconstruct rho(., t) on the origin map's lattice.

    f at each lattice point equals rho0/|psi_0|^2 at its backtracked origin;
    origins sitting below the node floor (0/0 for wall-vanishing densities)
    inherit a neighbour's f and are flagged.
    """
    ox, oy = origin_map.origin_x, origin_map.origin_y
    born0 = born_density(state, ox, oy, 0.0)
    ok = born0 >= config.node_floor
    f = np.where(ok, np.asarray(rho0(ox, oy)) / np.where(ok, born0, 1.0), np.nan)
    preferred = ok & (origin_map.status == int(TrajectoryStatus.VALIDATED))
    node_flags = _assign_fallbacks([f], ok, preferred)
    flags = node_flags | origin_map.fallback_flags

    xg, yg = np.meshgrid(origin_map.lattice_x, origin_map.lattice_y, indexing="ij")
    born_t = born_density(state, xg, yg, origin_map.time)
    rho = f * born_t
    meta = {
        "state": state_hash(state),
        "rho0": rho0.label,
        "tableau": _kernels.TABLEAU_ID,
        "delta_start": config.delta_start,
        "window": list(origin_map.window),
        "fallback_fraction": origin_map.fallback_fraction,
        "node_origin_fraction": float(node_flags.mean()),
        "non_validated_fraction": origin_map.non_validated_fraction,
    }
    return DensityLattice(time=origin_map.time, lattice_x=origin_map.lattice_x,
                          lattice_y=origin_map.lattice_y, f_values=f,
                          rho_values=rho, flags=flags, metadata=meta)


def transported_density(state: ModeSuperposition, rho0: InitialDensity,
                        t_r: float, config: IntegratorConfig) -> InitialDensity:
    """rho(., t_r) of the given system, as an exact point evaluator.

    Each query point is backtracked from t_r to 0 under `state` and f is
    carried forward; no interpolation, so the full fine-grained
    microstructure is retained. Queries are batched but each costs a
    validated trajectory, so evaluate on lattices, not pointwise loops.
    """

    def rho(xs, ys):
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        shape = np.broadcast(xs, ys).shape
        xb = np.broadcast_to(xs, shape).ravel()
        yb = np.broadcast_to(ys, shape).ravel()
        batch = integrate_batch_validated(state, xb, yb, t_r, 0.0, config)
        ox, oy = batch.x, batch.y
        usable = ~np.isnan(ox)
        born0 = np.where(usable, born_density(state, np.where(usable, ox, 1.0),
                                              np.where(usable, oy, 1.0), 0.0), np.nan)
        ok = usable & (born0 >= config.node_floor)
        f = np.where(ok, np.asarray(rho0(np.where(ok, ox, 1.0), np.where(ok, oy, 1.0)))
                     / np.where(ok, born0, 1.0), np.nan)
        if not ok.all():
            # neighbour-in-ravel fallback; callers feed lattices so adjacency
            # in the flattened order is spatial adjacency along one axis
            idx = np.arange(ok.size)
            good = idx[ok]
            if good.size == 0:
                raise FallbackUnavailable("every transported-density query failed")
            for i in idx[~ok]:
                j = good[np.argmin(np.abs(good - i))]
                f[i] = f[j]
        out = f * born_density(state, xb, yb, t_r)
        return out.reshape(shape)

    return InitialDensity(evaluator=rho, label=f"transported(t_r={t_r:g})",
                          gradient=None, normalization=None)


def reverse_setup(state: ModeSuperposition, rho_at_tr: DensityLattice,
                  t_r: float):
    """Time-reversed initial conditions from the run's snapshot at t_r.

    Returns the conjugated state (its wave at time 0 equals the complex
    conjugate of `state`'s wave at t_r) and the snapshot restamped as the
    reversed run's t = 0 density. The f ratios carry over unchanged because
    conjugation leaves |psi|^2 untouched.
    """
    reversed_state = state.conjugated_at(t_r)
    restamped = DensityLattice(
        time=0.0, lattice_x=rho_at_tr.lattice_x, lattice_y=rho_at_tr.lattice_y,
        f_values=rho_at_tr.f_values.copy(), rho_values=rho_at_tr.rho_values.copy(),
        flags=rho_at_tr.flags.copy(),
        metadata=rho_at_tr.metadata | {"reversed_from_time": t_r})
    return reversed_state, restamped


def evolve_lattice_forward(state: ModeSuperposition, rho0: InitialDensity,
                           t: float, grid_dims, config: IntegratorConfig):
    """Cross-check path: push a uniform t = 0 lattice forward to t.

    Returns (positions (n, 2), f values (n,)). The evolved lattice is
    distorted (it thins out in some regions), which is why reconstruction
    uses backtracking instead; this exists to corroborate it.
    """
    nx, ny = int(grid_dims[0]), int(grid_dims[1])
    xs = cell_centered_axis(nx)
    ys = cell_centered_axis(ny)
    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    born0 = born_density(state, xg, yg, 0.0)
    ok = born0 >= config.node_floor
    f0 = np.where(ok, np.asarray(rho0(xg, yg)) / np.where(ok, born0, 1.0), 0.0)
    batch = integrate_batch_validated(state, xg.ravel(), yg.ravel(), 0.0, t, config)
    keep = ~np.isnan(batch.x) & ok.ravel()
    pos = np.column_stack([batch.x[keep], batch.y[keep]])
    return pos, f0.ravel()[keep]
