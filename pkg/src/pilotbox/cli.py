"""Command-line interface.

Subcommands bind run configurations to the library: single trajectories,
pair divergence, density snapshots, H-bar series, time-reversal experiments
and timescale reports. Every run writes machine-readable CSV/JSON plus a
manifest listing each output file with its content hash, so identical
configurations reproduce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import re
import sys
import time

import numpy as np

from . import __version__, _kernels
from .coarsegrain import CoarseGrainSpec, CoarseMode, coarse_grain, hbar
from .errors import ConfigError, PilotboxError
from .integrator import IntegratorConfig, integrate, pair_divergence
from .relaxation import (
    build_report,
    fit_exponential,
    hseries,
    tau_curvature,
    tau_rough,
)
from .transport import (
    backtrack_lattice,
    density_at,
    equilibrium_density,
    ground_state_density,
    reverse_setup,
    transported_density,
)
from .wavefield import (
    born_density,
    energy_spread,
    load_modes_json,
    mode_value,
    psi_at,
    save_modes_json,
    single_mode,
    state_hash,
)

_QUANTITY_RE = re.compile(r"^\s*(-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)?\s*\*?\s*(pi)?\s*(?:/\s*(\d+(?:\.\d+)?))?\s*$")


def parse_quantity(text: str) -> float:
    """Resolve symbolic literals like 'pi/32', '2pi', '3pi/4', '0.5' exactly."""
    match = _QUANTITY_RE.match(str(text))
    if not match or not (match.group(1) or match.group(2)):
        raise ConfigError(f"cannot parse quantity {text!r}")
    coef, pi_part, denom = match.groups()
    value = float(coef) if coef else 1.0
    if pi_part:
        value *= math.pi
    if denom:
        value /= float(denom)
    return value


def parse_grid(text: str):
    parts = str(text).lower().split("x")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ConfigError(f"grid must look like 200x200, got {text!r}")
    try:
        nx, ny = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigError(f"grid must be integers, got {text!r}") from exc
    return nx, ny


def parse_pos(text: str):
    parts = str(text).split(",")
    if len(parts) != 2:
        raise ConfigError(f"position must look like x,y, got {text!r}")
    return parse_quantity(parts[0]), parse_quantity(parts[1])


def _fmt(value) -> str:
    return "%.17g" % value


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Run:
    """Output directory plus the manifest accumulated over one command."""

    def __init__(self, args, command):
        out = args.output_dir or os.environ.get("PILOTBOX_OUTDIR") or "."
        os.makedirs(out, exist_ok=True)
        self.dir = out
        self.command = command
        self.outputs = []
        self.config = {}

    def path(self, name):
        full = os.path.join(self.dir, name)
        self.outputs.append(full)
        return full

    def finish(self, extra=None):
        manifest = {
            "command": self.command,
            "package": "pilotbox",
            "version": __version__,
            "tableau": _kernels.TABLEAU_ID,
            "versions": {"numpy": np.__version__,
                         "numba": getattr(_kernels, "HAVE_NUMBA", False) and
                         __import__("numba").__version__ or None},
            "config": self.config,
            "outputs": [{"path": os.path.relpath(p, self.dir),
                         "sha256": _sha256(p)} for p in self.outputs],
        }
        if extra:
            manifest.update(extra)
        path = os.path.join(self.dir, "run_manifest.json")
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(manifest, handle, indent=2, sort_keys=True)
            handle.write("\n")
        return path


def _add_common(parser):
    parser.add_argument("--state", default="default",
                        help="mode-table JSON path, or 'default' for the packaged 16-mode state")
    parser.add_argument("--output-dir", default=None,
                        help="output directory (default: $PILOTBOX_OUTDIR or .)")
    parser.add_argument("--cache-dir", default=os.environ.get("PILOTBOX_CACHE"),
                        help="directory memoizing backtracking lattices (default: $PILOTBOX_CACHE)")
    parser.add_argument("--workers", type=int, default=None,
                        help="cap on parallel trajectory workers (default: all cores)")
    parser.add_argument("--delta-start", default="1e-6")
    parser.add_argument("--delta-min", default="1e-12")
    parser.add_argument("--max-steps", type=int, default=10**8)
    parser.add_argument("--threshold", default="0.01",
                        help="global error threshold for ladder validation")


def _setup(args):
    if args.workers:
        if not _kernels.HAVE_NUMBA:
            raise ConfigError("--workers requires numba")
        import numba

        numba.set_num_threads(max(1, args.workers))
    if args.state == "default":
        from .wavefield import bundled_state_path

        state = load_modes_json(bundled_state_path())
    else:
        state = load_modes_json(args.state)
    config = IntegratorConfig(delta_start=float(args.delta_start),
                              delta_min=float(args.delta_min),
                              max_steps=int(args.max_steps),
                              global_error_threshold=float(args.threshold))
    return state, config


def _config_echo(args, state, config, **extra):
    echo = {
        "state": args.state,
        "state_hash": state_hash(state),
        "delta_start": config.delta_start,
        "delta_min": config.delta_min,
        "max_steps": config.max_steps,
        "global_error_threshold": config.global_error_threshold,
    }
    echo.update(extra)
    return echo


def _rho0_from_flag(flag, state, t_r=None, config=None):
    if flag == "eq":
        return equilibrium_density(state)
    if flag == "eq15":
        return ground_state_density()
    if os.path.exists(flag):
        # custom density: the Born density of another mode table at t = 0
        other = load_modes_json(flag)
        return equilibrium_density(other)
    raise ConfigError(f"unknown rho0 {flag!r} (use eq, eq15, or a mode-table path)")


def cmd_trajectory(args) -> int:
    state, config = _setup(args)
    run = Run(args, "trajectory")
    pos = parse_pos(args.pos)
    t0 = parse_quantity(args.t0)
    t1 = parse_quantity(args.t1)
    delta = float(args.delta) if args.delta else config.delta_start
    result = integrate(state, pos, t0, t1, delta, config, record=True)
    rows = [[_fmt(t), _fmt(x), _fmt(y), _fmt(h), _fmt(delta)]
            for t, x, y, h in result.samples]
    _write_csv(run.path("trajectory.csv"), ["t", "x", "y", "h", "delta_used"], rows)
    run.config = _config_echo(args, state, config, pos=list(pos), t0=t0, t1=t1,
                              delta=delta)
    run.finish(extra={"status": result.status.name,
                      "steps": result.steps_taken,
                      "endpoint": list(result.endpoint)})
    print(f"trajectory: {len(rows)} accepted steps, status {result.status.name}")
    return 0


def cmd_diverge(args) -> int:
    state, config = _setup(args)
    run = Run(args, "diverge")
    t1 = parse_quantity(args.t1)
    if args.pos_a and args.pos_b:
        pos_a, pos_b = parse_pos(args.pos_a), parse_pos(args.pos_b)
    else:
        sep = parse_quantity(args.separation)
        rng = np.random.default_rng(args.seed)
        margin = 2.0 * sep
        while True:
            pos_a = tuple(rng.uniform(margin, math.pi - margin, 2))
            angle = rng.uniform(0.0, 2.0 * math.pi)
            pos_b = (pos_a[0] + sep * math.cos(angle), pos_a[1] + sep * math.sin(angle))
            if born_density(state, *pos_a, 0.0) > 1e-3:
                break
    series = pair_divergence(state, pos_a, pos_b, t1, args.samples, config)
    rows = [[_fmt(t), _fmt(ax), _fmt(ay), _fmt(bx), _fmt(by), _fmt(s)]
            for t, (ax, ay), (bx, by), s in zip(series.times, series.path_a,
                                                series.path_b, series.separations)]
    _write_csv(run.path("divergence.csv"),
               ["t", "x_a", "y_a", "x_b", "y_b", "separation"], rows)
    run.config = _config_echo(args, state, config, pos_a=list(pos_a),
                              pos_b=list(pos_b), t1=t1, samples=args.samples)
    run.finish(extra={"initial_separation": float(series.separations[0]),
                      "final_separation": float(series.separations[-1])})
    print(f"diverge: separation {series.separations[0]:.4g} -> {series.separations[-1]:.4g}")
    return 0


def _emit_cells(run, tag, grid: "CellGrid"):
    grid.to_csv(run.path(f"{tag}.csv"))
    grid.to_matrix(run.path(f"{tag}.mat.txt"))


def cmd_density(args) -> int:
    state, config = _setup(args)
    run = Run(args, "density")
    t = parse_quantity(args.time)
    grid = parse_grid(args.grid)
    window = None
    if args.window:
        window = tuple(parse_quantity(w) for w in args.window.split(","))
        if len(window) != 4:
            raise ConfigError("--window needs x0,x1,y0,y1")
    rho0 = _rho0_from_flag(args.rho0, state)
    origin_map = backtrack_lattice(state, t, grid, config, window=window,
                                   cache_dir=args.cache_dir)
    lattice = density_at(state, rho0, origin_map, config)
    lattice.to_csv(run.path("density.csv"))
    run.outputs.append(os.path.join(run.dir, "density.json"))

    if args.epsilon:
        if window is not None:
            raise ConfigError("cell averages need the full box; drop --window or --epsilon")
        eps = parse_quantity(args.epsilon)
        if args.coarse_mode == "tilde":
            spec = CoarseGrainSpec(cell_side=eps, mode=CoarseMode.OVERLAPPING,
                                   overlap_shift_fraction=args.shift)
        else:
            spec = CoarseGrainSpec(cell_side=eps)
        tag = "tilde" if args.coarse_mode == "tilde" else "bar"
        _emit_cells(run, f"rho_{tag}", coarse_grain(lattice, spec))
        _emit_cells(run, f"psi2_{tag}",
                    coarse_grain(lambda xs, ys: born_density(state, xs, ys, t),
                                 spec, grid_dims=grid))
    run.config = _config_echo(args, state, config, time=t, grid=list(grid),
                              rho0=args.rho0, window=list(window) if window else None,
                              epsilon=args.epsilon, coarse_mode=args.coarse_mode)
    run.finish(extra={"flagged_fraction": lattice.flagged_fraction,
                      "non_validated_fraction": origin_map.non_validated_fraction})
    print(f"density at t={t:g}: grid {grid[0]}x{grid[1]}, "
          f"flagged {lattice.flagged_fraction:.2e}")
    return 0


def cmd_hseries(args) -> int:
    state, config = _setup(args)
    run = Run(args, "hseries")
    eps = parse_quantity(args.epsilon)
    horizon = parse_quantity(args.horizon)
    interval = parse_quantity(args.interval)
    grid = parse_grid(args.grid) if args.grid else None
    spec = CoarseGrainSpec(cell_side=eps)
    rho0 = _rho0_from_flag(args.rho0, state)

    def progress(k, total, t, value):
        print(f"  [{k + 1}/{total}] t={t:.4f} hbar={value:.6g}", flush=True)

    series = hseries(state, rho0, horizon, interval, spec, config,
                     grid_dims=grid, error_bars=not args.no_error_bars,
                     cache_dir=args.cache_dir, progress=progress)
    err = series.error_bars if series.error_bars is not None else np.zeros_like(series.times)
    rows = [[_fmt(t), _fmt(v), _fmt(e)]
            for t, v, e in zip(series.times, series.hbar_values, err)]
    _write_csv(run.path("hseries.csv"), ["t", "hbar", "err"], rows)

    report = build_report(state, series, eps)
    with open(run.path("report.json"), "w", encoding="utf-8") as handle:
        json.dump({
            "t_c": report.t_c, "r_squared": report.r_squared,
            "slope": report.slope, "hbar0": report.hbar0,
            "tau_rough": report.tau_rough, "energy_spread": report.energy_spread,
            "series_metadata": series.metadata,
        }, handle, indent=2, sort_keys=True, default=str)
        handle.write("\n")
    run.config = _config_echo(args, state, config, epsilon=eps, horizon=horizon,
                              interval=interval, grid=list(grid) if grid else None,
                              rho0=args.rho0, error_bars=not args.no_error_bars)
    run.finish()
    print(f"hseries: {series.times.size} samples, t_c={report.t_c:.3g}, "
          f"r2={report.r_squared:.3f}")
    return 0


def cmd_reverse(args) -> int:
    state, config = _setup(args)
    run = Run(args, "reverse")
    t_r = parse_quantity(args.t_r)
    eps = parse_quantity(args.epsilon)
    grid = parse_grid(args.grid)
    spec = CoarseGrainSpec(cell_side=eps)
    rho0 = _rho0_from_flag(args.rho0, state)

    forward_map = backtrack_lattice(state, t_r, grid, config, cache_dir=args.cache_dir)
    snapshot = density_at(state, rho0, forward_map, config)
    reversed_state, rho_prime0 = reverse_setup(state, snapshot, t_r)
    save_modes_json(reversed_state, run.path("reversed_state.json"))
    rho_prime0.to_csv(run.path("reversed_rho0.csv"))
    run.outputs.append(os.path.join(run.dir, "reversed_rho0.json"))

    rho0_prime = transported_density(state, rho0, t_r, config)
    series = hseries(reversed_state, rho0_prime, t_r, parse_quantity(args.interval),
                     spec, config, grid_dims=grid, error_bars=False,
                     cache_dir=args.cache_dir)
    rows = [[_fmt(t), _fmt(v), _fmt(0.0)]
            for t, v in zip(series.times, series.hbar_values)]
    _write_csv(run.path("reversed_hseries.csv"), ["t", "hbar", "err"], rows)

    final_map = backtrack_lattice(reversed_state, t_r, grid, config,
                                  cache_dir=args.cache_dir)
    final = density_at(reversed_state, rho0_prime, final_map, config)
    final.to_csv(run.path("reversed_density.csv"))
    run.outputs.append(os.path.join(run.dir, "reversed_density.json"))

    target = coarse_grain(lambda xs, ys: rho0(xs, ys), spec, grid_dims=grid)
    recon = coarse_grain(final, spec)
    rel = np.abs(recon.values - target.values) / np.maximum(target.values, 1e-12)
    fit = fit_exponential(series)
    summary = {
        "t_r": t_r,
        "median_cell_relative_error": float(np.median(rel)),
        "max_cell_relative_error": float(rel.max()),
        "fit_slope": fit.slope,
        "fit_r_squared": fit.r_squared,
        "hbar_series": series.hbar_values.tolist(),
    }
    with open(run.path("report.json"), "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    run.config = _config_echo(args, state, config, t_r=t_r, epsilon=eps,
                              grid=list(grid), rho0=args.rho0)
    run.finish()
    print(f"reverse: hbar {series.hbar_values[0]:.4g} -> {series.hbar_values[-1]:.4g} "
          f"(slope {fit.slope:+.3f}), median cell error "
          f"{summary['median_cell_relative_error']:.2%}")
    return 0


def cmd_tau(args) -> int:
    state, config = _setup(args)
    run = Run(args, "tau")
    eps = parse_quantity(args.epsilon)
    d_e = parse_quantity(args.delta_e) if args.delta_e else energy_spread(state)
    doc = {
        "epsilon": eps,
        "energy_spread": energy_spread(state),
        "delta_e_used": d_e,
        "tau_rough": tau_rough(eps, d_e),
    }
    if args.curvature:
        rho0 = _rho0_from_flag(args.rho0, state)
        grid = parse_grid(args.fine_grid)
        report = tau_curvature(state, rho0, eps, fine_grid=grid)
        doc.update({
            "tau_curvature": report.tau,
            "i_value": report.i_value,
            "hbar0": report.hbar0,
            "d2h_dt2_leading": report.d2h_check,
            "excluded_fraction": report.excluded_fraction,
            "fine_grid": list(report.grid),
        })
    with open(run.path("tau_report.json"), "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2, sort_keys=True)
        handle.write("\n")
    run.config = _config_echo(args, state, config, epsilon=eps,
                              curvature=args.curvature)
    run.finish()
    print(f"tau: rough {doc['tau_rough']:.4g}"
          + (f", curvature {doc['tau_curvature']:.4g}" if args.curvature else ""))
    return 0


def cmd_selftest(args) -> int:
    state, config = _setup(args)
    started = time.time()
    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}")
        failures += 0 if ok else 1

    from .wavefield import Mode

    check("eigenmode value at the box center",
          abs(mode_value(Mode(1, 1, 1.0, 0.0), math.pi / 2, math.pi / 2) - 2 / math.pi) < 1e-14)
    check("wave periodicity over one cycle",
          abs(psi_at(state, 1.1, 0.7, 4 * math.pi) - psi_at(state, 1.1, 0.7, 0.0)) < 1e-10)
    check("energy spread of the default state",
          abs(energy_spread(state) - math.sqrt(16.125)) < 1e-12)
    ground = single_mode(1, 1)
    res = integrate(ground, (1.0, 1.0), 0.0, 4 * math.pi, 1e-6, config)
    check("stationary eigenstate trajectory",
          math.hypot(res.endpoint[0] - 1.0, res.endpoint[1] - 1.0) < 1e-12)
    fwd = integrate(state, (1.2, 2.1), 0.0, math.pi, 1e-7, config)
    back = integrate(state, fwd.endpoint, math.pi, 0.0, 1e-7, config)
    check("forward/backward roundtrip under 0.01",
          math.hypot(back.endpoint[0] - 1.2, back.endpoint[1] - 2.1) < 0.01)
    spec = CoarseGrainSpec(cell_side=math.pi / 8, samples_per_cell_side=5)
    ones = coarse_grain(lambda xs, ys: np.ones_like(xs), spec)
    check("coarse-graining a constant field", np.allclose(ones.values, 1.0))
    rho_c = coarse_grain(lambda xs, ys: ground_state_density()(xs, ys), spec)
    psi_c = coarse_grain(lambda xs, ys: born_density(state, xs, ys, 0.0), spec)
    check("H-bar positive for distinct fields", hbar(rho_c, psi_c) > 0)
    check("H-bar zero at equality", hbar(rho_c, rho_c) == 0.0)
    synth = np.exp(-np.arange(9.0) / 3.0)
    fit = fit_exponential((np.arange(9.0), 2.0 * synth))
    check("exact exponential fit recovers t_c=3", abs(fit.t_c - 3.0) < 1e-10)
    check("rough timescale value", abs(tau_rough(math.pi / 32, 4.0) - 4 / math.pi) < 1e-12)
    om = backtrack_lattice(state, 0.3, (8, 8), config)
    lat = density_at(state, equilibrium_density(state), om, config)
    check("equilibrium f stays 1 along trajectories",
          np.allclose(lat.f_values, 1.0, atol=1e-6))
    print(f"selftest: {11 - failures}/11 passed in {time.time() - started:.1f}s")
    return 0 if failures == 0 else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pilotbox",
        description="Pilot-wave trajectory ensembles in a 2D box: relaxation "
                    "toward the Born distribution, quantified by a "
                    "coarse-grained H-function.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trajectory", help="record one trajectory's accepted steps")
    _add_common(p)
    p.add_argument("--pos", required=True, help="start position x,y")
    p.add_argument("--t0", default="0")
    p.add_argument("--t1", default="4pi")
    p.add_argument("--delta", default=None, help="local tolerance (default: delta-start)")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("diverge", help="separation history of two nearby trajectories")
    _add_common(p)
    p.add_argument("--pos-a", default=None)
    p.add_argument("--pos-b", default=None)
    p.add_argument("--separation", default="0.005")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t1", default="4pi")
    p.add_argument("--samples", type=int, default=200)
    p.set_defaults(func=cmd_diverge)

    p = sub.add_parser("density", help="reconstruct the ensemble density at one time")
    _add_common(p)
    p.add_argument("--time", required=True)
    p.add_argument("--rho0", default="eq15", help="eq | eq15 | mode-table path")
    p.add_argument("--grid", default="200x200")
    p.add_argument("--window", default=None, help="x0,x1,y0,y1 close-up window")
    p.add_argument("--epsilon", default=None, help="also emit cell averages at this cell side")
    p.add_argument("--coarse-mode", choices=["bar", "tilde"], default="bar")
    p.add_argument("--shift", type=float, default=0.12,
                   help="overlap shift fraction for tilde mode")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("hseries", help="coarse-grained H-function time series")
    _add_common(p)
    p.add_argument("--rho0", default="eq15")
    p.add_argument("--epsilon", default="pi/16")
    p.add_argument("--grid", default=None, help="lattice dims (default: cells*samples)")
    p.add_argument("--horizon", default="2pi")
    p.add_argument("--interval", default="pi/4")
    p.add_argument("--no-error-bars", action="store_true")
    p.set_defaults(func=cmd_hseries)

    p = sub.add_parser("reverse", help="time-reversed experiment from a forward snapshot")
    _add_common(p)
    p.add_argument("--t-r", default="pi", help="reversal time")
    p.add_argument("--rho0", default="eq15")
    p.add_argument("--epsilon", default="pi/16")
    p.add_argument("--grid", default="200x200")
    p.add_argument("--interval", default="pi/4")
    p.set_defaults(func=cmd_reverse)

    p = sub.add_parser("tau", help="relaxation timescale estimates")
    _add_common(p)
    p.add_argument("--epsilon", default="pi/32")
    p.add_argument("--rho0", default="eq15")
    p.add_argument("--delta-e", default=None,
                   help="energy spread override (default: the state's own)")
    p.add_argument("--curvature", action="store_true",
                   help="also compute the curvature-based estimate")
    p.add_argument("--fine-grid", default="1024x1024")
    p.set_defaults(func=cmd_tau)

    p = sub.add_parser("selftest", help="fast end-to-end checks (< 60 s)")
    _add_common(p)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"pilotbox: configuration error: {exc}", file=sys.stderr)
        return 2
    except PilotboxError as exc:
        print(f"pilotbox: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
