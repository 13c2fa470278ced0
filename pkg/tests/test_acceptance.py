"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one [PASS] line with the measured numbers (visible with
pytest -s). The expensive fixtures share the on-disk origin-map cache, so a
warm rerun takes minutes; a cold run recomputes every trajectory lattice and
takes a few hours on two cores.
"""

import cmath
import math
import os

import numpy as np
import pytest

import pilotbox as pb
from pilotbox.coarsegrain import CoarseGrainSpec, coarse_grain, hbar
from pilotbox.integrator import TrajectoryStatus, integrate_batch
from pilotbox.relaxation import fit_exponential, hseries, tau_rough
from pilotbox.transport import (
    backtrack_lattice,
    cell_centered_axis,
    density_at,
    equilibrium_density,
    ground_state_density,
    reverse_setup,
    transported_density,
)
from pilotbox.wavefield import psi_laplacian, psi_time_derivative

SPEC_DESK = CoarseGrainSpec(cell_side=math.pi / 16)
DESK_GRID = (200, 200)


def report(name, detail):
    print(f"[PASS] {name}: {detail}")


@pytest.fixture(scope="module")
def relax_series(state, config, cache_dir):
    return hseries(state, ground_state_density(), 2 * math.pi, math.pi / 4,
                   SPEC_DESK, config, grid_dims=DESK_GRID, error_bars=True,
                   cache_dir=cache_dir)


@pytest.fixture(scope="module")
def full_scale_series(state, config, cache_dir):
    # the full configuration: eps = pi/32 on the 400x400 lattice, error-bar
    # rerun on the 432x432 resample
    return hseries(state, ground_state_density(), 2 * math.pi, math.pi / 4,
                   CoarseGrainSpec(cell_side=math.pi / 32), config,
                   grid_dims=(400, 400), error_bars=True, cache_dir=cache_dir)


@pytest.fixture(scope="module")
def reversal(state, config, cache_dir):
    t_r = math.pi
    rho0 = ground_state_density()
    fwd_map = backtrack_lattice(state, t_r, DESK_GRID, config, cache_dir=cache_dir)
    snapshot = density_at(state, rho0, fwd_map, config)
    rev_state, _ = reverse_setup(state, snapshot, t_r)
    rho0_prime = transported_density(state, rho0, t_r, config)
    series = hseries(rev_state, rho0_prime, t_r, math.pi / 4, SPEC_DESK, config,
                     grid_dims=DESK_GRID, error_bars=False, cache_dir=cache_dir)
    final_map = backtrack_lattice(rev_state, t_r, DESK_GRID, config,
                                  cache_dir=cache_dir)
    final = density_at(rev_state, rho0_prime, final_map, config)
    return series, final, rho0


class TestInstantCriteria:
    def test_energy_spread(self, state):
        value = pb.energy_spread(state)
        assert value == pytest.approx(4.0156, abs=1e-3)
        assert value == pytest.approx(math.sqrt(16.125), abs=1e-12)
        report("energy spread", f"{value:.6f} (target 4.0156 +/- 1e-3)")

    def test_periodicity(self, state):
        axis = np.linspace(0.0, math.pi, 64)
        xg, yg = np.meshgrid(axis, axis, indexing="ij")
        gap = np.max(np.abs(pb.psi_at(state, xg, yg, 4 * math.pi)
                            - pb.psi_at(state, xg, yg, 0.0)))
        assert gap < 1e-10
        report("periodicity", f"max |psi(4pi) - psi(0)| = {gap:.2e} < 1e-10")

    def test_tau_estimates(self):
        value = tau_rough(math.pi / 32, 4.0)
        assert value == pytest.approx(4 / math.pi, abs=1e-6)
        for eps in (math.pi / 32, math.pi / 16, 0.2, 1.0):
            assert tau_rough(eps, 4.0) == pytest.approx(1.0 / (8 * eps), rel=1e-14)
        report("tau estimates", f"tau_rough(pi/32, 4) = {value:.6f} = 4/pi; "
                                "1/(8 eps) identity holds")


class TestEnsembleCriteria:
    def test_equilibrium_preservation(self, state, config, cache_dir):
        series = hseries(state, equilibrium_density(state), math.pi, math.pi / 4,
                         SPEC_DESK, config, grid_dims=DESK_GRID, error_bars=True,
                         cache_dir=cache_dir)
        peak = float(np.max(series.hbar_values))
        assert peak < 1e-3
        report("equilibrium preservation",
               f"max H over [0, pi] = {peak:.2e} < 1e-3")

    def test_relaxation_decay(self, relax_series):
        values = relax_series.hbar_values
        assert np.all(values <= values[0] + 1e-15), "H-theorem vs H(0) violated"
        fit = fit_exponential(relax_series)
        assert fit.slope < 0
        assert fit.r_squared > 0.9
        assert 2.0 <= fit.t_c <= 8.0
        report("relaxation decay",
               f"H(t) <= H(0) at all 9 samples; slope {fit.slope:+.4f}, "
               f"r^2 {fit.r_squared:.4f}, t_c {fit.t_c:.3f} in [2, 8]")

    def test_error_bar_methodology(self, full_scale_series, relax_series):
        # the 4% bound belongs to the 32x32-cell configuration; the reduced
        # desk run (16x16 cells) averages over 4x fewer cells and its shifts
        # are reported but not asserted
        series = full_scale_series
        rel = series.error_bars / series.hbar_values
        worst = float(rel.max())
        assert worst <= 0.04
        desk_worst = float((relax_series.error_bars / relax_series.hbar_values).max())
        report("error bars (resampling)",
               f"max relative H shift {worst:.2%} <= 4% at eps = pi/32 "
               f"(grids {series.metadata['grid']} vs {series.metadata['resample_grid']}); "
               f"desk eps = pi/16 run shifts up to {desk_worst:.2%} (informational)")

    def test_time_reversal(self, reversal):
        series, final, rho0 = reversal
        fit = fit_exponential(series)
        assert fit.slope > 0
        target = coarse_grain(lambda xs, ys: rho0(xs, ys), SPEC_DESK,
                              grid_dims=DESK_GRID)
        recon = coarse_grain(final, SPEC_DESK)
        rel = np.abs(recon.values - target.values) / np.maximum(target.values, 1e-12)
        median = float(np.median(rel))
        assert median < 0.05
        report("time reversal",
               f"median cell error {median:.2e} < 5%; reversed-series slope "
               f"{fit.slope:+.4f} > 0 "
               f"(H: {series.hbar_values[0]:.4f} -> {series.hbar_values[-1]:.4f})")

    def test_trajectory_divergence(self, state, config):
        rng = np.random.default_rng(2025)
        finals = []
        while len(finals) < 20:
            pos_a = rng.uniform(0.2, math.pi - 0.2, 2)
            if pb.born_density(state, pos_a[0], pos_a[1], 0.0) < 1e-3:
                continue
            angle = rng.uniform(0.0, 2 * math.pi)
            pos_b = pos_a + 0.005 * np.array([math.cos(angle), math.sin(angle)])
            series = pb.pair_divergence(state, pos_a, pos_b, 4 * math.pi, 2, config)
            finals.append(series.separations[-1])
        median = float(np.median(finals))
        assert median > 0.5
        report("trajectory divergence",
               f"20 pairs at 0.005: median separation at 4pi = {median:.3f} > 0.5")

    def test_integrator_validation_rate(self, state, config, cache_dir):
        om = backtrack_lattice(state, 2 * math.pi, DESK_GRID, config,
                               cache_dir=cache_dir)
        fraction = om.non_validated_fraction
        assert fraction <= 1e-3
        report("validation rate",
               f"non-validated fraction at t = 2pi on 200x200: {fraction:.2e} <= 1e-3")


class TestPropertySuites:
    def test_hbar_nonnegative_iff_equal(self):
        rng = np.random.default_rng(12345)
        spec = CoarseGrainSpec(cell_side=math.pi / 8)
        centers = cell_centered_axis(8)

        def grid(values):
            from pilotbox.coarsegrain import CellGrid

            return CellGrid(center_x=centers, center_y=centers,
                            values=values, spec=spec)

        worst = math.inf
        for k in range(1000):
            a = rng.uniform(0.0, 1.0, (8, 8))
            b = rng.uniform(0.01, 1.0, (8, 8))
            value = hbar(grid(a), grid(b))
            assert value >= 0.0
            assert value > 0.0  # random pairs are never equal cell-by-cell
            worst = min(worst, value)
            if k % 100 == 0:
                assert hbar(grid(a), grid(a.copy())) == 0.0
        report("H properties", f"1000 random pairs: H >= 0 (min {worst:.3e}), "
                               "H = 0 exactly on equal grids")

    def test_coarse_grain_mean_bounds(self):
        rng = np.random.default_rng(99)
        values = rng.uniform(0.0, 3.0, (64, 64))
        xs = cell_centered_axis(64)
        from pilotbox.coarsegrain import _grain_nonoverlapping

        cells = _grain_nonoverlapping(xs, xs, values,
                                      CoarseGrainSpec(cell_side=math.pi / 8))
        per = 8
        ok = True
        for a in range(8):
            for b in range(8):
                block = values[a * per:(a + 1) * per, b * per:(b + 1) * per]
                ok &= block.min() - 1e-12 <= cells.values[a, b] <= block.max() + 1e-12
        assert ok
        report("coarse-grain bounds", "every cell mean within its samples' range")

    def test_roundtrip_fraction(self, state, config, born_sampler):
        pts = born_sampler(1000, seed=424242)
        fx, fy, fst, _ = integrate_batch(state, pts[:, 0], pts[:, 1],
                                         0.0, math.pi, 1e-6, config)
        bx, by, bst, _ = integrate_batch(state, fx, fy, math.pi, 0.0, 1e-6, config)
        good = (fst == int(TrajectoryStatus.COMPLETED)) \
            & (bst == int(TrajectoryStatus.COMPLETED))
        dist = np.hypot(bx - pts[:, 0], by - pts[:, 1])
        fraction = float(np.mean(good & (dist < 0.01)))
        assert fraction >= 0.99
        report("roundtrip", f"{fraction:.1%} of 1000 samples return within 0.01")

    def test_velocity_matches_phase_differences(self, state):
        rng = np.random.default_rng(77)
        step = 1e-6
        checked = 0
        worst = 0.0
        while checked < 100:
            x, y = rng.uniform(0.05, math.pi - 0.05, 2)
            t = rng.uniform(0.0, 4 * math.pi)
            if pb.born_density(state, x, y, t) < 1e-3:
                continue
            fs = pb.field_sample(state, x, y, t)
            fd_x = cmath.phase(pb.psi_at(state, x + step, y, t)
                               / pb.psi_at(state, x - step, y, t)) / (2 * step)
            fd_y = cmath.phase(pb.psi_at(state, x, y + step, t)
                               / pb.psi_at(state, x, y - step, t)) / (2 * step)
            scale = max(1.0, abs(fd_x), abs(fd_y))
            gap = max(abs(fs.velocity[0] - fd_x), abs(fs.velocity[1] - fd_y)) / scale
            worst = max(worst, gap)
            assert gap < 1e-4
            checked += 1
        report("velocity vs phase differences",
               f"100 points, worst relative gap {worst:.2e} < 1e-4")

    def test_continuity_residual(self, state):
        rng = np.random.default_rng(88)
        checked = 0
        worst = 0.0
        while checked < 100:
            x, y = rng.uniform(0.02, math.pi - 0.02, 2)
            t = rng.uniform(0.0, 4 * math.pi)
            psi = pb.psi_at(state, x, y, t)
            if abs(psi) ** 2 < 1e-3:
                continue
            residual = abs(2.0 * (psi.conjugate() * psi_time_derivative(state, x, y, t)).real
                           + (psi.conjugate() * psi_laplacian(state, x, y, t)).imag)
            worst = max(worst, residual)
            assert residual < 1e-5
            checked += 1
        report("continuity equation", f"100 points, worst residual {worst:.2e} < 1e-5")


@pytest.mark.skipif(not os.environ.get("PILOTBOX_FULL_REPRO"),
                    reason="opt-in long run: set PILOTBOX_FULL_REPRO=1 "
                           "(400x400 lattice, eps = pi/32, horizon 2pi)")
def test_full_reproduction(full_scale_series):
    fit = fit_exponential(full_scale_series)
    assert fit.slope < 0
    assert 3.0 <= fit.t_c <= 5.5
    report("full reproduction",
           f"400x400, eps = pi/32: t_c = {fit.t_c:.3f} in [3, 5.5], "
           f"r^2 {fit.r_squared:.4f}")
