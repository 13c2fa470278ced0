import cmath
import json
import math

import numpy as np
import pytest

import pilotbox as pb
from pilotbox.errors import ConfigError, NodeSingularity
from pilotbox.wavefield import (
    DEFAULT_MODE_TABLE,
    Mode,
    ModeSuperposition,
    kernel_arrays,
    psi_laplacian,
    psi_time_derivative,
    velocity_grid,
)


def independent_psi(x, y, t):
    """Direct 16-term summation, written independently of the library path."""
    total = 0j
    for m, n, theta in DEFAULT_MODE_TABLE:
        energy = 0.5 * (m * m + n * n)
        total += 0.25 * (2 / math.pi) * math.sin(m * x) * math.sin(n * y) \
            * cmath.exp(1j * (theta - energy * t))
    return total


class TestModeBasics:
    def test_mode_value_center(self):
        assert pb.mode_value(Mode(1, 1, 1.0, 0.0), math.pi / 2, math.pi / 2) \
            == pytest.approx(2 / math.pi, abs=1e-15)

    def test_mode_value_node(self):
        assert pb.mode_value(Mode(2, 2, 1.0, 0.0), math.pi / 2, math.pi / 2) \
            == pytest.approx(0.0, abs=1e-15)

    def test_mode_value_reduced_args(self):
        # (3, 4) at (pi/6, pi/8): both sine arguments reduce to pi/2
        assert pb.mode_value(Mode(3, 4, 1.0, 0.0), math.pi / 6, math.pi / 8) \
            == pytest.approx(2 / math.pi, abs=1e-15)

    def test_mode_energy(self):
        assert Mode(3, 4, 1.0, 0.0).energy == 12.5

    def test_invalid_modes(self):
        with pytest.raises(ConfigError):
            Mode(0, 1, 1.0, 0.0)
        with pytest.raises(ConfigError):
            Mode(1, 1, -0.5, 0.0)

    def test_duplicate_modes_rejected(self):
        with pytest.raises(ConfigError):
            ModeSuperposition((Mode(1, 1, 0.8, 0.0), Mode(1, 1, 0.6, 1.0)))

    def test_unnormalized_rejected(self):
        with pytest.raises(ConfigError):
            ModeSuperposition((Mode(1, 1, 0.9, 0.0),))


class TestPsi:
    def test_sixteen_term_sum_at_center(self, state):
        # frozen from the independent summation above
        expected = 0.3620067364487695 - 0.010547652862433105j
        value = pb.psi_at(state, math.pi / 2, math.pi / 2, 0.0)
        assert value == pytest.approx(expected, abs=1e-14)
        assert value == pytest.approx(independent_psi(math.pi / 2, math.pi / 2, 0.0),
                                      abs=1e-14)

    def test_single_mode_rotating_phase(self):
        ground = pb.single_mode(1, 1)
        x, y, t = 0.8, 1.9, 2.3
        expected = pb.mode_value(Mode(1, 1, 1.0, 0.0), x, y) * cmath.exp(-1j * t)
        assert pb.psi_at(ground, x, y, t) == pytest.approx(expected, abs=1e-14)

    def test_periodicity_pointwise(self, state):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x, y, t = rng.uniform(0.1, 3.0, 3)
            assert abs(pb.psi_at(state, x, y, t + 4 * math.pi)
                       - pb.psi_at(state, x, y, t)) < 1e-12

    def test_periodicity_probe_grid(self, state):
        axis = np.linspace(0.0, math.pi, 64)
        xg, yg = np.meshgrid(axis, axis, indexing="ij")
        gap = np.abs(pb.psi_at(state, xg, yg, 4 * math.pi) - pb.psi_at(state, xg, yg, 0.0))
        assert gap.max() < 1e-10

    @pytest.mark.parametrize("t", [0.0, math.pi, 2 * math.pi, 4 * math.pi])
    def test_normalization_quadrature(self, state, t):
        n = 512
        axis = (np.arange(n) + 0.5) * math.pi / n
        xg, yg = np.meshgrid(axis, axis, indexing="ij")
        total = pb.born_density(state, xg, yg, t).sum() * (math.pi / n) ** 2
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_matches_independent_sum_at_random_points(self, state):
        rng = np.random.default_rng(11)
        for _ in range(25):
            x, y = rng.uniform(0.0, math.pi, 2)
            t = rng.uniform(0.0, 4 * math.pi)
            assert pb.psi_at(state, x, y, t) == pytest.approx(
                independent_psi(x, y, t), abs=1e-13)


class TestGradientsAndVelocity:
    def test_gradient_matches_finite_differences(self, state):
        rng = np.random.default_rng(5)
        step = 1e-6
        checked = 0
        while checked < 100:
            x, y = rng.uniform(0.05, math.pi - 0.05, 2)
            t = rng.uniform(0.0, 4 * math.pi)
            gx, gy = pb.grad_psi(state, x, y, t)
            fx = (pb.psi_at(state, x + step, y, t) - pb.psi_at(state, x - step, y, t)) / (2 * step)
            fy = (pb.psi_at(state, x, y + step, t) - pb.psi_at(state, x, y - step, t)) / (2 * step)
            if abs(fx) < 1e-3 or abs(fy) < 1e-3:
                continue
            assert abs(gx - fx) / abs(fx) < 1e-5
            assert abs(gy - fy) / abs(fy) < 1e-5
            checked += 1

    def test_velocity_matches_phase_differences(self, state):
        # derived check against finite differences of arg(psi)
        fs = pb.field_sample(state, 1.0, 2.0, 0.5)
        step = 1e-6
        fd_x = cmath.phase(pb.psi_at(state, 1.0 + step, 2.0, 0.5)
                           / pb.psi_at(state, 1.0 - step, 2.0, 0.5)) / (2 * step)
        fd_y = cmath.phase(pb.psi_at(state, 1.0, 2.0 + step, 0.5)
                           / pb.psi_at(state, 1.0, 2.0 - step, 0.5)) / (2 * step)
        assert fs.velocity[0] == pytest.approx(fd_x, rel=1e-4)
        assert fs.velocity[1] == pytest.approx(fd_y, rel=1e-4)

    def test_velocity_phase_differences_at_random_points(self, state):
        rng = np.random.default_rng(17)
        step = 1e-6
        checked = 0
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
            assert abs(fs.velocity[0] - fd_x) / scale < 1e-4
            assert abs(fs.velocity[1] - fd_y) / scale < 1e-4
            checked += 1

    def test_eigenstate_velocity_vanishes(self):
        ground = pb.single_mode(1, 1, phase=0.7)
        fs = pb.field_sample(ground, 1.3, 0.6, 5.0)
        assert fs.velocity == pytest.approx((0.0, 0.0), abs=1e-14)

    def test_wall_raises_node_singularity(self, state):
        with pytest.raises(NodeSingularity):
            pb.field_sample(state, 0.0, 1.0, 0.0)

    def test_continuity_equation_residual(self, state):
        # d|psi|^2/dt + div(|psi|^2 v) = Im(conj(psi) lap psi) + 2 Re(conj(psi) psi_t)
        # must vanish identically; all pieces analytic.
        rng = np.random.default_rng(23)
        checked = 0
        while checked < 100:
            x, y = rng.uniform(0.02, math.pi - 0.02, 2)
            t = rng.uniform(0.0, 4 * math.pi)
            psi = pb.psi_at(state, x, y, t)
            if abs(psi) ** 2 < 1e-3:
                continue
            dpsi_dt = psi_time_derivative(state, x, y, t)
            lap = psi_laplacian(state, x, y, t)
            ddens_dt = 2.0 * (psi.conjugate() * dpsi_dt).real
            div_current = (psi.conjugate() * lap).imag
            assert abs(ddens_dt + div_current) < 1e-5
            checked += 1

    def test_velocity_grid_masks_nodes(self, state):
        xs = np.array([0.0, 1.0])
        ys = np.array([0.5, 2.0])
        vx, vy, ok = velocity_grid(state, xs, ys, 0.0)
        assert not ok[0] and ok[1]
        assert vx[0] == 0.0


class TestEnergySpread:
    def test_sixteen_mode_value(self, state):
        # direct sum over E = (m^2 + n^2)/2 with equal weights 1/16
        energies = [0.5 * (m * m + n * n) for m in range(1, 5) for n in range(1, 5)]
        mean = sum(energies) / 16
        var = sum(e * e for e in energies) / 16 - mean * mean
        assert var == pytest.approx(16.125, abs=1e-12)
        assert pb.energy_spread(state) == pytest.approx(math.sqrt(16.125), abs=1e-12)

    def test_single_mode_zero(self):
        assert pb.energy_spread(pb.single_mode(2, 3)) == 0.0

    def test_two_mode_half_gap(self):
        amp = math.sqrt(0.5)
        state = ModeSuperposition((Mode(1, 1, amp, 0.0), Mode(2, 2, amp, 0.0)))
        gap = Mode(2, 2, amp, 0.0).energy - Mode(1, 1, amp, 0.0).energy
        assert pb.energy_spread(state) == pytest.approx(gap / 2, abs=1e-13)


class TestStateHandling:
    def test_json_roundtrip(self, state, tmp_path):
        path = tmp_path / "modes.json"
        pb.save_modes_json(state, path)
        loaded = pb.load_modes_json(path)
        assert loaded == state

    def test_bundled_config_matches_code_table(self, state):
        from pilotbox.wavefield import bundled_state_path

        assert pb.load_modes_json(bundled_state_path()) == state

    def test_json_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"nope": 1}))
        with pytest.raises(ConfigError):
            pb.load_modes_json(path)

    def test_conjugation_is_involution(self, state):
        twice = state.conjugated_at(math.pi).conjugated_at(math.pi)
        for a, b in zip(twice.modes, state.modes):
            assert math.cos(a.phase - b.phase) == pytest.approx(1.0, abs=1e-12)
            assert a.amplitude == b.amplitude

    def test_conjugated_state_evolves_backward(self, state):
        # wave of the conjugate state at time t equals conj of original at t_r - t
        t_r, t = math.pi, 0.7
        rev = state.conjugated_at(t_r)
        x, y = 1.1, 2.3
        assert pb.psi_at(rev, x, y, t) == pytest.approx(
            pb.psi_at(state, x, y, t_r - t).conjugate(), abs=5e-13)

    def test_kernel_field_matches_numpy_path(self, state):
        # the compiled kernel and the vectorized evaluator must agree exactly
        from pilotbox import _kernels

        ms, ns, cre, cim, kmax = kernel_arrays(state)
        scratch = [np.empty(kmax + 1) for _ in range(6)]
        rng = np.random.default_rng(31)
        for _ in range(50):
            x, y = rng.uniform(0.05, math.pi - 0.05, 2)
            t = rng.uniform(0.0, 4 * math.pi)
            vx, vy, dens, ok = _kernels._velocity(ms, ns, cre, cim, kmax,
                                                  *scratch, x, y, t, 1e-12)
            if not ok:
                continue
            assert dens == pytest.approx(pb.born_density(state, x, y, t), rel=1e-12)
            vgx, vgy, valid = velocity_grid(state, np.array([x]), np.array([y]), t)
            assert valid[0]
            assert vx == pytest.approx(vgx[0], rel=1e-10, abs=1e-12)
            assert vy == pytest.approx(vgy[0], rel=1e-10, abs=1e-12)
