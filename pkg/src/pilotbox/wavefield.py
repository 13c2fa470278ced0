"""Analytic wave field for a particle in a two-dimensional square box.

The box has side pi with hard walls (units hbar = 1, unit mass). Everything
here is a closed form: eigenmodes, the time-evolved superposition, its
gradients, and the pilot-wave guidance velocity. No PDE solver is involved,
so the only numerical error in the field itself is floating-point roundoff.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, NodeSingularity

BOX_SIDE = math.pi

# Default node floor: |psi|^2 below this is treated as a node. Walls and
# exact nodes give 0.0; the floor turns IEEE blowups into a typed error.
NODE_FLOOR = 1e-12

MODES_FORMAT = "pilotbox-modes/1"

# Packaged default state: equal-amplitude superposition of the first 16
# modes (m, n = 1..4) with fixed phases, given to four decimals.
DEFAULT_MODE_TABLE = (
    (1, 1, 5.1306), (1, 2, 2.0056), (1, 3, 4.1172), (1, 4, 3.3871),
    (2, 1, 6.2013), (2, 2, 4.6598), (2, 3, 1.8770), (2, 4, 4.3033),
    (3, 1, 4.0145), (3, 2, 6.1142), (3, 3, 5.4401), (3, 4, 1.9292),
    (4, 1, 3.4015), (4, 2, 6.2109), (4, 3, 6.0370), (4, 4, 5.9159),
)


@dataclass(frozen=True)
class Mode:
    """One box eigenmode with a complex coefficient in modulus/phase form."""

    m: int
    n: int
    amplitude: float
    phase: float

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ConfigError(f"mode numbers must be >= 1, got ({self.m}, {self.n})")
        if self.amplitude < 0:
            raise ConfigError("mode amplitude must be nonnegative (phase carries the sign)")

    @property
    def energy(self) -> float:
        return 0.5 * (self.m * self.m + self.n * self.n)


@dataclass(frozen=True)
class ModeSuperposition:
    """Normalized superposition of box eigenmodes.

    The state is periodic in time with period 4*pi, because every energy is
    half an integer and the phases advance by whole turns over that interval.
    """

    modes: tuple
    box_side: float = BOX_SIDE

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise ConfigError("superposition needs at least one mode")
        if abs(self.box_side - BOX_SIDE) > 1e-15:
            raise ConfigError("only the side-pi box is supported")
        seen = set()
        total = 0.0
        for mode in self.modes:
            key = (mode.m, mode.n)
            if key in seen:
                raise ConfigError(f"duplicate mode {key}")
            seen.add(key)
            total += mode.amplitude * mode.amplitude
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"state not normalized: sum of squared amplitudes = {total!r}")

    @property
    def period(self) -> float:
        # 2*E is an integer for every integer mode pair, so exp(-iEt) closes
        # after t = 4*pi.
        return 4.0 * math.pi

    def conjugated_at(self, t_r: float) -> "ModeSuperposition":
        """State whose wave function at time 0 is the complex conjugate of
        this state's wave function at time t_r."""
        new = tuple(
            Mode(mode.m, mode.n, mode.amplitude,
                 _wrap_angle(-(mode.phase - mode.energy * t_r)))
            for mode in self.modes
        )
        return ModeSuperposition(new, self.box_side)

    def table(self):
        return tuple((mode.m, mode.n, mode.amplitude, mode.phase) for mode in self.modes)


def _wrap_angle(theta: float) -> float:
    wrapped = math.fmod(theta, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    return wrapped


def default_superposition() -> ModeSuperposition:
    """The packaged 16-mode state (equal amplitudes 1/4, fixed phases).

    The same table ships as a versioned document at data/modes16.json; see
    bundled_state_path().
    """
    amp = 0.25
    return ModeSuperposition(tuple(Mode(m, n, amp, theta) for m, n, theta in DEFAULT_MODE_TABLE))


def bundled_state_path() -> str:
    """Path of the packaged default mode-table JSON."""
    import importlib.resources

    return str(importlib.resources.files(__package__) / "data" / "modes16.json")


def single_mode(m: int, n: int, phase: float = 0.0) -> ModeSuperposition:
    return ModeSuperposition((Mode(m, n, 1.0, phase),))


@lru_cache(maxsize=64)
def _mode_arrays(state: ModeSuperposition):
    """Packed arrays for fast evaluation.

    The complex coefficient carries the 2/pi eigenmode normalization, so the
    accumulated sum is the physical psi directly.
    """
    ms = np.array([mode.m for mode in state.modes], dtype=np.int64)
    ns = np.array([mode.n for mode in state.modes], dtype=np.int64)
    coef = np.array(
        [mode.amplitude * (2.0 / math.pi) * cmath.exp(1j * mode.phase) for mode in state.modes],
        dtype=np.complex128,
    )
    energies = np.array([mode.energy for mode in state.modes], dtype=np.float64)
    kmax = int(max(ms.max(), ns.max()))
    return ms, ns, coef, energies, kmax


def kernel_arrays(state: ModeSuperposition):
    """Arrays in the layout the compiled trajectory kernels expect."""
    ms, ns, coef, _, kmax = _mode_arrays(state)
    return ms, ns, np.ascontiguousarray(coef.real), np.ascontiguousarray(coef.imag), kmax


def mode_value(mode: Mode, x, y):
    """Eigenmode value (2/pi) sin(m x) sin(n y)."""
    return (2.0 / math.pi) * np.sin(mode.m * np.asarray(x)) * np.sin(mode.n * np.asarray(y))


def _time_coefs(state: ModeSuperposition, t: float) -> np.ndarray:
    ms, ns, coef, energies, _ = _mode_arrays(state)
    return coef * np.exp(-1j * energies * t)


def psi_at(state: ModeSuperposition, x, y, t: float):
    """Wave function at (x, y, t); vectorized over positions."""
    ms, ns, _, _, _ = _mode_arrays(state)
    ct = _time_coefs(state, t)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros(np.broadcast(x, y).shape, dtype=np.complex128)
    for i in range(len(ms)):
        out += ct[i] * np.sin(ms[i] * x) * np.sin(ns[i] * y)
    if out.ndim == 0:
        return complex(out)
    return out


def grad_psi(state: ModeSuperposition, x, y, t: float):
    """Analytic (d psi/dx, d psi/dy) by termwise differentiation."""
    ms, ns, _, _, _ = _mode_arrays(state)
    ct = _time_coefs(state, t)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    shape = np.broadcast(x, y).shape
    gx = np.zeros(shape, dtype=np.complex128)
    gy = np.zeros(shape, dtype=np.complex128)
    for i in range(len(ms)):
        sx, cx = np.sin(ms[i] * x), np.cos(ms[i] * x)
        sy, cy = np.sin(ns[i] * y), np.cos(ns[i] * y)
        gx += ct[i] * ms[i] * cx * sy
        gy += ct[i] * ns[i] * sx * cy
    if gx.ndim == 0:
        return complex(gx), complex(gy)
    return gx, gy


def psi_time_derivative(state: ModeSuperposition, x, y, t: float):
    """Analytic d psi/dt (each term picks up -i E)."""
    ms, ns, _, energies, _ = _mode_arrays(state)
    ct = _time_coefs(state, t) * (-1j * energies)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros(np.broadcast(x, y).shape, dtype=np.complex128)
    for i in range(len(ms)):
        out += ct[i] * np.sin(ms[i] * x) * np.sin(ns[i] * y)
    if out.ndim == 0:
        return complex(out)
    return out


def psi_laplacian(state: ModeSuperposition, x, y, t: float):
    """Analytic (d2/dx2 + d2/dy2) psi; each term scales by -(m^2 + n^2)."""
    ms, ns, _, _, _ = _mode_arrays(state)
    ct = _time_coefs(state, t)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros(np.broadcast(x, y).shape, dtype=np.complex128)
    for i in range(len(ms)):
        out -= ct[i] * (ms[i] ** 2 + ns[i] ** 2) * np.sin(ms[i] * x) * np.sin(ns[i] * y)
    if out.ndim == 0:
        return complex(out)
    return out


def born_density(state: ModeSuperposition, x, y, t: float):
    """|psi|^2 at (x, y, t)."""
    psi = psi_at(state, x, y, t)
    return np.abs(psi) ** 2 if isinstance(psi, np.ndarray) else abs(psi) ** 2


def velocity_grid(state: ModeSuperposition, x, y, t: float, node_floor: float = NODE_FLOOR):
    """Guidance velocity on arrays of positions.

    Returns (vx, vy, valid) where valid marks points with |psi|^2 >= node_floor;
    velocity entries are 0 where invalid (callers must honor the mask).
    """
    psi = np.asarray(psi_at(state, x, y, t))
    gx, gy = grad_psi(state, x, y, t)
    gx, gy = np.asarray(gx), np.asarray(gy)
    density = np.abs(psi) ** 2
    valid = density >= node_floor
    safe = np.where(valid, density, 1.0)
    vx = np.where(valid, (psi.real * gx.imag - psi.imag * gx.real) / safe, 0.0)
    vy = np.where(valid, (psi.real * gy.imag - psi.imag * gy.real) / safe, 0.0)
    return vx, vy, valid


@dataclass(frozen=True)
class FieldSample:
    """Everything the dynamics needs at one spacetime point."""

    psi: complex
    density: float
    grad_psi: tuple
    phase: float
    velocity: tuple


def field_sample(state: ModeSuperposition, x: float, y: float, t: float,
                 node_floor: float = NODE_FLOOR) -> FieldSample:
    """Wave value, Born density, gradient, phase and guidance velocity.

    Raises NodeSingularity when |psi|^2 < node_floor: the velocity diverges
    near nodes and is meaningless there. The phase is reported modulo 2*pi;
    the velocity is computed branch-free as Im(conj(psi) grad psi)/|psi|^2.
    """
    psi = psi_at(state, x, y, t)
    density = abs(psi) ** 2
    if density < node_floor:
        raise NodeSingularity(
            f"|psi|^2 = {density:.3e} < node floor {node_floor:.1e} at "
            f"({x:.6f}, {y:.6f}, t={t:.6f})")
    gx, gy = grad_psi(state, x, y, t)
    vx = (psi.real * gx.imag - psi.imag * gx.real) / density
    vy = (psi.real * gy.imag - psi.imag * gy.real) / density
    return FieldSample(psi=psi, density=density, grad_psi=(gx, gy),
                       phase=cmath.phase(psi), velocity=(vx, vy))


def energy_spread(state: ModeSuperposition) -> float:
    """Quantum energy spread sqrt(<E^2> - <E>^2) of the superposition."""
    _, _, _, energies, _ = _mode_arrays(state)
    weights = np.array([mode.amplitude ** 2 for mode in state.modes])
    mean = float(np.dot(weights, energies))
    mean_sq = float(np.dot(weights, energies ** 2))
    return math.sqrt(max(mean_sq - mean * mean, 0.0))


def state_hash(state: ModeSuperposition) -> str:
    """Stable short hash of the mode table, for run manifests and cache keys."""
    import hashlib

    text = ";".join("%d,%d,%.17g,%.17g" % row for row in state.table())
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_modes_json(state: ModeSuperposition, path) -> None:
    doc = {
        "format": MODES_FORMAT,
        "modes": [
            {"m": mode.m, "n": mode.n, "amplitude": mode.amplitude, "phase": mode.phase}
            for mode in state.modes
        ],
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2)
        handle.write("\n")


def load_modes_json(path) -> ModeSuperposition:
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    if not isinstance(doc, dict) or "modes" not in doc:
        raise ConfigError(f"{path}: not a mode-table document")
    fmt = doc.get("format", MODES_FORMAT)
    if fmt != MODES_FORMAT:
        raise ConfigError(f"{path}: unsupported format {fmt!r}")
    modes = tuple(
        Mode(int(row["m"]), int(row["n"]), float(row["amplitude"]), float(row["phase"]))
        for row in doc["modes"]
    )
    return ModeSuperposition(modes)
