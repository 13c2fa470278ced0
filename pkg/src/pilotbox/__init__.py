"""Pilot-wave trajectory ensembles in a two-dimensional box.

A library and CLI for evolving ensembles of deterministically guided
particles, reconstructing their density by backward-trajectory transport,
and quantifying relaxation toward the Born distribution through a
coarse-grained H-function.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DomainError,
    FallbackUnavailable,
    GridMismatch,
    NodeSingularity,
    PilotboxError,
    SingularField,
)
from .wavefield import (
    BOX_SIDE,
    Mode,
    ModeSuperposition,
    born_density,
    default_superposition,
    energy_spread,
    field_sample,
    grad_psi,
    load_modes_json,
    mode_value,
    psi_at,
    save_modes_json,
    single_mode,
)
from .integrator import (
    TABLEAU_ID,
    BatchResult,
    DivergenceSeries,
    IntegratorConfig,
    TrajectoryResult,
    TrajectoryStatus,
    integrate,
    integrate_batch_validated,
    integrate_validated,
    pair_divergence,
)
from .transport import (
    DensityLattice,
    InitialDensity,
    OriginMap,
    backtrack_lattice,
    density_at,
    equilibrium_density,
    ground_state_density,
    reverse_setup,
    transported_density,
)
from .coarsegrain import (
    CellGrid,
    CoarseGrainSpec,
    CoarseMode,
    coarse_grain,
    h_finegrained,
    hbar,
)
from .relaxation import (
    FitResult,
    HSeries,
    RelaxationReport,
    fit_exponential,
    hseries,
    tau_curvature,
    tau_rough,
)
