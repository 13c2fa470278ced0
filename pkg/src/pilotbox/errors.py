"""Exception types shared across the package."""


class PilotboxError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(PilotboxError):
    """Invalid run configuration (bad flags, unreadable paths, parameter bounds)."""


class NodeSingularity(PilotboxError):
    """The wave amplitude fell below the node floor, so the guidance velocity
    is undefined or untrustworthy at the requested point."""


class GridMismatch(PilotboxError):
    """A sample lattice is incompatible with the requested coarse-graining cells."""


class DomainError(PilotboxError):
    """A cell average of the Born density is zero where the ensemble density is
    positive; the cell quadrature is under-resolved."""


class SingularField(PilotboxError):
    """Too much of the box had to be excluded from a quadrature for the result
    to be trustworthy."""


class FallbackUnavailable(PilotboxError):
    """Every lattice point failed to integrate; no neighbour value exists to
    assign. Signals a misconfigured run rather than a physical outcome."""
