"""Exception hierarchy shared across the package."""


class MasbudgetError(Exception):
    """Base class for all package errors."""


class CatalogError(MasbudgetError):
    """Invalid backbone catalog data or infeasible pooling request."""


class EmbeddingError(MasbudgetError):
    """Embedding store inconsistency (dimension mismatch, bad file)."""


class ShapeError(MasbudgetError):
    """Tensor shape mismatch in a differentiable op."""


class NumericsError(MasbudgetError):
    """Non-finite value where a finite one is required."""


class SelectError(MasbudgetError):
    """Pool selection is impossible (e.g. every pool masked, empty pool)."""


class TopologyError(MasbudgetError):
    """Invalid communication graph (too few agents, unexpected cycle)."""


class ExecutionError(MasbudgetError):
    """A node execution failed; carries whatever accounting completed."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ConfigError(MasbudgetError):
    """Run configuration does not validate."""
