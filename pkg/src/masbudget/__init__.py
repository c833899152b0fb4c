"""Budget-aware configurator for LLM multi-agent systems.

Builds backbone pools, matches backbones to agent roles per query, gates
redundant agents, synthesizes a latency-bounded communication DAG, and
trains the whole policy end to end against a token-cost- and
latency-penalized reward. A deterministic simulator makes the full
train/evaluate loop runnable offline.
"""

__version__ = "0.1.0"

from .errors import (
    CatalogError,
    ConfigError,
    EmbeddingError,
    ExecutionError,
    MasbudgetError,
    NumericsError,
    SelectError,
    ShapeError,
    TopologyError,
)

__all__ = [
    "CatalogError",
    "ConfigError",
    "EmbeddingError",
    "ExecutionError",
    "MasbudgetError",
    "NumericsError",
    "SelectError",
    "ShapeError",
    "TopologyError",
    "__version__",
]
