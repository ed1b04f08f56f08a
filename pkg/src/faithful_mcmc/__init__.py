"""Faithful gradient-informed MCMC for discrete distributions over embedded states."""

__version__ = "0.1.0"

from .energy import (
    CompositeEnergy,
    EmbeddingTable,
    EnergyModel,
    LogQuadraticEnergy,
    SequenceState,
    binary_table,
    cycle_adjacency,
    energy_eval,
    finite_diff_gradient,
    gradient_eval,
    model_from_dict,
)
from .samplers import (
    GwLConfig,
    HybridConfig,
    KernelSpec,
    MucolaConfig,
    PNCGConfig,
    make_kernel,
    run_chain,
)

__all__ = [
    "CompositeEnergy",
    "EmbeddingTable",
    "EnergyModel",
    "GwLConfig",
    "HybridConfig",
    "KernelSpec",
    "LogQuadraticEnergy",
    "MucolaConfig",
    "PNCGConfig",
    "SequenceState",
    "binary_table",
    "cycle_adjacency",
    "energy_eval",
    "finite_diff_gradient",
    "gradient_eval",
    "make_kernel",
    "model_from_dict",
    "run_chain",
]
