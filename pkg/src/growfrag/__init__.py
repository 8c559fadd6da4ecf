"""Invasion fitness for mass-structured growth-fragmentation-death models."""
from .model import (
    DomainError,
    Gompertz,
    MassGrid,
    ModelSpec,
    NumericalError,
    PowerLogistic,
    RampAboveThreshold,
    SymmetricBeta,
    TabulatedGrowth,
    TabulatedKernel,
    TabulatedRate,
    default_spec,
    make_grid,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "Gompertz",
    "MassGrid",
    "ModelSpec",
    "NumericalError",
    "PowerLogistic",
    "RampAboveThreshold",
    "SymmetricBeta",
    "TabulatedGrowth",
    "TabulatedKernel",
    "TabulatedRate",
    "default_spec",
    "make_grid",
]
