"""Birth-and-assassination process and rumor scotching on graphs.

Exact samplers, analytic oracles and the estimators that tie them together.
"""
from .core import (
    CensorPolicy,
    Deterministic,
    DomainError,
    Exponential,
    Gamma,
    InfiniteMomentError,
    ModelParams,
    NonConvergenceError,
    SeedSpec,
)

__version__ = "0.1.0"

__all__ = [
    "CensorPolicy",
    "Deterministic",
    "DomainError",
    "Exponential",
    "Gamma",
    "InfiniteMomentError",
    "ModelParams",
    "NonConvergenceError",
    "SeedSpec",
    "__version__",
]
