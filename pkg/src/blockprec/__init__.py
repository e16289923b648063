"""Sparse Gaussian precision estimation under group l1 and group l1,2
positive-definite matrix priors, with block-structure search."""

__version__ = "0.1.0"

from .model import Partition, PenaltyConfig
from .pdcore import SampleStats
from .solver import SolverOptions
from .structure import SearchOptions, SearchReport, VariationalState

__all__ = [
    "Partition",
    "PenaltyConfig",
    "SampleStats",
    "SearchOptions",
    "SearchReport",
    "SolverOptions",
    "VariationalState",
    "__version__",
]
