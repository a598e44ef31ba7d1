"""Iterative imputation-based estimation for incomplete high-dimensional data."""

from .core import (
    ChainTrace,
    IncompleteMatrix,
    ParameterSnapshot,
    chain_average,
    make_incomplete,
    median_fill,
)
from .engine import BlockSpec, EngineConfig, gelman_rubin, run_ic, run_icc

__version__ = "0.1.0"

__all__ = [
    "BlockSpec",
    "ChainTrace",
    "EngineConfig",
    "IncompleteMatrix",
    "ParameterSnapshot",
    "chain_average",
    "gelman_rubin",
    "make_incomplete",
    "median_fill",
    "run_ic",
    "run_icc",
    "__version__",
]
