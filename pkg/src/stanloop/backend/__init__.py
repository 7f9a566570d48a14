"""Backends turn (model, data, sampler config) into a FitResult.

The loop and the scorer never know which backend produced a fit.
"""

from .base import Backend, FitResult, ModelSource, SamplerConfig
from .cmdstan import CmdStanBackend, CompiledModel, cmdstan_available, locate_cmdstan
from .grid import GridBackend, GridModel, grid_fit
from .io import read_chain_csv, write_data_file, write_draws_csv

__all__ = [
    "Backend",
    "CmdStanBackend",
    "CompiledModel",
    "FitResult",
    "GridBackend",
    "GridModel",
    "ModelSource",
    "SamplerConfig",
    "cmdstan_available",
    "grid_fit",
    "locate_cmdstan",
    "read_chain_csv",
    "write_data_file",
    "write_draws_csv",
]
