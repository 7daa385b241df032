"""Strongest-signal statistics of wireless networks under strong log-normal shadowing.

The package simulates propagation losses seen from station layouts and
compares them with the limiting Poisson propagation process.
"""
from .errors import AccuracyError, DataError, EmptyProcessError, MomentConditionError, ParameterError, ShadowconvError
from .geometry import Metric, PointPattern, gen_hexagonal, gen_perturbed_lattice, gen_poisson
from .poisson_limit import LimitModel, lstar_ccdf, sample_limit_process, sample_lstar
from .propagation import MarkKernel, RayleighPower, ShadowingSpec, propagation_process

__version__ = "0.1.0"

__all__ = [
    "AccuracyError", "DataError", "EmptyProcessError", "MomentConditionError", "ParameterError",
    "ShadowconvError", "Metric", "PointPattern", "gen_hexagonal", "gen_perturbed_lattice", "gen_poisson",
    "LimitModel", "lstar_ccdf", "sample_limit_process", "sample_lstar", "MarkKernel", "RayleighPower",
    "ShadowingSpec", "propagation_process",
]
