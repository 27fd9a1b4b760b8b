"""Nonparametric Bayesian decompounding of compound Poisson processes."""

from .likelihood import IncrementDensity, log_likelihood, path_log_likelihood_ratio
from .model import CppModel, Grid, NormalMixture, gaussian, grid_for
from .posterior import ChainConfig, ChainOutput, init_chain, posterior_mean_density, \
    run_chain
from .prior import DpmPrior, LambdaPrior, Priors, default_priors, validate_assumptions
from .rng import rng_stream, substream
from .simulate import IncrementSample, SamplePath, path_increments, \
    read_increments_csv, simulate_increments, simulate_path, write_increments_csv

__version__ = "0.1.0"

__all__ = [
    "CppModel", "NormalMixture", "Grid", "gaussian", "grid_for",
    "SamplePath", "IncrementSample", "simulate_path", "simulate_increments",
    "path_increments", "write_increments_csv", "read_increments_csv",
    "IncrementDensity", "log_likelihood", "path_log_likelihood_ratio",
    "LambdaPrior", "DpmPrior", "Priors", "default_priors", "validate_assumptions",
    "ChainConfig", "ChainOutput", "init_chain", "run_chain", "posterior_mean_density",
    "rng_stream", "substream",
]
