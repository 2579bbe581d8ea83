"""Recurrent gamma belief networks for non-negative sequence data.

Generative model, recurrent Weibull variational encoder, hybrid
MCMC/variational trainer, synthetic benchmarks, metrics, and a CLI.
"""

from .genmodel import GlobalParams, LatentStates, ModelConfig, Sequence
from .stats import GammaParams, RngStream, WeibullParams

__all__ = [
    "GammaParams",
    "GlobalParams",
    "LatentStates",
    "ModelConfig",
    "RngStream",
    "Sequence",
    "WeibullParams",
]

__version__ = "0.1.0"
