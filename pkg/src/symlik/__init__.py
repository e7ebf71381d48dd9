"""Likelihood-based inference on rectangle-summarised (symbolic) data."""

from .integrals import IntegralEstimate, UniformBlockStore, mvn_box_probability, sov_truncated_normal
from .likelihood import (
    AnalyticEstimator,
    ApproximateEstimator,
    ExactEstimator,
    PoissonConfig,
    SignedLogLik,
    symbolic_loglik,
)
from .loglik import LogLikEstimate, TemperatureLadder, path_sampler_log_integral, taylor_log_integral
from .models import FactorModel, GaussianModel, HeteroRegressionModel, NormalMixture, fit_mixture_em
from .pmmh import Chain, MCMCConfig, NormalPrior, SymbolicTarget, signed_block_pmmh, signed_expectation
from .symbols import (
    RectangleSymbol,
    build_component_rectangles,
    build_minmax_rectangle,
    build_quantile_rectangle,
)

__version__ = "0.1.0"

__all__ = [
    "AnalyticEstimator",
    "ApproximateEstimator",
    "Chain",
    "ExactEstimator",
    "FactorModel",
    "GaussianModel",
    "HeteroRegressionModel",
    "IntegralEstimate",
    "LogLikEstimate",
    "MCMCConfig",
    "NormalMixture",
    "NormalPrior",
    "PoissonConfig",
    "RectangleSymbol",
    "SignedLogLik",
    "SymbolicTarget",
    "TemperatureLadder",
    "UniformBlockStore",
    "build_component_rectangles",
    "build_minmax_rectangle",
    "build_quantile_rectangle",
    "fit_mixture_em",
    "mvn_box_probability",
    "path_sampler_log_integral",
    "signed_block_pmmh",
    "signed_expectation",
    "sov_truncated_normal",
    "symbolic_loglik",
    "taylor_log_integral",
]
