"""
windtraj: probabilistic 72-hour trajectory forecasts of regional wind power.

This package fits a Bayesian hierarchical Gaussian model with G-Wishart
priors to cube-root production, draws predictive trajectories, optionally
re-correlates them with a Gaussian copula, and verifies the results with
univariate and multivariate scores.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericalError, WindTrajError

from .ingest import (
    ForecastCase,
    NwpGridRecord,
    ProductionRecord,
    TrainingWindow,
    build_cases,
    build_windows,
    ensemble_mean,
    interpolate_hourly,
    spatial_average,
)

from .gwishart import Graph, GWishartParams, posterior_update, sample_gwishart

from .model import (
    ModelConfig,
    ModelVariant,
    PosteriorDraw,
    PredictiveEnsemble,
    build_design,
    gibbs_fit,
    load_checkpoint,
    marginal_cdf,
    predict,
    save_checkpoint,
)

from .copula import (
    CopulaFit,
    LatentScores,
    copula_ensemble,
    fit_copula,
    latent_scores,
    resample_trajectory,
)

from .verify import (
    Functional,
    ScoreReport,
    band_depth_prerank,
    crps,
    functional_scores,
    interval_coverage_width,
    mae_rmse,
    multivariate_rank,
    pit,
)

from .synth import Scenario, SynthConfig, closed_form_posterior_T1, generate

from .config import RunConfig
from .backtest import Backtester, BacktestResult, Combination

__all__ = [
    # Errors
    "WindTrajError",
    "ConfigError",
    "DataError",
    "NumericalError",
    # Input preparation
    "NwpGridRecord",
    "ProductionRecord",
    "ForecastCase",
    "TrainingWindow",
    "ensemble_mean",
    "interpolate_hourly",
    "spatial_average",
    "build_cases",
    "build_windows",
    # G-Wishart
    "Graph",
    "GWishartParams",
    "sample_gwishart",
    "posterior_update",
    # Model
    "ModelVariant",
    "ModelConfig",
    "PosteriorDraw",
    "PredictiveEnsemble",
    "build_design",
    "gibbs_fit",
    "predict",
    "marginal_cdf",
    "save_checkpoint",
    "load_checkpoint",
    # Copula
    "LatentScores",
    "CopulaFit",
    "latent_scores",
    "fit_copula",
    "resample_trajectory",
    "copula_ensemble",
    # Verification
    "Functional",
    "ScoreReport",
    "pit",
    "interval_coverage_width",
    "crps",
    "mae_rmse",
    "band_depth_prerank",
    "multivariate_rank",
    "functional_scores",
    # Synthetic data
    "Scenario",
    "SynthConfig",
    "generate",
    "closed_form_posterior_T1",
    # Orchestration
    "RunConfig",
    "Backtester",
    "BacktestResult",
    "Combination",
]
