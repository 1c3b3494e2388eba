"""Composite-likelihood inference for clustered two-group counts, with
Bayesian curvature and magnitude adjustments and a posterior calibration
simulation harness."""

__version__ = "0.1.0"

from .adjust import Adjustment, adjusted_loglik, tune, tune_curvature, tune_omnibus, tune_targeted
from .betabin import DOR, LOG_DOR, RISK_DIFF, EffectMeasure, marginal
from .copula import CopulaFamily, SimSetting, simulate_dataset
from .data import MetaDataset, StudyRecord, read_dataset_csv
from .freq import FitResult, composite_loglik, fit
from .posterior import ChainConfig, GaussianPrior, PosteriorSample, h_statistic, qb_interval, run_chain

__all__ = [
    "Adjustment",
    "ChainConfig",
    "CopulaFamily",
    "DOR",
    "EffectMeasure",
    "FitResult",
    "GaussianPrior",
    "LOG_DOR",
    "MetaDataset",
    "PosteriorSample",
    "RISK_DIFF",
    "SimSetting",
    "StudyRecord",
    "adjusted_loglik",
    "composite_loglik",
    "fit",
    "h_statistic",
    "marginal",
    "qb_interval",
    "read_dataset_csv",
    "run_chain",
    "simulate_dataset",
    "tune",
    "tune_curvature",
    "tune_omnibus",
    "tune_targeted",
]
