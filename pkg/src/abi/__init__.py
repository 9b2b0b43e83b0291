"""Adaptive Bayesian inference with posterior-space sliced Wasserstein matching."""
from .engine import AbiConfig, AbiResult, IterationReport, adaptive_threshold, ars_sample, run_abi, run_abi_fixed_schedule
from .mixture import FitConfig, GaussianMixture
from .msw import MswConfig, ProjectionSet, QuantileGrid, msw_empirical, msw_from_quantile_tables, sample_projections
from .quantile_net import QuantileNet, TrainConfig, build_quantile_net, estimated_msw, predict_quantiles, train

__all__ = [
    "AbiConfig", "AbiResult", "IterationReport", "adaptive_threshold", "ars_sample", "run_abi",
    "run_abi_fixed_schedule", "FitConfig", "GaussianMixture", "MswConfig", "ProjectionSet",
    "QuantileGrid", "msw_empirical", "msw_from_quantile_tables", "sample_projections", "QuantileNet",
    "TrainConfig", "build_quantile_net", "estimated_msw", "predict_quantiles", "train",
]
