"""Mixture-structured latent representations of high-dimensional KPI time
series: a fixed-reservoir recurrent encoder trained jointly with a decoder
and a Gaussian-mixture estimation network, plus classical and recurrent
baselines for comparison.
"""

__version__ = "0.1.0"

from .dataio import (KpiTrace, Scaler, SplitSpec, SynthConfig,
                     WindowedDataset, chronological_split, fit_scaler,
                     load_kpi_csv, make_windows, prepare_dataset,
                     synth_regime_series)
from .errors import ConfigError, DataError, EsnmixError, NumericalError
from .mixture import MixtureParams, covariance_penalty, estimate_memberships, \
    fit_mixture_params, sample_energy
from .reservoir import EsnEncoder, ReservoirConfig, init_reservoir
from .trainer import DagmmModel, Hyperparams, TrainReport, build_model, fit, \
    gradient_check, joint_loss

__all__ = [
    "ConfigError", "DataError", "EsnmixError", "NumericalError",
    "KpiTrace", "Scaler", "SplitSpec", "SynthConfig", "WindowedDataset",
    "chronological_split", "fit_scaler", "load_kpi_csv", "make_windows",
    "prepare_dataset", "synth_regime_series",
    "MixtureParams", "covariance_penalty", "estimate_memberships",
    "fit_mixture_params", "sample_energy",
    "EsnEncoder", "ReservoirConfig", "init_reservoir",
    "DagmmModel", "Hyperparams", "TrainReport", "build_model", "fit",
    "gradient_check", "joint_loss",
]
