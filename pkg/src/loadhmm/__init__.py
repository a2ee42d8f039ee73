"""Online multi-entity probabilistic load forecasting with vector-valued HMMs."""
from .errors import ConfigError, DataError, LoadHMMError, NotPositiveDefiniteError, NumericalError
from .forecaster import (ProbabilisticForecast, aggregate_forecast, forecast_quantile,
                         predict_one, prediction_step)
from .gaussian import GaussianDensity, fuse_gaussians
from .learner import TrainingSlice, learning_step, recursive_update
from .metrics import crps_gaussian, pinball
from .model import CalendarModel, ModelBank, init_model, load_bank, save_bank
from .sparsify import SparsifyPolicy, threshold_covariance

__version__ = "0.1.0"

__all__ = [
    "CalendarModel", "ConfigError", "DataError", "GaussianDensity", "LoadHMMError", "ModelBank",
    "NotPositiveDefiniteError", "NumericalError", "ProbabilisticForecast", "SparsifyPolicy",
    "TrainingSlice", "aggregate_forecast", "crps_gaussian", "forecast_quantile", "fuse_gaussians",
    "init_model", "learning_step", "load_bank", "pinball", "predict_one", "prediction_step",
    "recursive_update", "save_bank", "threshold_covariance",
]
