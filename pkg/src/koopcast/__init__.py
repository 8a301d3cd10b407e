"""Koopman-operator forecasting with hard constraints on decay rates and frequencies.

The main entry points are :func:`koopcast.model.init_model`,
:func:`koopcast.training.train` and :func:`koopcast.model.forecast`, plus
the scikit-learn style wrappers in :mod:`koopcast.estimators`.
"""

from koopcast.data import GeneratorConfig, TimeSeries, generate
from koopcast.estimators import DMDForecaster, KoopmanForecaster
from koopcast.model import KoopmanModel, forecast, init_model, load_checkpoint, save_checkpoint
from koopcast.spectral import (
    Fixed,
    ForcedNegative,
    ForcedPositive,
    Free,
    Range,
    SpectralConstraint,
)
from koopcast.training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DMDForecaster",
    "Fixed",
    "ForcedNegative",
    "ForcedPositive",
    "Free",
    "GeneratorConfig",
    "KoopmanForecaster",
    "KoopmanModel",
    "Range",
    "SpectralConstraint",
    "TimeSeries",
    "TrainConfig",
    "forecast",
    "generate",
    "init_model",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
