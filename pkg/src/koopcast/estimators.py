"""scikit-learn style wrappers around the Koopman model and DMD.

``fit(X, t)`` takes an ``N x M`` array of measurements observed at times
``t`` (default ``0, 1, ..., N-1``). ``transform`` maps measurements to
Koopman-space embeddings, ``inverse_transform`` maps embeddings back and
``predict(X, tau)`` forecasts each row ``tau`` time units ahead.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from koopcast import baselines, model as km, training
from koopcast.data import TimeSeries
from koopcast.spectral import SpectralConstraint


def _times(t, n: int) -> np.ndarray:
    if t is None:
        return np.arange(n, dtype=np.float64)
    t = check_array(np.asarray(t, dtype=np.float64).reshape(-1, 1), ensure_min_samples=1).ravel()
    if t.shape[0] != n:
        raise ValueError(f"t has {t.shape[0]} entries but X has {n} rows")
    return t


def _series(X, t, name="X") -> TimeSeries:
    X = check_array(X, dtype=np.float64, ensure_min_samples=2)
    return TimeSeries(_times(t, X.shape[0]), X, name=name)


class KoopmanForecaster(TransformerMixin, BaseEstimator):
    """Encoder, constrained linear dynamics and decoder trained on one sequence.

    Parameters
    ----------
    n_modes : int
        Koopman-space dimension K.
    hidden_sizes : tuple of int
        Hidden layer widths of the encoder (mirrored by the decoder).
    constraint : SpectralConstraint or None
        Decay/frequency declarations; ``None`` leaves every parameter free.
    time_mode : {"continuous", "discrete"}
    nu_start, nu_end : int
        Backcast/forecast horizon of the training loss, in sample steps.
    lr, max_epochs, patience :
        Adam step size and early-stopping settings.
    standardize : bool
        Normalize measurements by the training mean and standard deviation.
    random_state : int
        Seed of the weight and basis initialization.
    """

    def __init__(
        self,
        n_modes=2,
        hidden_sizes=(4,),
        constraint=None,
        time_mode="continuous",
        nu_start=-10,
        nu_end=10,
        lr=1e-2,
        max_epochs=5000,
        patience=250,
        standardize=True,
        random_state=0,
    ):
        self.n_modes = n_modes
        self.hidden_sizes = hidden_sizes
        self.constraint = constraint
        self.time_mode = time_mode
        self.nu_start = nu_start
        self.nu_end = nu_end
        self.lr = lr
        self.max_epochs = max_epochs
        self.patience = patience
        self.standardize = standardize
        self.random_state = random_state

    def _train_config(self) -> training.TrainConfig:
        return training.TrainConfig(
            nu_start=self.nu_start,
            nu_end=self.nu_end,
            learning_rate=self.lr,
            max_epochs=self.max_epochs,
            patience=self.patience,
        )

    def _initial_model(self, M: int) -> km.KoopmanModel:
        constraint = self.constraint
        if isinstance(constraint, dict):
            constraint = SpectralConstraint.from_dict(constraint)
        return km.init_model(M, self.n_modes, self.hidden_sizes, constraint, self.random_state, self.time_mode)

    def fit(self, X, t=None, X_val=None, t_val=None):
        """Train on ``(X, t)``; early stopping watches ``(X_val, t_val)`` when given, else the training loss."""
        series = _series(X, t)
        val = None if X_val is None else _series(X_val, t_val, name="validation")
        if val is not None and val.M != series.M:
            raise ValueError(f"X_val has {val.M} columns, X has {series.M}")
        model = self._initial_model(series.M)
        if self.standardize:
            model.mean, model.scale = training.standardization(series)
        self.model_, self.history_ = training.fit(model, series, val, self._train_config())
        self.n_features_in_ = series.M
        self.last_time_ = float(series.times[-1])
        self.last_value_ = series.values[-1].copy()
        return self

    def _check_X(self, X, width=None):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        width = self.n_features_in_ if width is None else width
        if X.shape[1] != width:
            raise ValueError(f"expected {width} columns, got {X.shape[1]}")
        return X

    def transform(self, X):
        X = self._check_X(X)
        return km.encode(self.model_, X)

    def inverse_transform(self, G):
        G = self._check_X(G, self.n_modes)
        return km.decode(self.model_, G)

    def predict(self, X, tau):
        """Forecast each row of ``X`` by ``tau`` (scalar or one value per row)."""
        X = self._check_X(X)
        return np.asarray(km.forecast(self.model_, X, tau))

    def forecast(self, times):
        """Forecast the fitted sequence at absolute ``times`` from its last observation."""
        check_is_fitted(self, "model_")
        taus = np.asarray(times, dtype=np.float64) - self.last_time_
        return km.forecast_path(self.model_, self.last_value_, taus)

    def score(self, X, y, tau=1.0):
        """Negative mean squared forecast error of ``predict(X, tau)`` against ``y``."""
        y = check_array(y, dtype=np.float64)
        return -float(np.mean(np.sum((self.predict(X, tau) - y) ** 2, axis=1)))

    @property
    def spectrum_(self):
        check_is_fitted(self, "model_")
        return self.model_.spectrum()

    def dynamic_modes(self):
        check_is_fitted(self, "model_")
        return km.dynamic_modes(self.model_)


class DMDForecaster(BaseEstimator):
    """Exact DMD on regularly sampled data."""

    def __init__(self, rtol=1e-6):
        self.rtol = rtol

    def fit(self, X, t=None):
        series = _series(X, t)
        self.model_ = baselines.dmd_fit(series, rtol=self.rtol)
        self.n_features_in_ = series.M
        self.last_time_ = float(series.times[-1])
        self.last_value_ = series.values[-1].copy()
        return self

    def predict(self, X, tau):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        taus = np.broadcast_to(np.asarray(tau, dtype=np.float64), (X.shape[0],))
        return np.stack([baselines.dmd_forecast(self.model_, x, s) for x, s in zip(X, taus)])

    def forecast(self, times):
        check_is_fitted(self, "model_")
        return baselines.dmd_forecast_path(self.model_, self.last_value_, np.asarray(times) - self.last_time_)

    @property
    def continuous_spectrum_(self):
        check_is_fitted(self, "model_")
        return baselines.continuous_spectrum(self.model_)
