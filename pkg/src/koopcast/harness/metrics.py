"""Test-set forecast error and frequency-recovery metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from koopcast import baselines
from koopcast import model as km
from koopcast.data import TimeSeries


def forecast_test(model, train: TimeSeries, test: TimeSeries) -> np.ndarray:
    """Forecasts of every test observation from the last training observation."""
    taus = test.times - train.times[-1]
    y0 = train.values[-1]
    if isinstance(model, baselines.DMDModel):
        return baselines.dmd_forecast_path(model, y0, taus)
    return km.forecast_path(model, y0, taus)


def test_mse(model, train: TimeSeries, test: TimeSeries) -> float:
    """Mean over test points of the squared forecast error norm."""
    if (model.A.shape[0] if isinstance(model, baselines.DMDModel) else model.n_inputs) != test.M:
        raise ValueError(f"model width does not match the {test.M}-dimensional dataset")
    pred = forecast_test(model, train, test)
    return float(np.mean(np.sum((pred - test.values) ** 2, axis=1)))


def estimated_frequencies(model) -> list[float]:
    """Non-negative angular frequencies, one per conjugate pair."""
    if isinstance(model, baselines.DMDModel):
        spec = baselines.continuous_spectrum(model)
        return [w for _, w in spec if w > 0]
    return [abs(float(w)) for w in model.spectrum().omega]


def match_frequencies(estimated, truth) -> list[tuple[float, float]]:
    """Greedy nearest pairing: repeatedly match the closest remaining (estimate, truth)."""
    est = list(estimated)
    tru = list(truth)
    pairs = []
    while est and tru:
        i, j = min(
            ((i, j) for i in range(len(est)) for j in range(len(tru))),
            key=lambda ij: (abs(est[ij[0]] - tru[ij[1]]), ij),
        )
        pairs.append((est.pop(i), tru.pop(j)))
    return pairs


def frequency_mae(estimated, truth) -> float:
    pairs = match_frequencies(estimated, truth)
    if not pairs:
        return math.nan
    return float(np.mean([abs(a - b) for a, b in pairs]))


def mean_and_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


@dataclass
class MetricsReport:
    seeds: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    freq_mae: list = field(default_factory=list)
    spectra: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def mse_mean(self) -> float:
        return mean_and_stderr(self.mse)[0]

    @property
    def mse_stderr(self) -> float:
        return mean_and_stderr(self.mse)[1]

    def to_dict(self) -> dict:
        """JSON-ready summary. Wall-clock time is left out so reruns are byte-identical."""
        mae = [m for m in self.freq_mae if m is not None and not math.isnan(m)]
        mae_mean, mae_se = mean_and_stderr(mae) if mae else (None, None)
        return {
            "seeds": self.seeds,
            "test_mse": self.mse,
            "test_mse_mean": self.mse_mean if self.mse else None,
            "test_mse_stderr": self.mse_stderr if self.mse else None,
            "freq_mae": [None if m is None or math.isnan(m) else m for m in self.freq_mae],
            "freq_mae_mean": mae_mean,
            "freq_mae_stderr": mae_se,
            "spectra": self.spectra,
            "failures": {str(k): v for k, v in sorted(self.failures.items())},
        }
