"""Time series containers, RK4 trajectory generators and CSV I/O."""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.special


class DegenerateDataError(ValueError):
    """Not enough observations for the requested operation."""


class IntegrationError(FloatingPointError):
    pass


class CSVFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass
class TimeSeries:
    """Observations ``values[n]`` (length M) at strictly increasing ``times[n]``."""

    times: np.ndarray
    values: np.ndarray
    name: str = "series"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values
        if values.ndim != 2 or values.shape[0] != self.times.shape[0]:
            raise ValueError(f"values shape {values.shape} does not match {len(self.times)} times")
        if not np.all(np.isfinite(self.times)) or not np.all(np.isfinite(values)):
            raise ValueError("time series contains non-finite entries")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int, name: str | None = None) -> "TimeSeries":
        return TimeSeries(self.times[start:stop], self.values[start:stop], name or self.name)

    def is_regular(self, rtol: float = 1e-6) -> bool:
        gaps = np.diff(self.times)
        return len(gaps) == 0 or bool(np.allclose(gaps, gaps[0], rtol=rtol, atol=0.0))


# ---------------------------------------------------------------------------
# integration


def rk4_step(f: Callable[[np.ndarray, float], np.ndarray], x, t: float, h: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of ``dx/dt = f(x, t)``."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    k1 = f(x, t)
    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite state after RK4 step at t={t}")
    return out


def integrate(f, x0, times, max_step: float, min_substeps: int = 20) -> np.ndarray:
    """States at each of ``times`` (increasing, starting at or after 0) from ``x0`` at t=0.

    Each gap between output times is split into at least ``min_substeps``
    equal RK4 steps of length at most ``max_step``.
    """
    x = np.asarray(x0, dtype=np.float64)
    out = np.empty((len(times), x.shape[0]))
    t = 0.0
    for i, target in enumerate(times):
        gap = target - t
        if gap < 0:
            raise ValueError("output times must be increasing and non-negative")
        if gap > 0:
            n = max(min_substeps, math.ceil(gap / max_step))
            h = gap / n
            for j in range(n):
                x = rk4_step(f, x, t + j * h, h)
        t = target
        out[i] = x
    return out


# ---------------------------------------------------------------------------
# benchmark systems


def pendulum_field(g_over_l: float = 1.0):
    def f(x, t):
        return np.array([x[1], -g_over_l * math.sin(x[0])])

    return f


def vanderpol_field(mu: float = 1.0):
    def f(x, t):
        return np.array([x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0]])

    return f


def linear_field(A):
    A = np.asarray(A, dtype=np.float64)
    return lambda x, t: A @ x


def linear_test_matrix(decay: float = -0.05, freq: float = 1.0) -> np.ndarray:
    """Real 2x2 generator whose eigenvalues are ``decay +/- i freq``."""
    return np.array([[decay, freq], [-freq, decay]])


SYSTEMS = ("pendulum", "vanderpol", "two_frequency", "linear_test")

_DEFAULT_PARAMS = {
    "pendulum": {"g_over_l": 1.0},
    "vanderpol": {"mu": 1.0},
    "two_frequency": {"mu": 1.0, "amplitude": 1.0, "freq": 2.0},
    "linear_test": {"decay": -0.05, "freq": 1.0},
}

_DEFAULT_STATE = {
    "pendulum": (0.8 * math.pi, 0.0),
    "vanderpol": (2.0, 0.0),
    "two_frequency": (2.0, 0.0),
    "linear_test": (1.0, 0.0),
}


@dataclass
class GeneratorConfig:
    system: str = "vanderpol"
    params: dict = field(default_factory=dict)
    t_end: float = 50.0
    n_samples: int = 500
    sampling: str = "regular"
    jitter: float = 0.0
    noise_std: float = 0.0
    rng_seed: int = 0
    initial_state: tuple | None = None
    name: str | None = None

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}; expected one of {SYSTEMS}")
        if self.sampling not in ("regular", "irregular"):
            raise ValueError(f"sampling must be 'regular' or 'irregular', got {self.sampling!r}")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 0.0 <= self.jitter <= 0.9:
            raise ValueError("jitter fraction must lie in [0, 0.9]")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        unknown = set(self.params) - set(_DEFAULT_PARAMS[self.system])
        if unknown:
            raise ValueError(f"unknown parameters for {self.system}: {sorted(unknown)}")

    @property
    def system_params(self) -> dict:
        return {**_DEFAULT_PARAMS[self.system], **self.params}

    @property
    def state0(self) -> np.ndarray:
        x0 = self.initial_state if self.initial_state is not None else _DEFAULT_STATE[self.system]
        return np.asarray(x0, dtype=np.float64)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["initial_state"] = None if self.initial_state is None else [float(x) for x in self.initial_state]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)


def pendulum(**kw) -> GeneratorConfig:
    return GeneratorConfig(system="pendulum", name="Pendulum", **kw)


def pendulum_irregular(**kw) -> GeneratorConfig:
    kw.setdefault("jitter", 0.5)
    return GeneratorConfig(system="pendulum", sampling="irregular", name="PendulumI", **kw)


def vanderpol(**kw) -> GeneratorConfig:
    return GeneratorConfig(system="vanderpol", name="VanDerPol", **kw)


def sample_times(config: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    dt = config.t_end / config.n_samples
    t = dt * np.arange(config.n_samples)
    if config.sampling == "irregular" and config.jitter > 0:
        # first sample stays at the initial condition
        t[1:] += rng.uniform(-config.jitter * dt, config.jitter * dt, size=config.n_samples - 1)
        t.sort()
    return t


def _field(config: GeneratorConfig):
    p = config.system_params
    if config.system == "pendulum":
        return pendulum_field(p["g_over_l"])
    if config.system in ("vanderpol", "two_frequency"):
        return vanderpol_field(p["mu"])
    return linear_field(linear_test_matrix(p["decay"], p["freq"]))


def generate(config: GeneratorConfig) -> TimeSeries:
    """Sampled (and optionally noisy) trajectory of a benchmark system."""
    rng = np.random.default_rng(config.rng_seed)
    times = sample_times(config, rng)
    max_step = (config.t_end / config.n_samples) / 20.0
    values = integrate(_field(config), config.state0, times, max_step)
    if config.system == "two_frequency":
        p = config.system_params
        values = values + p["amplitude"] * np.sin(p["freq"] * times)[:, None]
    if config.noise_std > 0:
        values = values + rng.normal(0.0, config.noise_std, size=values.shape)
    return TimeSeries(times, values, config.name or config.system)


def dominant_period(times: np.ndarray, x: np.ndarray) -> float:
    """Mean spacing of upward zero crossings of ``x - mean(x)``, linearly interpolated."""
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    idx = np.nonzero((x[:-1] < 0) & (x[1:] >= 0))[0]
    if len(idx) < 2:
        raise DegenerateDataError("fewer than two upward crossings")
    crossings = times[idx] - x[idx] * (times[idx + 1] - times[idx]) / (x[idx + 1] - x[idx])
    return float(np.mean(np.diff(crossings)))


@functools.lru_cache(maxsize=None)
def _vanderpol_frequency(mu: float) -> float:
    # settle onto the limit cycle, then time many periods on a fine grid
    f = vanderpol_field(mu)
    settle = integrate(f, (2.0, 0.0), [100.0], 0.01)[0]
    t = np.arange(0.0, 200.0, 0.01)
    x = integrate(f, settle, t, 0.01, min_substeps=1)[:, 0]
    return 2.0 * math.pi / dominant_period(t, x)


def true_frequencies(config: GeneratorConfig) -> list[float]:
    """Known angular frequencies of the generating system (fundamental only)."""
    p = config.system_params
    if config.system == "pendulum":
        theta0 = abs(float(config.state0[0]))
        v0 = float(config.state0[1])
        energy = 0.5 * v0 * v0 / p["g_over_l"] + (1.0 - math.cos(theta0))
        k = math.sqrt(energy / 2.0)  # sin(amplitude / 2)
        if k >= 1.0:
            raise ValueError("pendulum is not librating; no single frequency")
        period = 4.0 * scipy.special.ellipk(k * k) / math.sqrt(p["g_over_l"])
        return [2.0 * math.pi / period]
    if config.system == "vanderpol":
        return [_vanderpol_frequency(p["mu"])]
    if config.system == "two_frequency":
        return [_vanderpol_frequency(p["mu"]), float(p["freq"])]
    return [abs(float(p["freq"]))]


# ---------------------------------------------------------------------------
# CSV


def save_csv(series: TimeSeries, path) -> None:
    """Header ``t,y1,...,yM``; floats written with their shortest round-trip repr."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"y{i + 1}" for i in range(series.M)])
        for t, row in zip(series.times, series.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def load_csv(path, name: str | None = None) -> TimeSeries:
    """Read a ``t,y1,...,yM`` file; rows are sorted by ``t``, duplicate times rejected."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVFormatError(path, 1, "empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "t" or header[1:] != [f"y{i + 1}" for i in range(len(header) - 1)]:
            raise CSVFormatError(path, 1, f"expected header t,y1,...,yM, got {','.join(header)}")
        width = len(header)
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise CSVFormatError(path, line, f"expected {width} fields, got {len(row)}")
            try:
                nums = [float(c) for c in row]
            except ValueError as exc:
                raise CSVFormatError(path, line, str(exc)) from None
            if not all(math.isfinite(x) for x in nums):
                raise CSVFormatError(path, line, "non-finite value")
            rows.append((nums[0], line, nums[1:]))
    if not rows:
        raise CSVFormatError(path, 2, "no data rows")
    rows.sort(key=lambda r: r[0])
    for prev, cur in zip(rows, rows[1:]):
        if cur[0] == prev[0]:
            line = max(cur[1], prev[1])
            raise CSVFormatError(path, line, f"duplicate timestamp {cur[0]!r}")
    times = np.array([r[0] for r in rows])
    values = np.array([r[2] for r in rows])
    return TimeSeries(times, values, name or path.stem)
