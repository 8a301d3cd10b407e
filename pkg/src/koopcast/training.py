"""Multi-step forecast/backcast objective, Adam and early stopping."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from koopcast import gradcore as gc
from koopcast import spectral
from koopcast.data import DegenerateDataError, TimeSeries
from koopcast.gradcore import ConditioningError, Tape
from koopcast.model import KoopmanModel, decode, encode, propagate_embeddings

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    nu_start: int = -10
    nu_end: int = 10
    learning_rate: float = 1e-2
    max_epochs: int = 5000
    patience: int = 250
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    rng_seed: int = 0
    fractions: tuple = (0.2, 0.1, 0.7)

    def __post_init__(self):
        if self.nu_start > self.nu_end:
            raise ValueError(f"nu_start {self.nu_start} exceeds nu_end {self.nu_end}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")
        self.fractions = tuple(float(f) for f in self.fractions)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    r: list = field(default_factory=list)
    omega: list = field(default_factory=list)
    best_epoch: int | None = None
    stop_reason: str = ""

    def __len__(self) -> int:
        return len(self.epochs)

    def record(self, epoch, train_loss, val_loss, spectrum) -> None:
        self.epochs.append(epoch)
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.r.append([float(x) for x in spectrum.r])
        self.omega.append([float(x) for x in spectrum.omega])

    def to_csv(self, path) -> None:
        n_r = len(self.r[0]) if self.r else 0
        n_w = len(self.omega[0]) if self.omega else 0
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["epoch", "train_loss", "val_loss"]
                + [f"r{k + 1}" for k in range(n_r)]
                + [f"omega{k + 1}" for k in range(n_w)]
            )
            for row in zip(self.epochs, self.train_loss, self.val_loss, self.r, self.omega):
                epoch, tl, vl, r, om = row
                w.writerow([epoch, repr(tl), repr(vl)] + [repr(x) for x in r] + [repr(x) for x in om])


class TrainingAborted(RuntimeError):
    """Training stopped on an error; ``history`` and ``model`` hold progress so far."""

    def __init__(self, message, history: TrainHistory, model: KoopmanModel, cause: Exception):
        super().__init__(message)
        self.history = history
        self.model = model
        self.cause = cause


# ---------------------------------------------------------------------------
# objective


def loss_pairs(N: int, nu_start: int, nu_end: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero-based (anchor, target) index pairs of the multi-step objective.

    For each step count ``nu`` the anchors ``n`` run over every index with
    both ``n`` and ``n + nu`` inside the series.
    """
    src, dst = [], []
    for nu in range(nu_start, nu_end + 1):
        n = np.arange(max(0, -nu), min(N - nu, N))
        src.append(n)
        dst.append(n + nu)
    src = np.concatenate(src) if src else np.zeros(0, dtype=int)
    dst = np.concatenate(dst) if dst else np.zeros(0, dtype=int)
    return src.astype(int), dst.astype(int)


def multistep_loss(model: KoopmanModel, series: TimeSeries, nu_start: int, nu_end: int, tape: Tape | None = None):
    """Sum of squared forecast/backcast errors over step counts ``nu_start..nu_end``.

    Every observation is encoded once and mapped to modal coordinates with a
    single linear solve; each (anchor, target) pair then costs one block
    rotation. Returns a scalar node when ``tape`` is given, else a float.
    """
    N = len(series)
    src, dst = loss_pairs(N, nu_start, nu_end)
    if len(src) == 0:
        raise DegenerateDataError(f"no (anchor, target) pairs for N={N}, nu in [{nu_start}, {nu_end}]")
    own = tape is None
    tape = Tape() if tape is None else tape
    taus = series.times[dst] - series.times[src]
    G = encode(model, series.values, tape=tape)
    pred = decode(model, propagate_embeddings(model, tape, G, src, taus), tape=tape)
    loss = gc.squared_norm(pred - series.values[dst])
    return float(loss.value) if own else loss


def loss_and_grad(model: KoopmanModel, series: TimeSeries, nu_start: int, nu_end: int):
    tape = Tape()
    loss = multistep_loss(model, series, nu_start, nu_end, tape=tape)
    params = model.params()
    grads = tape.backward(loss, params=params.values())
    return float(loss.value), {name: grads[name] for name in params}


# ---------------------------------------------------------------------------
# optimizer


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update. Returns ``(new_params, state)``.

    ``params`` and ``grads`` map names to arrays; the input arrays are not
    modified.
    """
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    out = {}
    for name, value in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = value - config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)
    return out, state


# ---------------------------------------------------------------------------
# data splitting and the training loop


def split_series(series: TimeSeries, fractions=(0.2, 0.1, 0.7)) -> tuple[TimeSeries, TimeSeries, TimeSeries]:
    """Contiguous train / validation / test split by index count."""
    N = len(series)
    n_train = int(np.floor(fractions[0] * N + 1e-9))
    n_val = int(np.floor(fractions[1] * N + 1e-9))
    n_test = N - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DegenerateDataError(f"series of length {N} gives split sizes ({n_train}, {n_val}, {n_test})")
    return (
        series.slice(0, n_train, f"{series.name}:train"),
        series.slice(n_train, n_train + n_val, f"{series.name}:val"),
        series.slice(n_train + n_val, N, f"{series.name}:test"),
    )


def standardization(series: TimeSeries) -> tuple[np.ndarray, np.ndarray]:
    mean = series.values.mean(axis=0)
    scale = series.values.std(axis=0)
    scale[scale == 0.0] = 1.0
    return mean, scale


def fit(
    model: KoopmanModel,
    train_series: TimeSeries,
    val_series: TimeSeries | None,
    config: TrainConfig,
) -> tuple[KoopmanModel, TrainHistory]:
    """Full-batch Adam on the multi-step objective with early stopping.

    ``model`` is trained in place and also returned with its parameters set
    to the snapshot of lowest validation loss (lowest training loss if
    ``val_series`` is None). Raises :class:`TrainingAborted` on a
    conditioning failure.
    """
    history = TrainHistory()
    if config.max_epochs == 0:
        history.stop_reason = "max_epochs"
        return model, history

    params = model.params()
    state = AdamState()
    best_state, best_loss, since_best = model.get_state(), np.inf, 0
    history.stop_reason = "max_epochs"
    for epoch in range(config.max_epochs):
        try:
            loss, grads = loss_and_grad(model, train_series, config.nu_start, config.nu_end)
            if val_series is None:
                val = loss
            else:
                val = multistep_loss(model, val_series, config.nu_start, config.nu_end)
        except ConditioningError as exc:
            model.set_state(best_state)
            history.stop_reason = f"conditioning: {exc}"
            raise TrainingAborted(f"aborted at epoch {epoch}: {exc}", history, model, exc) from exc

        spectrum = model.spectrum()
        spectral.check_spectrum(model.constraint, spectrum)
        history.record(epoch, loss, val, spectrum)
        if not np.isfinite(loss) or not np.isfinite(val):
            history.stop_reason = "non-finite loss"
            break
        if val < best_loss:
            best_loss, best_state, since_best = val, model.get_state(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.patience:
                history.stop_reason = "patience"
                break

        new_values, state = adam_step({n: p.value for n, p in params.items()}, grads, state, config)
        for name, p in params.items():
            p.value = new_values[name]

    model.set_state(best_state)
    logger.debug("stopped after %d epochs (%s), best epoch %s", len(history), history.stop_reason, history.best_epoch)
    return model, history


def train(model: KoopmanModel, series: TimeSeries, config: TrainConfig, standardize: bool = True):
    """Split ``series``, set normalization from the training part, and fit.

    Returns ``(best_model, history)``.
    """
    train_part, val_part, _ = split_series(series, config.fractions)
    if standardize:
        model.mean, model.scale = standardization(train_part)
    return fit(model, train_part, val_part, config)
