"""Encoder / Koopman propagation / decoder forecaster.

The forecast of a measurement ``y`` observed at time ``t`` for time
``t + tau`` is ``decode(W B(tau) W^{-1} encode(y))`` where ``W`` is the real
eigenbasis and ``B`` the block exponential of the constrained spectrum (see
:mod:`koopcast.spectral`). Negative ``tau`` gives a backcast.

Every function here takes an optional :class:`~koopcast.gradcore.Tape`.
Given a tape the result is a node on it (so a loss can be differentiated);
without one a plain ``ndarray`` comes back.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from koopcast import gradcore as gc
from koopcast import spectral
from koopcast.gradcore import Node, Param, Tape
from koopcast.spectral import EigenBasis, KoopmanSpectrum, SpectralConstraint

CHECKPOINT_FORMAT = "koopcast.checkpoint"
CHECKPOINT_VERSION = 1

TIME_MODES = ("continuous", "discrete")


@dataclass
class MLP:
    """Feed-forward net with tanh hidden layers and a linear output layer.

    Weights are stored ``(fan_in, fan_out)`` so a batch ``X`` of row vectors
    maps to ``X @ W + b``.
    """

    weights: list[Param]
    biases: list[Param]
    trainable: bool = True

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> dict[str, Param]:
        out = {}
        for w, b in zip(self.weights, self.biases):
            out[w.name] = w
            out[b.name] = b
        return out

    def forward(self, tape: Tape, x: Node) -> Node:
        lift = tape.param if self.trainable else (lambda p: tape.const(p.value))
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ lift(w) + lift(b)
            if i < last:
                h = gc.tanh(h)
        return h


def init_mlp(sizes, rng: np.random.Generator, prefix: str) -> MLP:
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        s = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Param(rng.uniform(-s, s, size=(fan_in, fan_out)), f"{prefix}.W{i}"))
        biases.append(Param(np.zeros(fan_out), f"{prefix}.b{i}"))
    return MLP(weights, biases)


def identity_mlp(n: int, prefix: str) -> MLP:
    """A frozen single linear layer that passes its input through unchanged."""
    return MLP([Param(np.eye(n), f"{prefix}.W0")], [Param(np.zeros(n), f"{prefix}.b0")], trainable=False)


@dataclass
class KoopmanModel:
    encoder: MLP
    decoder: MLP
    constraint: SpectralConstraint
    spectral_params: dict[str, Param]
    basis_U: Param
    basis_Z: Param
    time_mode: str = "continuous"
    mean: np.ndarray = field(default=None)
    scale: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.time_mode not in TIME_MODES:
            raise ValueError(f"time_mode must be one of {TIME_MODES}, got {self.time_mode!r}")
        M, K = self.n_inputs, self.K
        if self.encoder.sizes[-1] != K or self.decoder.sizes[0] != K:
            raise ValueError(f"encoder/decoder widths {self.encoder.sizes}/{self.decoder.sizes} do not match K={K}")
        if self.decoder.sizes[-1] != M:
            raise ValueError(f"decoder output {self.decoder.sizes[-1]} differs from input width {M}")
        if self.basis_U.shape != (K, spectral.n_decay(K)) or self.basis_Z.shape != (K, spectral.n_freq(K)):
            raise ValueError("basis shapes inconsistent with K")
        if self.mean is None:
            self.mean = np.zeros(M)
        if self.scale is None:
            self.scale = np.ones(M)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)

    @property
    def K(self) -> int:
        return self.constraint.K

    @property
    def n_inputs(self) -> int:
        return self.encoder.sizes[0]

    @property
    def discrete(self) -> bool:
        return self.time_mode == "discrete"

    @property
    def basis(self) -> EigenBasis:
        return EigenBasis(self.basis_U.value, self.basis_Z.value)

    def params(self) -> dict[str, Param]:
        """All trainable parameters by name. Frozen MLPs and Fixed spectra contribute nothing."""
        out = {}
        for net in (self.encoder, self.decoder):
            if net.trainable:
                out.update(net.params())
        out.update(self.spectral_params)
        out[self.basis_U.name] = self.basis_U
        out[self.basis_Z.name] = self.basis_Z
        return out

    def all_params(self) -> dict[str, Param]:
        out = {**self.encoder.params(), **self.decoder.params()}
        out.update(self.params())
        return out

    def spectrum(self) -> KoopmanSpectrum:
        return spectral.realize_spectrum(self.constraint, self.spectral_params)

    def get_state(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.all_params().items()}

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.all_params().items():
            p.value = np.array(state[name], dtype=np.float64)

    def copy(self) -> "KoopmanModel":
        return model_from_dict(model_to_dict(self))


def init_model(
    M: int,
    K: int,
    hidden_sizes=(4,),
    constraint: SpectralConstraint | None = None,
    rng_seed: int = 0,
    time_mode: str = "continuous",
) -> KoopmanModel:
    """Fresh model with Glorot-uniform weights and a near-identity basis.

    ``constraint`` defaults to every decay rate and frequency free. Raw
    spectral parameters start at each declaration's ``init``.
    """
    if K < 1 or M < 1:
        raise ValueError("M and K must be positive")
    hidden = [int(h) for h in hidden_sizes]
    if any(h < 1 for h in hidden):
        raise ValueError(f"hidden sizes must be positive, got {hidden}")
    constraint = constraint or SpectralConstraint.uniform(K)
    if constraint.K != K:
        raise ValueError(f"constraint describes K={constraint.K}, model has K={K}")
    rng = np.random.default_rng(rng_seed)
    encoder = init_mlp([M, *hidden, K], rng, "encoder")
    decoder = init_mlp([K, *hidden[::-1], M], rng, "decoder")
    basis = spectral.init_basis(K, rng)
    return KoopmanModel(
        encoder=encoder,
        decoder=decoder,
        constraint=constraint,
        spectral_params=constraint.init_params(),
        basis_U=Param(basis.U, "basis.U"),
        basis_Z=Param(basis.Z, "basis.Z"),
        time_mode=time_mode,
    )


# ---------------------------------------------------------------------------
# graph builders


def _input(tape: Tape, y) -> Node:
    return y if isinstance(y, Node) else tape.const(y)


def _standardize(model: KoopmanModel, tape: Tape, y: Node) -> Node:
    if np.all(model.mean == 0.0) and np.all(model.scale == 1.0):
        return y
    return (y - model.mean) * (1.0 / model.scale)


def _unstandardize(model: KoopmanModel, y: Node) -> Node:
    if np.all(model.mean == 0.0) and np.all(model.scale == 1.0):
        return y
    return y * model.scale + model.mean


def _run(build, tape):
    if tape is None:
        return build(Tape()).value
    return build(tape)


def encode(model: KoopmanModel, y, tape: Tape | None = None):
    """Koopman embedding of ``y`` (an M-vector or an ``N x M`` batch)."""

    def build(t):
        return model.encoder.forward(t, _standardize(model, t, _input(t, y)))

    return _run(build, tape)


def decode(model: KoopmanModel, g, tape: Tape | None = None):
    """Measurement-space image of ``g`` (a K-vector or an ``N x K`` batch)."""

    def build(t):
        return _unstandardize(model, model.decoder.forward(t, _input(t, g)))

    return _run(build, tape)


def basis_node(model: KoopmanModel, tape: Tape) -> Node:
    return spectral.assemble_basis(tape.param(model.basis_U), tape.param(model.basis_Z))


def spectrum_node(model: KoopmanModel, tape: Tape) -> KoopmanSpectrum:
    return spectral.realize_spectrum(model.constraint, model.spectral_params, tape=tape)


def propagate_embeddings(model: KoopmanModel, tape: Tape, G: Node, src, tau) -> Node:
    """Advance rows ``G[src]`` of an ``N x K`` embedding batch by ``tau``.

    ``W^{-1}`` is applied once to the whole batch, so many (anchor, offset)
    pairs share a single linear solve. Returns a ``T x K`` node.
    """
    W = basis_node(model, tape)
    coords = gc.solve_linear(W, gc.transpose(G))
    if src is not None:
        coords = gc.take(coords, np.asarray(src), axis=1)
    moved = spectral.apply_block_exponential(spectrum_node(model, tape), tau, coords, discrete=model.discrete)
    return gc.transpose(W @ moved)


def forecast(model: KoopmanModel, y, tau, tape: Tape | None = None):
    """Predicted measurement ``tau`` after (or before, if negative) ``y``.

    ``y`` may be an M-vector or an ``N x M`` batch; for a batch ``tau`` may be
    a scalar or a length-N array. In discrete time ``tau`` counts steps.
    """

    def build(t):
        Y = _input(t, y)
        single = Y.value.ndim == 1
        if single:
            Y = gc.stack([Y])
        G = encode(model, Y, tape=t)
        taus = np.broadcast_to(np.asarray(tau, dtype=np.float64), (Y.shape[0],))
        out = decode(model, propagate_embeddings(model, t, G, None, taus), tape=t)
        return gc.take(out, 0) if single else out

    return _run(build, tape)


def forecast_path(model: KoopmanModel, y, taus) -> np.ndarray:
    """Forecasts of one anchor ``y`` at every offset in ``taus`` (``len(taus) x M``)."""
    taus = np.asarray(taus, dtype=np.float64)
    tape = Tape()
    G = encode(model, np.atleast_2d(y), tape=tape)
    moved = propagate_embeddings(model, tape, G, np.zeros(len(taus), dtype=int), taus)
    return decode(model, moved, tape=tape).value


def dynamic_modes(model: KoopmanModel) -> list[dict]:
    """Left eigenvectors (rows of ``W^{-1}``) decoded through the decoder."""
    return spectral.dynamic_modes(model.basis, model.spectrum(), decoder=lambda rows: decode(model, rows))


# ---------------------------------------------------------------------------
# checkpoints


def _array_to_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _array_from_json(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def model_to_dict(model: KoopmanModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": "koopman",
        "n_inputs": model.n_inputs,
        "K": model.K,
        "encoder_sizes": model.encoder.sizes,
        "decoder_sizes": model.decoder.sizes,
        "encoder_trainable": model.encoder.trainable,
        "decoder_trainable": model.decoder.trainable,
        "time_mode": model.time_mode,
        "constraint": model.constraint.to_dict(),
        "normalization": {"mean": _array_to_json(model.mean), "scale": _array_to_json(model.scale)},
        "params": {name: _array_to_json(p.value) for name, p in sorted(model.all_params().items())},
    }


def _mlp_from(params: dict, prefix: str, n_layers: int, trainable: bool) -> MLP:
    ws = [Param(params[f"{prefix}.W{i}"], f"{prefix}.W{i}") for i in range(n_layers)]
    bs = [Param(params[f"{prefix}.b{i}"], f"{prefix}.b{i}") for i in range(n_layers)]
    return MLP(ws, bs, trainable=trainable)


def model_from_dict(d: dict) -> KoopmanModel:
    if d.get("format") != CHECKPOINT_FORMAT or d.get("kind", "koopman") != "koopman":
        raise ValueError("not a koopman model checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    params = {name: _array_from_json(v) for name, v in d["params"].items()}
    constraint = SpectralConstraint.from_dict(d["constraint"])
    spectral_params = {name: Param(params[name], name) for name in constraint.init_params()}
    return KoopmanModel(
        encoder=_mlp_from(params, "encoder", len(d["encoder_sizes"]) - 1, d["encoder_trainable"]),
        decoder=_mlp_from(params, "decoder", len(d["decoder_sizes"]) - 1, d["decoder_trainable"]),
        constraint=constraint,
        spectral_params=spectral_params,
        basis_U=Param(params["basis.U"], "basis.U"),
        basis_Z=Param(params["basis.Z"], "basis.Z"),
        time_mode=d["time_mode"],
        mean=_array_from_json(d["normalization"]["mean"]),
        scale=_array_from_json(d["normalization"]["scale"]),
    )


def dump_json(obj, path) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, shortest round-trip floats."""
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n")


def save_checkpoint(model: KoopmanModel, path) -> None:
    dump_json(model_to_dict(model), path)


def load_checkpoint(path) -> KoopmanModel:
    return model_from_dict(json.loads(Path(path).read_text()))
