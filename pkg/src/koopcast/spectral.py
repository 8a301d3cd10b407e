"""Eigen-structured Koopman operators in real block form.

A ``K x K`` Koopman matrix is never formed. It is represented by its
spectrum (decay rates ``r`` and angular frequencies ``omega``) and a real
eigenbasis ``W = [u1, z1, u2, z2, ...]``. For a conjugate pair
``lambda = r +/- i omega`` with eigenvectors ``u +/- i z`` the flow over a
time ``tau`` acts on the pair's coordinates as

    exp(tau r) * [[ cos(tau omega), sin(tau omega)],
                  [-sin(tau omega), cos(tau omega)]]

and an odd ``K`` contributes one trailing real eigenvalue with the scalar
block ``exp(tau r_last)``.

All functions accept plain arrays or :class:`~koopcast.gradcore.Node`
objects. With nodes the result is recorded on their tape; with plain arrays a
private tape is used and an ``ndarray`` is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import scipy.linalg

from koopcast import gradcore as gc
from koopcast.gradcore import Node, Param, Tape

__all__ = [
    "EigenBasis",
    "Fixed",
    "ForcedNegative",
    "ForcedPositive",
    "Free",
    "KoopmanSpectrum",
    "Range",
    "SpectralConstraint",
    "apply_block_exponential",
    "assemble_basis",
    "block_exponential",
    "check_spectrum",
    "discrete_propagate",
    "dynamic_modes",
    "init_basis",
    "n_decay",
    "n_freq",
    "propagate",
    "propagator_matrix",
    "realize_spectrum",
]


def n_decay(K: int) -> int:
    return (K + 1) // 2


def n_freq(K: int) -> int:
    return K // 2


# ---------------------------------------------------------------------------
# constraint declarations


@dataclass(frozen=True)
class Fixed:
    value: float

    def to_dict(self):
        return {"kind": "fixed", "value": self.value}


@dataclass(frozen=True)
class Free:
    init: float = 0.0

    def to_dict(self):
        return {"kind": "free", "init": self.init}


@dataclass(frozen=True)
class ForcedNegative:
    """``value = -exp(raw)``; ``init`` is the raw parameter."""

    init: float = 0.0

    def to_dict(self):
        return {"kind": "negative", "init": self.init}


@dataclass(frozen=True)
class ForcedPositive:
    """``value = exp(raw)``; ``init`` is the raw parameter."""

    init: float = 0.0

    def to_dict(self):
        return {"kind": "positive", "init": self.init}


@dataclass(frozen=True)
class Range:
    """``value = start + (end - start) * sigmoid(raw)``, always inside (start, end)."""

    start: float
    end: float
    init: float = 0.0

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"Range needs start < end, got ({self.start}, {self.end})")

    def to_dict(self):
        return {"kind": "range", "start": self.start, "end": self.end, "init": self.init}


Spec = Union[Fixed, Free, ForcedNegative, ForcedPositive, Range]

_SPEC_KINDS = {
    "fixed": Fixed,
    "free": Free,
    "negative": ForcedNegative,
    "positive": ForcedPositive,
    "range": Range,
}


def spec_from_dict(d: dict) -> Spec:
    d = dict(d)
    kind = d.pop("kind")
    try:
        cls = _SPEC_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown spectral spec kind {kind!r}") from None
    return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class SpectralConstraint:
    """Per-mode declarations for the decay rates and frequencies."""

    decay: tuple[Spec, ...]
    freq: tuple[Spec, ...]

    def __post_init__(self):
        object.__setattr__(self, "decay", tuple(self.decay))
        object.__setattr__(self, "freq", tuple(self.freq))
        if len(self.decay) != len(self.freq) and len(self.decay) != len(self.freq) + 1:
            raise ValueError(
                f"{len(self.decay)} decay specs and {len(self.freq)} frequency specs "
                "do not describe any Koopman dimension"
            )
        for s in self.freq:
            if isinstance(s, Fixed) and not 0.0 <= s.value < 2.0 * math.pi:
                raise ValueError(f"fixed frequency {s.value} outside [0, 2*pi)")

    @property
    def K(self) -> int:
        return len(self.decay) + len(self.freq)

    @classmethod
    def uniform(cls, K: int, decay: Spec | None = None, freq: Spec | None = None):
        """Same declaration for every mode; unspecified parts are ``Free()``."""
        return cls((decay or Free(),) * n_decay(K), (freq or Free(),) * n_freq(K))

    def to_dict(self):
        return {
            "decay": [s.to_dict() for s in self.decay],
            "freq": [s.to_dict() for s in self.freq],
        }

    @classmethod
    def from_dict(cls, d: dict):
        return cls(
            tuple(spec_from_dict(s) for s in d["decay"]),
            tuple(spec_from_dict(s) for s in d["freq"]),
        )

    def init_params(self) -> dict[str, Param]:
        """One trainable raw scalar per non-fixed declaration."""
        params = {}
        for group, specs in (("decay", self.decay), ("freq", self.freq)):
            for k, s in enumerate(specs):
                if not isinstance(s, Fixed):
                    name = f"spectrum.{group}.{k}"
                    params[name] = Param(s.init, name)
        return params


@dataclass
class KoopmanSpectrum:
    r: object  # Node or ndarray, length ceil(K/2)
    omega: object  # Node or ndarray, length floor(K/2)
    K: int

    def numpy(self) -> "KoopmanSpectrum":
        return KoopmanSpectrum(_value(self.r), _value(self.omega), self.K)

    def eigenvalues(self, discrete: bool = False) -> np.ndarray:
        """Complex eigenvalues in the order lambda_1, lambda_2, ..., lambda_K."""
        r, w = _value(self.r), _value(self.omega)
        lam = np.empty(self.K, dtype=complex)
        for k in range(len(w)):
            z = r[k] * np.exp(1j * w[k]) if discrete else r[k] + 1j * w[k]
            lam[2 * k], lam[2 * k + 1] = z, np.conj(z)
        if self.K % 2:
            lam[-1] = r[-1]
        return lam


@dataclass
class EigenBasis:
    U: np.ndarray  # K x ceil(K/2)
    Z: np.ndarray  # K x floor(K/2)
    names: tuple[str, str] = field(default=("basis.U", "basis.Z"))

    @property
    def K(self) -> int:
        return self.U.shape[0]

    def params(self) -> dict[str, Param]:
        return {self.names[0]: Param(self.U, self.names[0]), self.names[1]: Param(self.Z, self.names[1])}


def init_basis(K: int, rng: np.random.Generator, noise: float = 0.1) -> EigenBasis:
    """Identity plus uniform noise in [-noise, noise], split into U and Z columns."""
    W = np.eye(K) + rng.uniform(-noise, noise, size=(K, K))
    return EigenBasis(W[:, 0::2].copy(), W[:, 1::2].copy())


# ---------------------------------------------------------------------------
# helpers


def _value(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _find_tape(*args) -> Tape | None:
    for a in args:
        if isinstance(a, Node):
            return a.tape
        if isinstance(a, KoopmanSpectrum):
            t = _find_tape(a.r, a.omega)
            if t is not None:
                return t
    return None


def _ensure(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.const(x)


def _begin(*args) -> tuple[Tape, bool]:
    tape = _find_tape(*args)
    return (tape, True) if tape is not None else (Tape(), False)


def _finish(node: Node, on_tape: bool):
    return node if on_tape else node.value


# ---------------------------------------------------------------------------
# operations


def _realize_one(tape: Tape, spec: Spec, raw: Node | None) -> Node:
    if isinstance(spec, Fixed):
        return tape.const(spec.value)
    if isinstance(spec, Free):
        return raw
    if isinstance(spec, ForcedNegative):
        return -gc.exp(raw)
    if isinstance(spec, ForcedPositive):
        return gc.exp(raw)
    value = spec.start + (spec.end - spec.start) * gc.sigmoid(raw)
    # a saturated sigmoid rounds onto a bound; keep the value strictly inside
    return gc.clip(value, np.nextafter(spec.start, spec.end), np.nextafter(spec.end, spec.start))


def realize_spectrum(constraint: SpectralConstraint, raw_params: dict, tape: Tape | None = None):
    """Map raw trainable scalars to the constrained decay rates and frequencies.

    ``raw_params`` maps ``spectrum.{decay,freq}.k`` names (see
    :meth:`SpectralConstraint.init_params`) to Params, Nodes or floats.
    Returns a :class:`KoopmanSpectrum` of nodes when ``tape`` is given and
    of arrays otherwise.
    """
    on_tape = tape is not None
    tape = Tape() if tape is None else tape
    parts = {}
    for group, specs in (("decay", constraint.decay), ("freq", constraint.freq)):
        values = []
        for k, s in enumerate(specs):
            raw = None
            if not isinstance(s, Fixed):
                raw = tape._lift(raw_params[f"spectrum.{group}.{k}"])
            values.append(_realize_one(tape, s, raw))
        parts[group] = gc.stack(values) if values else tape.const(np.zeros(0))
    spec = KoopmanSpectrum(parts["decay"], parts["freq"], constraint.K)
    return spec if on_tape else spec.numpy()


def check_spectrum(constraint: SpectralConstraint, spectrum: KoopmanSpectrum) -> None:
    """Raise ``AssertionError`` if a realized value violates its declaration."""
    r, w = _value(spectrum.r), _value(spectrum.omega)
    for values, specs, label in ((r, constraint.decay, "decay"), (w, constraint.freq, "freq")):
        for k, (x, s) in enumerate(zip(values, specs)):
            ok = True
            if isinstance(s, Fixed):
                ok = x == s.value
            elif isinstance(s, ForcedNegative):
                ok = x < 0
            elif isinstance(s, ForcedPositive):
                ok = x > 0
            elif isinstance(s, Range):
                ok = s.start < x < s.end
            if not ok:
                raise AssertionError(f"{label}[{k}] = {x!r} violates {s}")


def _interleave_order(K: int) -> np.ndarray:
    """Column order turning ``concat([U, Z])`` into ``[u1, z1, u2, z2, ...]``."""
    nd = n_decay(K)
    order = []
    for k in range(nd):
        order.append(k)
        if k < n_freq(K):
            order.append(nd + k)
    return np.array(order)


def assemble_basis(U, Z):
    """Real basis matrix with columns ``[u1, z1, u2, z2, ...]`` (``u_last`` alone for odd K)."""
    tape, on_tape = _begin(U, Z)
    U, Z = _ensure(tape, U), _ensure(tape, Z)
    K = U.shape[0]
    if U.shape != (K, n_decay(K)) or Z.shape != (K, n_freq(K)):
        raise gc.ShapeError(f"basis shapes U{U.shape}, Z{Z.shape} inconsistent with K={K}")
    both = gc.concat([U, Z], axis=1) if n_freq(K) else U
    W = gc.take(both, _interleave_order(K), axis=1)
    return _finish(W, on_tape)


def _pair_factors(spectrum: KoopmanSpectrum, tau, discrete: bool):
    """Per-mode (scale, cos, sin) factors for time offsets ``tau`` (scalar or array)."""
    tape = _find_tape(spectrum)
    tau = np.asarray(tau, dtype=np.float64)
    r = _ensure(tape, spectrum.r)
    w = _ensure(tape, spectrum.omega)
    scales, cs, sn = [], [], []
    for k in range(n_decay(spectrum.K)):
        rk = gc.take(r, k)
        if discrete:
            scales.append(_discrete_scale(rk, tau))
        else:
            scales.append(gc.exp(rk * tau))
        if k < n_freq(spectrum.K):
            angle = gc.take(w, k) * tau
            cs.append(gc.cos(angle))
            sn.append(gc.sin(angle))
    return scales, cs, sn


def _discrete_scale(modulus: Node, tau: np.ndarray) -> Node:
    m = modulus.value
    integral = np.all(tau == np.round(tau))
    if m > 0:
        return gc.exp(tau * gc.log(modulus))
    if not integral:
        raise ValueError(f"modulus {float(m)} <= 0 cannot be raised to non-integer powers")
    if tau.ndim == 0:
        return gc.power(modulus, float(tau))
    return gc.stack([gc.power(modulus, float(t)) for t in tau])


def apply_block_exponential(spectrum: KoopmanSpectrum, tau, coords, discrete: bool = False):
    """Advance modal coordinates by ``tau``.

    ``coords`` is ``K`` or ``K x T``; with ``K x T`` coordinates ``tau`` may
    be a length-``T`` array giving one time offset per column.
    """
    tape, on_tape = _begin(spectrum, coords)
    spectrum = KoopmanSpectrum(_ensure(tape, spectrum.r), _ensure(tape, spectrum.omega), spectrum.K)
    coords = _ensure(tape, coords)
    scales, cs, sn = _pair_factors(spectrum, tau, discrete)
    rows = []
    for k, a in enumerate(scales):
        if k < len(cs):
            c1 = gc.take(coords, 2 * k)
            c2 = gc.take(coords, 2 * k + 1)
            rows.append(a * (cs[k] * c1 + sn[k] * c2))
            rows.append(a * (cs[k] * c2 - sn[k] * c1))
        else:
            rows.append(a * gc.take(coords, 2 * k))
    return _finish(gc.stack(rows), on_tape)


def block_exponential(spectrum: KoopmanSpectrum, tau: float, discrete: bool = False):
    """The ``K x K`` block-diagonal propagator in modal coordinates."""
    tape, on_tape = _begin(spectrum)
    spectrum = KoopmanSpectrum(_ensure(tape, spectrum.r), _ensure(tape, spectrum.omega), spectrum.K)
    K = spectrum.K
    scales, cs, sn = _pair_factors(spectrum, float(tau), discrete)
    zero = tape.const(0.0)
    rows = [[zero] * K for _ in range(K)]
    for k, a in enumerate(scales):
        i = 2 * k
        if k < len(cs):
            rows[i][i] = a * cs[k]
            rows[i][i + 1] = a * sn[k]
            rows[i + 1][i] = -(a * sn[k])
            rows[i + 1][i + 1] = a * cs[k]
        else:
            rows[i][i] = a
    B = gc.stack([gc.stack(row) for row in rows])
    return _finish(B, on_tape)


def _basis_matrix(basis) -> Node | np.ndarray:
    if isinstance(basis, EigenBasis):
        return assemble_basis(basis.U, basis.Z)
    return basis


def propagate(basis, spectrum: KoopmanSpectrum, tau, g, discrete: bool = False):
    """``W B(tau) W^{-1} g`` for an :class:`EigenBasis` or an assembled ``W``.

    ``g`` may be a K-vector or a ``K x T`` matrix of column vectors, in which
    case ``tau`` may also be a length-``T`` array. The cost does not depend
    on the magnitude of ``tau``.
    """
    W = _basis_matrix(basis)
    tape, on_tape = _begin(W, spectrum, g)
    W, g = _ensure(tape, W), _ensure(tape, g)
    coords = gc.solve_linear(W, g)
    moved = apply_block_exponential(_on(tape, spectrum), tau, coords, discrete=discrete)
    return _finish(W @ moved, on_tape)


def discrete_propagate(basis, spectrum: KoopmanSpectrum, steps, g):
    """Propagation with ``r`` read as eigenvalue moduli and ``omega`` as angles."""
    return propagate(basis, spectrum, steps, g, discrete=True)


def _on(tape: Tape, spectrum: KoopmanSpectrum) -> KoopmanSpectrum:
    return KoopmanSpectrum(_ensure(tape, spectrum.r), _ensure(tape, spectrum.omega), spectrum.K)


def propagator_matrix(basis, spectrum: KoopmanSpectrum, tau: float, discrete: bool = False) -> np.ndarray:
    """Dense ``W B(tau) W^{-1}`` as an array (for analysis, not training)."""
    W = _value(_basis_matrix(basis))
    B = block_exponential(spectrum.numpy(), tau, discrete=discrete)
    lu = gc.lu_factor_guarded(W)
    # (W B W^-1) = (W^-T (W B)^T)^T
    return scipy.linalg.lu_solve(lu, (W @ B).T, trans=1).T


def dynamic_modes(basis, spectrum: KoopmanSpectrum, decoder=None) -> list[dict]:
    """Decoded rows of ``W^{-1}``, one per Koopman coordinate.

    ``decoder`` maps a ``K x K`` array whose rows are the left eigenvectors
    to an array of decoded rows; ``None`` leaves them in Koopman space. Each
    entry carries the ``(r, omega)`` of the mode it belongs to; for a
    conjugate pair both rows share the same ``(r, omega)`` and the real and
    imaginary parts of the complex mode are rows ``2k`` and ``2k + 1``.
    """
    W = _value(_basis_matrix(basis))
    K = W.shape[0]
    lu = gc.lu_factor_guarded(W)
    left = scipy.linalg.lu_solve(lu, np.eye(K))  # rows of W^{-1}
    decoded = left if decoder is None else np.asarray(decoder(left))
    r, w = _value(spectrum.r), _value(spectrum.omega)
    modes = []
    for i in range(K):
        k = i // 2
        modes.append(
            {
                "index": i,
                "r": float(r[k]),
                "omega": float(w[k]) if k < len(w) else 0.0,
                "vector": np.asarray(decoded[i], dtype=np.float64),
            }
        )
    return modes
