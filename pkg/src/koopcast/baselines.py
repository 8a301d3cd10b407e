"""Linear Koopman baselines: exact DMD and spectrum-constrained DMD (DMDF).

DMD fits a one-step linear map directly in measurement space. DMDF is the
structured Koopman model with frozen identity encoder and decoder, so only
the eigenbasis and the free part of the spectrum are trained.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from koopcast import model as km
from koopcast import spectral
from koopcast.data import DegenerateDataError, TimeSeries
from koopcast.gradcore import ConditioningError, Param
from koopcast.spectral import SpectralConstraint
from koopcast.training import TrainConfig, train

SV_CUTOFF = 1e-10


class DMDFitError(np.linalg.LinAlgError):
    pass


class SpectrumDomainError(ValueError):
    pass


@dataclass
class DMDModel:
    A: np.ndarray  # M x M one-step operator
    eigenvalues: np.ndarray  # complex, pairs adjacent with Im > 0 first
    eigenvectors: np.ndarray  # complex columns
    dt: float

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.eigenvalues)

    @property
    def angle(self) -> np.ndarray:
        return np.angle(self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "format": km.CHECKPOINT_FORMAT,
            "version": km.CHECKPOINT_VERSION,
            "kind": "dmd",
            "dt": self.dt,
            "A": km._array_to_json(self.A),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DMDModel":
        if d.get("kind") != "dmd":
            raise ValueError("not a DMD checkpoint")
        return _from_operator(km._array_from_json(d["A"]), float(d["dt"]))


def _sorted_eig(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs ordered as conjugate pairs (positive angle first), then reals."""
    mu, V = np.linalg.eig(A)
    tol = 1e-12 * max(1.0, np.abs(mu).max())
    pairs = [i for i in range(len(mu)) if mu[i].imag > tol]
    reals = [i for i in range(len(mu)) if abs(mu[i].imag) <= tol]
    pairs.sort(key=lambda i: -abs(mu[i]))
    reals.sort(key=lambda i: -abs(mu[i]))
    mu_out, V_out = [], []
    for i in pairs:
        mu_out += [mu[i], np.conj(mu[i])]
        V_out += [V[:, i], np.conj(V[:, i])]
    for i in reals:
        mu_out.append(complex(mu[i].real, 0.0))
        V_out.append(V[:, i].real.astype(complex))
    return np.array(mu_out), np.array(V_out).T


def _from_operator(A: np.ndarray, dt: float) -> DMDModel:
    mu, V = _sorted_eig(A)
    return DMDModel(A, mu, V, dt)


def dmd_fit(series: TimeSeries, rtol: float = 1e-6) -> DMDModel:
    """Least-squares one-step operator ``A`` with ``A y_n ~ y_{n+1}``.

    Uses a pseudoinverse that drops singular values below ``1e-10 * s_max``.
    Rank-deficient snapshots (for example a constant series) are handled by
    that truncation; only an all-zero snapshot matrix is rejected.
    """
    if not series.is_regular(rtol):
        raise DegenerateDataError("DMD needs regularly sampled data; resample irregular series first")
    if len(series) < series.M + 1:
        raise DegenerateDataError(f"DMD needs at least M+1={series.M + 1} samples, got {len(series)}")
    X0 = series.values[:-1].T
    X1 = series.values[1:].T
    U, s, Vt = np.linalg.svd(X0, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise DMDFitError("snapshot matrix is zero")
    keep = s > SV_CUTOFF * s[0]
    pinv = (Vt[keep].T / s[keep]) @ U[:, keep].T
    A = X1 @ pinv
    dt = float(np.mean(np.diff(series.times)))
    return _from_operator(A, dt)


def continuous_spectrum(model: DMDModel) -> list[tuple[float, float]]:
    """``(r, omega)`` per eigenvalue with ``r = ln|mu| / dt`` and ``omega = arg(mu) / dt``.

    ``arg`` is the principal branch, so frequencies with ``omega * dt > pi``
    alias; that is reported as is.
    """
    mu = model.eigenvalues
    scale = max(1.0, float(np.abs(model.A).max()))
    out = []
    for m in mu:
        if abs(m) <= 1e-14 * scale:
            raise SpectrumDomainError("zero eigenvalue has no continuous-time counterpart")
        out.append((float(np.log(abs(m)) / model.dt), float(np.angle(m) / model.dt)))
    return out


def dmd_forecast(model: DMDModel, y, tau) -> np.ndarray:
    """``y`` advanced by time ``tau``; whole-step offsets use exact matrix powers."""
    y = np.asarray(y, dtype=np.float64)
    steps = float(tau) / model.dt
    k = round(steps)
    if abs(steps - k) < 1e-9 and k >= 0:
        return np.linalg.matrix_power(model.A, k) @ y
    V = model.eigenvectors
    coeff = np.linalg.solve(V, y.astype(complex))
    return (V @ (model.eigenvalues.astype(complex) ** steps * coeff)).real


def dmd_forecast_path(model: DMDModel, y, taus) -> np.ndarray:
    return np.array([dmd_forecast(model, y, t) for t in taus])


def dmd_modes(model: DMDModel) -> list[dict]:
    """Left eigenvectors (rows of ``V^{-1}``) paired with their ``(r, omega)``."""
    V = model.eigenvectors
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > 1e12:
        raise ConditioningError(cond, f"eigenvector matrix condition {cond:.3e} too large")
    left = np.linalg.inv(V)
    spec = continuous_spectrum(model)
    return [{"index": i, "r": r, "omega": w, "vector": left[i]} for i, (r, w) in enumerate(spec)]


def real_mode_rows(modes: list[dict]) -> list[dict]:
    """Convert complex left eigenvectors to the real ``[Re-part, Im-part]`` row convention.

    A conjugate pair with left eigenvector ``w`` becomes rows ``2 Re(w)`` and
    ``-2 Im(w)``, the rows of ``W^{-1}`` for the real basis ``[u, z]``.
    """
    out = []
    i = 0
    while i < len(modes):
        m = modes[i]
        vec = np.asarray(m["vector"])
        if np.iscomplexobj(vec) and m["omega"] != 0.0 and i + 1 < len(modes):
            out.append({**m, "index": len(out), "vector": 2.0 * vec.real})
            out.append({**m, "index": len(out), "vector": -2.0 * vec.imag})
            i += 2
        else:
            out.append({**m, "index": len(out), "vector": np.real(vec)})
            i += 1
    return out


def write_modes_csv(modes: list[dict], path) -> None:
    """Columns ``mode_index, r, omega, component_1..M``."""
    rows = real_mode_rows(modes)
    M = len(rows[0]["vector"]) if rows else 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode_index", "r", "omega"] + [f"component_{j + 1}" for j in range(M)])
        for m in rows:
            w.writerow([m["index"], repr(float(m["r"])), repr(float(m["omega"]))] + [repr(float(x)) for x in m["vector"]])


# ---------------------------------------------------------------------------
# DMDF


def init_linear_model(M: int, constraint: SpectralConstraint, rng_seed: int = 0, time_mode: str = "continuous"):
    """Structured Koopman model with frozen identity encoder/decoder (K = M)."""
    if constraint.K != M:
        raise ValueError(f"DMDF needs K == M, got K={constraint.K}, M={M}")
    rng = np.random.default_rng(rng_seed)
    basis = spectral.init_basis(M, rng)
    return km.KoopmanModel(
        encoder=km.identity_mlp(M, "encoder"),
        decoder=km.identity_mlp(M, "decoder"),
        constraint=constraint,
        spectral_params=constraint.init_params(),
        basis_U=Param(basis.U, "basis.U"),
        basis_Z=Param(basis.Z, "basis.Z"),
        time_mode=time_mode,
    )


def dmdf_fit(series: TimeSeries, constraint: SpectralConstraint, config: TrainConfig | None = None, rng_seed: int = 0):
    """Train a DMDF model on ``series`` (split internally). Returns ``(model, history)``."""
    config = config or TrainConfig()
    model = init_linear_model(series.M, constraint, rng_seed)
    return train(model, series, config, standardize=False)
