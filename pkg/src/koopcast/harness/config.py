"""Experiment configuration files (JSON with a ``schema_version`` field)."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from koopcast import data
from koopcast.spectral import Fixed, Free, SpectralConstraint, spec_from_dict
from koopcast.training import TrainConfig

SCHEMA_VERSION = 1
MODEL_KINDS = ("koopman", "dmdf", "dmd")


class ConfigError(ValueError):
    pass


@dataclass
class ModelSpec:
    kind: str = "koopman"
    K: int = 2
    hidden_sizes: tuple = (4,)
    time_mode: str = "continuous"
    standardize: bool = True

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)


@dataclass
class ExperimentConfig:
    """Dataset, model, constraint and training settings for one experiment.

    Frequency declarations may use ``"value": "true"`` (fixed) to refer to
    the known frequency of the generating system, resolved by
    :meth:`constraint`.
    """

    name: str
    generator: data.GeneratorConfig | None = None
    csv_path: str | None = None
    model: ModelSpec = field(default_factory=ModelSpec)
    constraint_decl: dict | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    n_seeds: int = 10
    seed_offset: int = 0
    true_freqs: list | None = None
    sweep_widths: list = field(default_factory=lambda: [0.0, 0.01, 0.1, math.inf])
    sweep_mode: int = 0

    def __post_init__(self):
        if (self.generator is None) == (self.csv_path is None):
            raise ConfigError("exactly one of data.generator and data.csv must be given")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be at least 1")

    # -- data -------------------------------------------------------------

    def load_series(self) -> data.TimeSeries:
        if self.generator is not None:
            return data.generate(self.generator)
        path = Path(self.csv_path)
        if not path.exists():
            raise ConfigError(f"dataset file not found: {path}")
        return data.load_csv(path)

    def true_frequencies(self) -> list[float] | None:
        if self.true_freqs is not None:
            return [float(w) for w in self.true_freqs]
        if self.generator is not None:
            return data.true_frequencies(self.generator)
        return None

    # -- model ------------------------------------------------------------

    def constraint(self, M: int | None = None) -> SpectralConstraint:
        K = self.model.K if self.model.kind == "koopman" or M is None else M
        if self.constraint_decl is None:
            return SpectralConstraint.uniform(K)
        decl = self.constraint_decl
        truth = None
        freq = []
        for k, d in enumerate(decl.get("freq", [])):
            if d.get("kind") == "fixed" and d.get("value") == "true":
                truth = truth if truth is not None else self.true_frequencies()
                if truth is None or k >= len(truth):
                    raise ConfigError(f"freq[{k}] refers to an unknown true frequency")
                freq.append(Fixed(float(truth[k])))
            else:
                freq.append(spec_from_dict(d))
        c = SpectralConstraint(tuple(spec_from_dict(d) for d in decl.get("decay", [])), tuple(freq))
        if c.K != K:
            raise ConfigError(f"constraint declares K={c.K} but the model needs K={K}")
        return c

    def free_init(self, mode: int) -> float:
        d = (self.constraint_decl or {}).get("freq", [])
        if mode < len(d) and d[mode].get("kind") == "free":
            return float(d[mode].get("init", 0.0))
        return 0.0

    def with_freq_spec(self, mode: int, spec) -> "ExperimentConfig":
        """Copy with frequency slot ``mode`` replaced by ``spec``."""
        new = copy.deepcopy(self)
        decl = copy.deepcopy(self.constraint_decl) or SpectralConstraint.uniform(self.model.K).to_dict()
        decl["freq"][mode] = spec.to_dict()
        new.constraint_decl = decl
        return new


def _parse_width(w) -> float:
    if isinstance(w, str):
        if w.lower() in ("inf", "infinity"):
            return math.inf
        return float(w)
    return float(w)


def config_from_dict(d: dict) -> ExperimentConfig:
    d = copy.deepcopy(d)
    version = d.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    try:
        data_decl = d.pop("data")
        generator = None
        if "generator" in data_decl:
            generator = data.GeneratorConfig.from_dict(data_decl["generator"])
        sweep = d.pop("sweep", {})
        cfg = ExperimentConfig(
            name=d.pop("name", "experiment"),
            generator=generator,
            csv_path=data_decl.get("csv"),
            model=ModelSpec(**d.pop("model", {})),
            constraint_decl=d.pop("constraint", None),
            train=TrainConfig.from_dict(d.pop("train", {})),
            n_seeds=int(d.pop("n_seeds", 10)),
            seed_offset=int(d.pop("seed_offset", 0)),
            true_freqs=d.pop("true_frequencies", None),
            sweep_widths=[_parse_width(w) for w in sweep.get("widths", [0, 0.01, 0.1, "inf"])],
            sweep_mode=int(sweep.get("mode", 0)),
        )
    except (TypeError, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid experiment config: {exc}") from exc
    if d:
        raise ConfigError(f"unknown config keys: {sorted(d)}")
    try:
        if cfg.model.kind == "koopman":
            cfg.constraint()
        elif cfg.constraint_decl is not None:
            # DMDF width comes from the data; only the declarations are checked here
            decl = cfg.constraint_decl
            cfg.constraint(len(decl.get("decay", [])) + len(decl.get("freq", [])))
    except ConfigError:
        raise
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"invalid constraint: {exc}") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = config_from_dict(raw)
    if cfg.csv_path is not None and not Path(cfg.csv_path).is_absolute():
        cfg.csv_path = str(path.parent / cfg.csv_path)
    return cfg


def default_constraint_decl(fixed_decay: bool = True, fixed_freq: bool = False, free_init: float = 0.0) -> dict:
    """Declarations for the K=2 benchmark variants (conservation, optional known frequency)."""
    decay = Fixed(0.0) if fixed_decay else Free(0.0)
    decl = {"decay": [decay.to_dict()], "freq": [Free(free_init).to_dict()]}
    if fixed_freq:
        decl["freq"] = [{"kind": "fixed", "value": "true"}]
    return decl
