"""Implementations behind the CLI verbs.

Every command is deterministic given its config and seeds. Outputs are
written as CSV/JSON under an output directory; wall-clock times are only
logged, never written, so reruns produce byte-identical files.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from koopcast import baselines, data
from koopcast import model as km
from koopcast.harness.config import ExperimentConfig
from koopcast.harness.metrics import MetricsReport, estimated_frequencies, frequency_mae, mean_and_stderr, test_mse
from koopcast.spectral import Fixed, Free, Range
from koopcast.training import TrainHistory, TrainingAborted, split_series, train

logger = logging.getLogger(__name__)


@dataclass
class SeedRun:
    seed: int
    model: object = None
    history: TrainHistory | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def seeds_of(cfg: ExperimentConfig) -> list[int]:
    return [cfg.seed_offset + i for i in range(cfg.n_seeds)]


def build_model(cfg: ExperimentConfig, M: int, seed: int):
    if cfg.model.kind == "dmdf":
        return baselines.init_linear_model(M, cfg.constraint(M), seed, cfg.model.time_mode)
    return km.init_model(M, cfg.model.K, cfg.model.hidden_sizes, cfg.constraint(), seed, cfg.model.time_mode)


def run_seed(cfg: ExperimentConfig, series: data.TimeSeries, seed: int) -> SeedRun:
    """Train one model; failures are captured in ``SeedRun.error``."""
    if cfg.model.kind == "dmd":
        train_part, _, _ = split_series(series, cfg.train.fractions)
        try:
            return SeedRun(seed, baselines.dmd_fit(train_part), TrainHistory())
        except (ValueError, ArithmeticError) as exc:
            return SeedRun(seed, error=f"{type(exc).__name__}: {exc}")
    model = build_model(cfg, series.M, seed)
    standardize = cfg.model.standardize and cfg.model.kind == "koopman"
    try:
        model, history = train(model, series, cfg.train, standardize=standardize)
    except TrainingAborted as exc:
        return SeedRun(seed, exc.model, exc.history, error=str(exc))
    return SeedRun(seed, model, history)


def run_seeds(cfg: ExperimentConfig, series: data.TimeSeries, workers: int = 1) -> list[SeedRun]:
    seeds = seeds_of(cfg)
    if workers <= 1:
        return [run_seed(cfg, series, s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: run_seed(cfg, series, s), seeds))


def checkpoint_dict(model) -> dict:
    if isinstance(model, baselines.DMDModel):
        return model.to_dict()
    return km.model_to_dict(model)


def load_any_checkpoint(path):
    d = json.loads(Path(path).read_text())
    if d.get("kind") == "dmd":
        return baselines.DMDModel.from_dict(d)
    return km.model_from_dict(d)


def _seed_dir(out: Path, seed: int) -> Path:
    return out / f"seed_{seed}"


# ---------------------------------------------------------------------------
# verbs


def cmd_generate(cfg: ExperimentConfig, out) -> Path:
    if cfg.generator is None:
        raise ValueError("config has no generator; nothing to generate")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    series = data.generate(cfg.generator)
    path = out / f"{cfg.generator.name or cfg.generator.system}.csv"
    data.save_csv(series, path)
    return path


def cmd_train(cfg: ExperimentConfig, out, workers: int = 1) -> tuple[dict, list[SeedRun]]:
    """Train every seed; write ``seed_<s>/checkpoint.json``, ``seed_<s>/history.csv`` and ``train_summary.json``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    series = cfg.load_series()
    start = time.perf_counter()
    runs = run_seeds(cfg, series, workers)
    summary = {"name": cfg.name, "kind": cfg.model.kind, "seeds": {}}
    for run in runs:
        d = _seed_dir(out, run.seed)
        d.mkdir(exist_ok=True)
        if run.model is not None:
            km.dump_json(checkpoint_dict(run.model), d / "checkpoint.json")
        if run.history is not None:
            run.history.to_csv(d / "history.csv")
        summary["seeds"][str(run.seed)] = {
            "status": "ok" if run.ok else "failed",
            "error": run.error,
            "epochs": len(run.history) if run.history else 0,
            "best_epoch": run.history.best_epoch if run.history else None,
            "stop_reason": run.history.stop_reason if run.history else None,
        }
    summary["all_ok"] = all(r.ok for r in runs)
    km.dump_json(summary, out / "train_summary.json")
    logger.info("trained %d seeds in %.1fs", len(runs), time.perf_counter() - start)
    return summary, runs


def evaluate_models(models: dict, series: data.TimeSeries, fractions, truth=None) -> MetricsReport:
    """Test MSE (and frequency MAE when ``truth`` is known) for each ``seed -> model``."""
    start = time.perf_counter()
    train_part, _, test_part = split_series(series, fractions)
    report = MetricsReport()
    for seed in sorted(models):
        model = models[seed]
        report.seeds.append(seed)
        report.mse.append(test_mse(model, train_part, test_part))
        est = estimated_frequencies(model)
        report.freq_mae.append(frequency_mae(est, truth) if truth else None)
        if isinstance(model, baselines.DMDModel):
            report.spectra.append({"continuous": [list(p) for p in baselines.continuous_spectrum(model)]})
        else:
            spec = model.spectrum()
            report.spectra.append({"r": [float(x) for x in spec.r], "omega": [float(x) for x in spec.omega]})
    report.wall_clock = time.perf_counter() - start
    return report


def cmd_evaluate(cfg: ExperimentConfig, out, checkpoint=None, dataset=None) -> MetricsReport:
    """Evaluate one checkpoint or every ``seed_<s>/checkpoint.json`` under ``out``.

    Writes ``metrics.json`` and ``metrics.csv`` into ``out``.
    """
    out = Path(out)
    series = data.load_csv(dataset) if dataset else cfg.load_series()
    truth = cfg.true_frequencies() if not dataset or cfg.true_freqs else None
    models = {}
    failures = {}
    if checkpoint is not None:
        models[0] = load_any_checkpoint(checkpoint)
    else:
        summary_path = out / "train_summary.json"
        statuses = json.loads(summary_path.read_text())["seeds"] if summary_path.exists() else {}
        for seed in seeds_of(cfg):
            path = _seed_dir(out, seed) / "checkpoint.json"
            status = statuses.get(str(seed), {})
            if status.get("status") == "failed":
                failures[seed] = status.get("error")
            elif path.exists():
                models[seed] = load_any_checkpoint(path)
            else:
                failures[seed] = f"missing checkpoint {path}"
    report = evaluate_models(models, series, cfg.train.fractions, truth)
    report.failures = failures
    out.mkdir(parents=True, exist_ok=True)
    km.dump_json(report.to_dict(), out / "metrics.json")
    with (out / "metrics.csv").open("w") as fh:
        fh.write("seed,test_mse,freq_mae\n")
        for seed, mse, mae in zip(report.seeds, report.mse, report.freq_mae):
            fh.write(f"{seed},{mse!r},{'' if mae is None else repr(mae)}\n")
    logger.info("evaluated %d models in %.2fs", len(models), report.wall_clock)
    return report


def modes_of(model) -> list[dict]:
    if isinstance(model, baselines.DMDModel):
        return baselines.dmd_modes(model)
    return km.dynamic_modes(model)


def cmd_modes(out, checkpoint=None, cfg: ExperimentConfig | None = None) -> list[Path]:
    """Write ``modes.csv`` for one checkpoint, or one per seed directory."""
    out = Path(out)
    targets = []
    if checkpoint is not None:
        targets.append((Path(checkpoint), out / "modes.csv"))
    else:
        for seed in seeds_of(cfg):
            d = _seed_dir(out, seed)
            if (d / "checkpoint.json").exists():
                targets.append((d / "checkpoint.json", d / "modes.csv"))
    written = []
    for src, dst in targets:
        dst.parent.mkdir(parents=True, exist_ok=True)
        baselines.write_modes_csv(modes_of(load_any_checkpoint(src)), dst)
        written.append(dst)
    return written


def range_spec(center: float, width: float, free_init: float = 0.0):
    """Fixed for width 0, Free for infinite width, otherwise a Range centred on ``center``."""
    if width == 0:
        return Fixed(center)
    if math.isinf(width):
        return Free(free_init)
    return Range(center - width / 2.0, center + width / 2.0)


def cmd_sweep_range(cfg: ExperimentConfig, out, widths=None, workers: int = 1) -> list[dict]:
    """Train and evaluate with a frequency range of each width centred on the true frequency.

    Writes ``sweep_range.csv`` (width, mean, stderr, n_ok) and
    ``sweep_range_seeds.csv`` (width, seed, test_mse).
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    truth = cfg.true_frequencies()
    mode = cfg.sweep_mode
    if not truth or mode >= len(truth):
        raise ValueError("sweep-range needs the true frequency of the swept mode")
    widths = cfg.sweep_widths if widths is None else widths
    series = cfg.load_series()
    rows, seed_rows = [], []
    for width in widths:
        sub = cfg.with_freq_spec(mode, range_spec(truth[mode], width, cfg.free_init(mode)))
        runs = run_seeds(sub, series, workers)
        models = {r.seed: r.model for r in runs if r.ok}
        report = evaluate_models(models, series, cfg.train.fractions)
        mean, se = mean_and_stderr(report.mse)
        rows.append({"width": width, "mean_mse": mean, "stderr": se, "n_ok": len(models), "mse": report.mse})
        seed_rows += [(width, s, m) for s, m in zip(report.seeds, report.mse)]
    with (out / "sweep_range.csv").open("w") as fh:
        fh.write("width,mean_mse,stderr,n_ok\n")
        for r in rows:
            fh.write(f"{r['width']!r},{r['mean_mse']!r},{r['stderr']!r},{r['n_ok']}\n")
    with (out / "sweep_range_seeds.csv").open("w") as fh:
        fh.write("width,seed,test_mse\n")
        for w, s, m in seed_rows:
            fh.write(f"{w!r},{s},{m!r}\n")
    return rows
