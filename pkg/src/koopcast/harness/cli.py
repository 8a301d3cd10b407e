"""Command-line entry point: ``koopcast {generate,train,evaluate,modes,sweep-range}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time

from koopcast.harness import commands
from koopcast.harness.config import ConfigError, load_config

log = logging.getLogger("koopcast")


def _parse_widths(text: str) -> list[float]:
    return [float("inf") if w.strip().lower() in ("inf", "infinity") else float(w) for w in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="koopcast", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", type=int, help="number of seeds (overrides config)")
        p.add_argument("--seed-offset", type=int, help="first seed (overrides config)")
        return p

    common(sub.add_parser("generate", help="write the configured dataset as CSV"))
    p = common(sub.add_parser("train", help="train one model per seed"))
    p.add_argument("--workers", type=int, default=1, help="seeds trained concurrently (threads)")
    p = common(sub.add_parser("evaluate", help="test MSE and frequency MAE of trained models"))
    p.add_argument("--checkpoint", help="evaluate this checkpoint instead of the seed directories")
    p.add_argument("--data", help="dataset CSV (default: the config's dataset)")
    p = common(sub.add_parser("modes", help="export dynamic modes as CSV"), config_required=False)
    p.add_argument("--checkpoint", help="single checkpoint (default: every seed directory of --config)")
    p = common(sub.add_parser("sweep-range", help="test MSE versus frequency range width"))
    p.add_argument("--widths", type=_parse_widths, help="comma-separated widths, e.g. 0,0.01,0.1,inf")
    p.add_argument("--workers", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config) if args.config else None
        if cfg is not None:
            overrides = {}
            if args.seeds is not None:
                overrides["n_seeds"] = args.seeds
            if args.seed_offset is not None:
                overrides["seed_offset"] = args.seed_offset
            cfg = dataclasses.replace(cfg, **overrides)
        start = time.perf_counter()
        code = _dispatch(args, cfg)
        log.info("%s finished in %.1fs", args.command, time.perf_counter() - start)
        return code
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 3


def _dispatch(args, cfg) -> int:
    if args.command == "generate":
        path = commands.cmd_generate(cfg, args.out)
        print(path)
        return 0
    if args.command == "train":
        summary, runs = commands.cmd_train(cfg, args.out, workers=args.workers)
        for run in runs:
            if not run.ok:
                log.error("seed %d failed: %s", run.seed, run.error)
        return 0 if summary["all_ok"] else 1
    if args.command == "evaluate":
        report = commands.cmd_evaluate(cfg, args.out, checkpoint=args.checkpoint, dataset=args.data)
        print(json.dumps({**report.to_dict(), "wall_clock_s": round(report.wall_clock, 3)}, indent=1))
        for seed, err in report.failures.items():
            log.error("seed %s not evaluated: %s", seed, err)
        return 0 if not report.failures else 1
    if args.command == "modes":
        if args.checkpoint is None and cfg is None:
            raise ConfigError("modes needs --checkpoint or --config")
        for path in commands.cmd_modes(args.out, checkpoint=args.checkpoint, cfg=cfg):
            print(path)
        return 0
    if args.command == "sweep-range":
        rows = commands.cmd_sweep_range(cfg, args.out, widths=args.widths, workers=args.workers)
        for r in rows:
            print(f"width={r['width']:<8g} mse={r['mean_mse']:.6g} +/- {r['stderr']:.3g} (n={r['n_ok']})")
        return 0 if all(r["n_ok"] == cfg.n_seeds for r in rows) else 1
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
