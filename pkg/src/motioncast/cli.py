"""Command-line front end.

Five subcommands — synth, train, predict, eval, bench — share one flat
key=value configuration covering dataset, model, training, occlusion and
path settings. Values resolve in order: built-in defaults, then the
--config file, then each --set override (later wins), then --seed/--out
shorthands. Unknown keys are rejected. Every command writes the fully
resolved configuration to run_config.txt next to its outputs, so a run
directory is always self-describing.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime
failure (missing files, non-finite training, recovery errors).

Example::

    motioncast synth --out data/synth --set synth.count=8
    motioncast train --set dataset.root=data --set train.epochs=5 --out run1
    motioncast predict --set paths.checkpoint=run1/model.npz \
        --set paths.input=data/synth/seq000.csv --out pred1
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .dataset import (DatasetSpec, MotionSequence, ParseError,
                      load_csv_sequence, load_dataset, save_csv_sequence,
                      synth_generate, window_split)
from .model import (ModelConfig, init_model, load_checkpoint, param_count,
                    predict, save_checkpoint)
from .occlusion import KINDS, OcclusionSpec, RecoveryError
from .trainer import (RECOVERY_STRATEGIES, TrainConfig, benchmark_inference,
                      evaluate_mse_horizons, occlusion_eval, train_loop,
                      write_eval_report, write_loss_curve)

__all__ = ["main", "resolve_config", "DEFAULTS"]

# Every known key with its default; the default's type fixes the parse.
DEFAULTS = {
    "seed": 0,
    "fps": 25.0,
    # dataset
    "dataset.root": "data",
    "dataset.subjects": "",          # comma list; empty = all
    "dataset.actions": "",           # comma list; empty = all
    "dataset.stride": 5,
    "dataset.downsample_factor": 1,
    # model (n_prefix/horizon live here; dataset windowing reads them)
    "model.n_params": 99,
    "model.n_prefix": 10,
    "model.horizon": 25,
    "model.embed_dim": 160,
    "model.n_heads": 8,
    "model.n_layers": 4,
    "model.ffn_mult": 4,
    "model.dropout": 0.1,
    "model.per_head_scale": False,
    # training
    "train.epochs": 10,
    "train.batch_size": 4,
    "train.lr": 1e-3,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.clip_norm": 1.0,
    "train.horizon_weighting": False,
    # occlusion benchmark (eval only)
    "occlusion.enabled": False,
    "occlusion.kind": "time_consistent",
    "occlusion.ratio": 0.4,
    "occlusion.mean_duration_frames": 3.0,
    "occlusion.strategy": "interp",
    # evaluation
    "eval.exclude": "",              # comma list of parameter indices
    "eval.translation": "",          # comma list of parameter indices
    # synthetic data
    "synth.count": 8,
    "synth.n_frames": 120,
    "synth.n_params": 99,
    # benchmarking
    "bench.reps": 100,
    "bench.warmup": 10,
    # paths
    "paths.checkpoint": "",
    "paths.input": "",
}

_TRUTHY = {"1", "true", "yes", "on"}
_FALSY = {"0", "false", "no", "off"}


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in _TRUTHY:
            return True
        if low in _FALSY:
            return False
        raise UsageError(f"config key '{key}' expects a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise UsageError(f"config key '{key}' expects an integer, got {raw!r}")
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise UsageError(f"config key '{key}' expects a number, got {raw!r}")
    return raw


def _parse_pairs(lines, origin: str):
    pairs = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise UsageError(f"{origin}, line {lineno}: expected key=value, got {text!r}")
        key, _, value = text.partition("=")
        pairs.append((key.strip(), value.strip()))
    return pairs


def resolve_config(config_path=None, sets=(), seed=None):
    """Merge defaults <- config file <- --set overrides <- --seed."""
    config = dict(DEFAULTS)
    pairs = []
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                pairs.extend(_parse_pairs(fh, config_path))
        except OSError as e:
            raise UsageError(f"cannot read config file: {e}")
    for item in sets:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        pairs.append((key.strip(), value.strip()))
    for key, value in pairs:
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key '{key}'")
        config[key] = _coerce(key, value)
    if seed is not None:
        config["seed"] = seed
    return config


def _write_run_config(config: dict, outdir: str) -> None:
    with open(os.path.join(outdir, "run_config.txt"), "w", encoding="utf-8") as fh:
        for key in sorted(config):
            fh.write(f"{key}={config[key]}\n")


def _split_csv(value: str):
    return tuple(s.strip() for s in value.split(",") if s.strip())


def _split_ints(value: str, key: str):
    try:
        return tuple(int(s) for s in _split_csv(value))
    except ValueError:
        raise UsageError(f"config key '{key}' expects comma-separated integers")


def _model_config(config: dict) -> ModelConfig:
    return ModelConfig(
        n_params=config["model.n_params"],
        n_prefix=config["model.n_prefix"],
        horizon=config["model.horizon"],
        embed_dim=config["model.embed_dim"],
        n_heads=config["model.n_heads"],
        n_layers=config["model.n_layers"],
        ffn_mult=config["model.ffn_mult"],
        dropout=config["model.dropout"],
        per_head_scale=config["model.per_head_scale"])


def _dataset_spec(config: dict) -> DatasetSpec:
    subjects = _split_csv(config["dataset.subjects"]) or None
    actions = _split_csv(config["dataset.actions"]) or None
    return DatasetSpec(
        root=config["dataset.root"], subjects=subjects, actions=actions,
        n_prefix=config["model.n_prefix"], horizon=config["model.horizon"],
        stride=config["dataset.stride"],
        downsample_factor=config["dataset.downsample_factor"])


def _train_config(config: dict) -> TrainConfig:
    return TrainConfig(
        epochs=config["train.epochs"], batch_size=config["train.batch_size"],
        lr=config["train.lr"], beta1=config["train.beta1"],
        beta2=config["train.beta2"], eps=config["train.eps"],
        clip_norm=config["train.clip_norm"], seed=config["seed"],
        horizon_weighting=config["train.horizon_weighting"])


def _occlusion_spec(config: dict) -> OcclusionSpec:
    return OcclusionSpec(
        kind=config["occlusion.kind"], ratio=config["occlusion.ratio"],
        mean_duration_frames=config["occlusion.mean_duration_frames"],
        seed=config["seed"])


def _load_windows(config: dict):
    spec = _dataset_spec(config)
    sequences = load_dataset(spec, fps=config["fps"])
    windows = []
    for seq in sequences:
        windows.extend(window_split(seq, spec))
    if not windows:
        raise ValueError(
            f"no training windows: dataset under '{spec.root}' yielded "
            f"{len(sequences)} usable sequence(s)")
    return windows


def _checkpoint_or_fresh(config: dict):
    path = config["paths.checkpoint"]
    if path:
        return load_checkpoint(path)
    return init_model(_model_config(config), seed=config["seed"])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(config: dict, outdir: str) -> int:
    sequences = synth_generate(
        seed=config["seed"], count=config["synth.count"],
        n_frames=config["synth.n_frames"], n_params=config["synth.n_params"],
        fps=config["fps"])
    subject_dir = os.path.join(outdir, "synth")
    os.makedirs(subject_dir, exist_ok=True)
    for seq in sequences:
        save_csv_sequence(seq, os.path.join(subject_dir, f"{seq.action}.csv"))
    print(f"wrote {len(sequences)} sequence(s) under {subject_dir}")
    return 0


def cmd_train(config: dict, outdir: str) -> int:
    windows = _load_windows(config)
    model = init_model(_model_config(config), seed=config["seed"])
    result = train_loop(model, windows, _train_config(config),
                        checkpoint_dir=outdir)
    write_loss_curve(result.curve, os.path.join(outdir, "loss_curve.csv"))
    save_checkpoint(result.model, os.path.join(outdir, "model.npz"))
    if result.halted:
        print("training halted on non-finite loss; last good weights kept",
              file=sys.stderr)
        return 2
    last = result.curve[-1][1] if result.curve else float("nan")
    print(f"trained {len(result.curve)} step(s) on {len(windows)} window(s); "
          f"final loss {last:.6g}; checkpoint {os.path.join(outdir, 'model.npz')}")
    return 0


def cmd_predict(config: dict, outdir: str) -> int:
    if not config["paths.input"]:
        raise UsageError("predict needs --set paths.input=<motion csv>")
    model = _checkpoint_or_fresh(config)
    seq = load_csv_sequence(config["paths.input"], fps=config["fps"])
    future = predict(model, seq.frames)
    out_seq = MotionSequence(frames=future, fps=seq.fps,
                             meta={"subject": seq.subject,
                                   "action": seq.action + "_pred"})
    out_path = os.path.join(outdir, "prediction.csv")
    save_csv_sequence(out_seq, out_path)
    print(f"wrote {future.shape[0]} predicted frame(s) to {out_path}")
    return 0


def cmd_eval(config: dict, outdir: str) -> int:
    model = _checkpoint_or_fresh(config)
    windows = _load_windows(config)
    exclude = _split_ints(config["eval.exclude"], "eval.exclude")
    translation = _split_ints(config["eval.translation"], "eval.translation")
    if config["occlusion.enabled"]:
        report = occlusion_eval(model, windows, _occlusion_spec(config),
                                strategy=config["occlusion.strategy"],
                                exclude=exclude, translation=translation)
    else:
        report = evaluate_mse_horizons(model, windows, exclude=exclude,
                                       translation=translation)
    out_path = os.path.join(outdir, "eval_report.json")
    write_eval_report(report, out_path)
    print(f"evaluated {report.n_windows} window(s); report at {out_path}")
    for ms in report.horizons_ms:
        print(f"  {ms:>5} ms: {report.overall[ms]:.6g}")
    return 0


def cmd_bench(config: dict, outdir: str) -> int:
    model = _checkpoint_or_fresh(config)
    stats = benchmark_inference(model, reps=config["bench.reps"],
                                warmup=config["bench.warmup"],
                                seed=config["seed"])
    doc = {
        "param_count": param_count(model),
        "config": dataclasses.asdict(model.config),
        "latency_ms_mean": stats.mean_ms,
        "latency_ms_p50": stats.p50_ms,
        "latency_ms_p95": stats.p95_ms,
        "latency_reps": stats.reps,
        "calls_per_prediction": stats.calls_per_prediction,
    }
    out_path = os.path.join(outdir, "bench_report.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"mean {stats.mean_ms:.3f} ms | p50 {stats.p50_ms:.3f} ms | "
          f"p95 {stats.p95_ms:.3f} ms over {stats.reps} reps "
          f"({stats.calls_per_prediction} forward pass per prediction)")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motioncast",
                     description="Two-channel transformer motion forecasting")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, help_text in [
            ("synth", "generate seeded synthetic motion CSVs"),
            ("train", "train a model on a CSV dataset"),
            ("predict", "forecast future frames from a motion CSV"),
            ("eval", "horizon-wise Euler-MSE report, optionally under occlusion"),
            ("bench", "single-forecast latency statistics")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH",
                       help="flat key=value config file")
        p.add_argument("--set", metavar="key=value", action="append",
                       default=[], dest="sets",
                       help="override one config key (repeatable; later wins)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the run seed")
        p.add_argument("--out", metavar="DIR", default="out",
                       help="output directory (default: out)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + " | ".join(_COMMANDS))
        config = resolve_config(args.config, args.sets, args.seed)
        if config["occlusion.kind"] not in KINDS:
            raise UsageError(f"occlusion.kind must be one of {KINDS}")
        if config["occlusion.strategy"] not in RECOVERY_STRATEGIES:
            raise UsageError(
                f"occlusion.strategy must be one of {RECOVERY_STRATEGIES}")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1

    try:
        os.makedirs(args.out, exist_ok=True)
        _write_run_config(config, args.out)
        return _COMMANDS[args.command](config, args.out)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (ParseError, RecoveryError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
