"""Command-line interface: synth / train / eval / resources / gradcheck / trace."""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import audio, metrics as metrics_mod, optim
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError
from .model import (
    PROFILES,
    build_model,
    count_resources,
    format_resources,
    format_trace,
    get_profile,
    shape_trace,
)

GRADCHECK_THRESHOLD = 1e-4
EXHAUSTIVE_PARAM_LIMIT = 10_000


@dataclass(frozen=True)
class RunConfig:
    profile: str = "desk"
    data: Optional[str] = None
    out: str = "."
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    rho: float = 0.9


def parse_config(path) -> RunConfig:
    """Line-oriented `key = value` run configuration; unknown keys are rejected."""
    parsers = {
        "profile": str,
        "data": str,
        "out": str,
        "learning_rate": float,
        "epochs": int,
        "batch_size": int,
        "seed": int,
        "rho": float,
    }
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in parsers:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = parsers[key](value)
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc

    cfg = RunConfig(**values)
    if cfg.profile not in PROFILES:
        raise ConfigurationError(f"{path}: unknown profile {cfg.profile!r}")
    if cfg.learning_rate <= 0:
        raise ConfigurationError(f"{path}: learning_rate must be positive")
    if cfg.epochs <= 0 or cfg.batch_size <= 0:
        raise ConfigurationError(f"{path}: epochs and batch_size must be positive")
    if not 0.0 < cfg.rho < 1.0:
        raise ConfigurationError(f"{path}: rho must be in (0, 1)")
    if cfg.seed < 0:
        raise ConfigurationError(f"{path}: seed must be >= 0")
    return cfg


def _run_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "profile", None):
        overrides["profile"] = args.profile
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "data", None):
        overrides["data"] = args.data
    if getattr(args, "out", None):
        overrides["out"] = args.out
    return replace(cfg, **overrides)


def _model_config(run: RunConfig):
    profile = get_profile(run.profile)
    return replace(profile, learning_rate=run.learning_rate, rho=run.rho,
                   epochs=run.epochs, batch_size=run.batch_size)


def _load_split(run: RunConfig, model_config):
    if not run.data:
        raise ConfigurationError("--data DIR (or a 'data' config key) is required")
    dataset = audio.load_dataset(run.data, model_config)
    train_fs, test_fs = audio.split_dataset(dataset, fraction=0.8, seed=run.seed)
    return optim.stack_dataset(train_fs), optim.stack_dataset(test_fs)


def cmd_synth(args) -> int:
    run = _run_config(args)
    profile = get_profile(run.profile)
    spec = audio.default_synth_spec(sample_rate=profile.sample_rate, seed=run.seed)
    manifest = audio.write_synth_dataset(spec, run.out)
    print(f"wrote {sum(spec.counts)} segments, manifest {manifest}")
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    model_config = _model_config(run)
    (train_xs, train_labels), (test_xs, test_labels) = _load_split(run, model_config)
    model = build_model(model_config, seed=run.seed)

    out_dir = Path(run.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats_path = out_dir / "stats.tsv"
    lines = ["epoch\tloss\ttrain_acc\ttest_acc\tseconds"]

    def log(s: optim.TrainStats):
        line = (f"{s.epoch}\t{s.loss:.6f}\t{s.train_accuracy:.4f}"
                f"\t{s.eval_accuracy:.4f}\t{s.seconds:.2f}")
        lines.append(line)
        print(line)

    print(lines[0])
    history = optim.train(model, train_xs, train_labels, test_xs, test_labels,
                          seed=run.seed, log=log)
    stats_path.write_text("\n".join(lines) + "\n")

    ckpt_path = Path(args.checkpoint) if args.checkpoint else out_dir / "atcnn.ckpt"
    save_checkpoint(model, ckpt_path, seed=run.seed, epoch=history[-1].epoch)
    print(f"checkpoint {ckpt_path}, stats {stats_path}")
    return 0


def cmd_eval(args) -> int:
    run = _run_config(args)
    if not args.checkpoint:
        raise ConfigurationError("--checkpoint PATH is required")
    expect = _model_config(run) if args.profile else None
    model, _meta = load_checkpoint(args.checkpoint, config=expect)
    (_, _), (test_xs, test_labels) = _load_split(run, model.config)

    preds = model.predict_batch(test_xs)
    class_names = _class_names(run, model.config.class_count)
    cm = metrics_mod.confusion(preds, test_labels, model.config.class_count, class_names)
    report = metrics_mod.metrics(cm)

    out_dir = Path(run.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.txt").write_text(metrics_mod.format_metrics_table(report) + "\n")
    (out_dir / "metrics.kv").write_text(metrics_mod.format_metrics_kv(report) + "\n")
    (out_dir / "confusion.tsv").write_text(metrics_mod.format_confusion(cm) + "\n")
    if args.histograms:
        feats = np.concatenate([model.extract_features(x) for x in test_xs])
        labels = np.repeat(test_labels, model.config.frames_per_segment)
        hists = metrics_mod.feature_histograms(feats, labels)
        (out_dir / "histograms.tsv").write_text(
            metrics_mod.format_histogram_table(hists, class_names) + "\n")
    print(f"test_accuracy={report.accuracy:.4f}")
    return 0


def _class_names(run: RunConfig, class_count: int) -> tuple[str, ...]:
    if run.data:
        manifest = Path(run.data) / "manifest.txt"
        if manifest.exists():
            names: dict[int, str] = {}
            for line in manifest.read_text().splitlines():
                parts = line.strip().split(",")
                if len(parts) >= 3:
                    names[int(parts[1])] = parts[2]
            if len(names) == class_count:
                return tuple(names[i] for i in range(class_count))
    return tuple(f"class{i}" for i in range(class_count))


def cmd_resources(args) -> int:
    run = _run_config(args)
    print(format_resources(count_resources(get_profile(run.profile))))
    return 0


def cmd_gradcheck(args) -> int:
    run = _run_config(args)
    config = get_profile(run.profile)
    model = build_model(config, seed=run.seed)
    rng = np.random.default_rng((run.seed, 987))
    xs = rng.standard_normal((1, config.frames_per_segment, config.frame_length))
    labels = rng.integers(0, config.class_count, size=1)
    per_param = None if model.param_count() <= EXHAUSTIVE_PARAM_LIMIT else 4
    err = optim.gradient_check(model, xs, labels, step=1e-5,
                               max_coords_per_param=per_param, seed=run.seed)
    print(f"max relative gradient error: {err:.3e} (threshold {GRADCHECK_THRESHOLD:.0e})")
    return 0 if err <= GRADCHECK_THRESHOLD else 1


def cmd_trace(args) -> int:
    run = _run_config(args)
    print(format_trace(shape_trace(get_profile(run.profile))))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atcnn",
        description="Raw-waveform ship-noise classifier: synthesis, training, "
                    "evaluation, and architecture reports.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="run configuration file (key = value lines)")
        p.add_argument("--profile", choices=sorted(PROFILES), help="architecture profile")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--checkpoint", help="checkpoint path")
        p.add_argument("--data", help="dataset directory (WAVs + manifest.txt)")
        p.set_defaults(func=func)
        return p

    add("synth", cmd_synth, "write a synthetic ship-noise dataset")
    add("train", cmd_train, "train a model and write checkpoint + epoch stats")
    p_eval = add("eval", cmd_eval, "evaluate a checkpoint on the held-out split")
    p_eval.add_argument("--histograms", action="store_true",
                        help="also export per-feature class histograms")
    add("resources", cmd_resources, "print per-layer mult-adds and parameter counts")
    add("gradcheck", cmd_gradcheck, "finite-difference check of all gradients")
    add("trace", cmd_trace, "print the layer-by-layer shape trace")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
