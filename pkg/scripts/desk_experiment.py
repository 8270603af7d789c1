#!/usr/bin/env python3
"""End-to-end desk-scale experiment: synthesize, train, evaluate, report.

Runs entirely in memory (no WAV round trip) and prints the per-epoch curve,
the confusion matrix and the metrics table. ~1 minute on a laptop core.

Usage: python scripts/desk_experiment.py [--epochs N] [--seed S] [--out DIR]
"""

import argparse
import sys
from pathlib import Path

from atcnn import optim
from atcnn.audio import default_synth_spec, frame_segment, split_dataset, synth_dataset
from atcnn.checkpoint import save_checkpoint
from atcnn.metrics import confusion, format_confusion, format_metrics_table, metrics
from atcnn.model import build_model, desk_profile


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default=None, help="optionally save checkpoint + stats here")
    args = parser.parse_args()

    cfg = desk_profile()
    spec = default_synth_spec(sample_rate=cfg.sample_rate, counts=(20, 20, 20),
                              seed=args.seed)
    segments = synth_dataset(spec)
    frames = [frame_segment(s.samples, cfg, segment_id=s.segment_id, label=s.label)
              for s in segments]
    train_fs, test_fs = split_dataset(frames, fraction=0.8, seed=args.seed)
    xs, ys = optim.stack_dataset(train_fs)
    txs, tys = optim.stack_dataset(test_fs)
    print(f"{len(train_fs)} train / {len(test_fs)} test segments, "
          f"{cfg.frames_per_segment} frames of {cfg.frame_length} samples each")

    model = build_model(cfg, seed=args.seed)
    print(f"model: {model.param_count()} parameters")
    print("epoch\tloss\ttrain_acc\ttest_acc\tseconds")
    history = optim.train(
        model, xs, ys, txs, tys, epochs=args.epochs, batch_size=8, seed=args.seed,
        log=lambda s: print(f"{s.epoch}\t{s.loss:.4f}\t{s.train_accuracy:.3f}"
                            f"\t{s.eval_accuracy:.3f}\t{s.seconds:.1f}"))

    preds = model.predict_batch(txs)
    names = tuple(c.name for c in spec.classes)
    cm = confusion(preds, tys, cfg.class_count, names)
    print()
    print(format_confusion(cm))
    print()
    print(format_metrics_table(metrics(cm)))

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out / "desk.ckpt", seed=args.seed,
                        epoch=history[-1].epoch)
        (out / "stats.tsv").write_text(
            "epoch\tloss\ttrain_acc\ttest_acc\tseconds\n" + "\n".join(
                f"{s.epoch}\t{s.loss:.6f}\t{s.train_accuracy:.4f}"
                f"\t{s.eval_accuracy:.4f}\t{s.seconds:.2f}" for s in history) + "\n")
        print(f"\nwrote {out / 'desk.ckpt'} and {out / 'stats.tsv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
