"""Command line entry point: prepare, augment, train, eval, infer, opcount, stats.

Exit codes: 0 success, 1 configuration/usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import layers, model as M, tensor as T
from .audio import WavError, load_clip, write_wav
from .augment import AugmentConfig, augment_clip
from .checkpoint import CheckpointError, load_checkpoint
from .dataset import TASK_NAMES, DataError, DatasetManifest, load_split, make_task, scan_corpus
from .harness import NumericFailure, TrainConfig, evaluate, multi_seed, save_run, train
from .metrics import per_class_table
from .stats import t_test

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _echo(command: str, settings: dict) -> None:
    print(json.dumps({"command": command, **settings}, sort_keys=True, default=str))


def _summary_tuple(text: str) -> tuple[float, float, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected mean,std,n, got {text!r}")
    try:
        mean, std, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected mean,std,n, got {text!r}") from None
    return mean, std, n


def _model_config(preset: str, n_classes: int) -> M.ModelConfig:
    if preset == "toy":
        return M.ModelConfig.toy(n_classes=n_classes)
    return M.ModelConfig(n_classes=n_classes)


# -- subcommands -------------------------------------------------------------

def cmd_prepare(args) -> int:
    _echo("prepare", {"data_dir": args.data_dir, "version": args.version, "out": args.out})
    manifest = scan_corpus(args.data_dir, args.version)
    manifest.save(args.out)
    counts = manifest.counts()
    print(f"total={len(manifest.entries)} train={counts['train']} dev={counts['dev']} test={counts['test']}")
    for word, n in sorted(manifest.word_counts().items()):
        print(f"  {word}\t{n}")
    return EXIT_OK


def cmd_augment(args) -> int:
    config = AugmentConfig(copies=args.copies)
    _echo("augment", {"manifest": args.manifest, "out_dir": args.out_dir, "seed": args.seed,
                      "augment": config.to_dict()})
    manifest = DatasetManifest.load(args.manifest)
    out = Path(args.out_dir)
    written = 0
    for clip in load_split(manifest, "train"):
        for i in range(config.copies):
            aug = augment_clip(clip, config, args.seed, i)
            target = out / Path(clip.source_path).with_suffix("").as_posix()
            target = target.parent / f"{target.name}__aug{i}.wav"
            target.parent.mkdir(parents=True, exist_ok=True)
            write_wav(aug.samples, target)
            written += 1
    print(f"written={written}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    task = make_task(args.task, manifest.version)
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else (args.seed,)
    tc = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, weight_decay=args.weight_decay,
        dropout=args.dropout, patience=args.patience, lr_factor=args.lr_factor, seeds=seeds,
        augment=None if args.no_augment else AugmentConfig(),
    )
    mc = _model_config(args.model, task.n_classes)
    _echo("train", {"manifest": args.manifest, "task": task.name, "version": task.version, "out": args.out,
                    "train": tc.to_dict(), "model": mc.to_dict(), "threads": args.threads})
    out = Path(args.out)
    if len(seeds) > 1:
        result = multi_seed(mc, tc, manifest, task, out, workers=args.threads)
        print(f"test accuracy {result.cell} over seeds {list(seeds)}")
        return EXIT_OK
    ckpt, metrics = train(mc, tc, manifest, seeds[0], task, workers=args.threads)
    save_run(ckpt, metrics, out)
    print(f"best_epoch={metrics.best_epoch} dev_accuracy={metrics.best_dev_accuracy:.6f} "
          f"test_accuracy={metrics.test_accuracy:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(args.manifest)
    task_name = args.task or ckpt.meta.get("task")
    if task_name is None:
        raise UsageError("checkpoint does not record its task; pass --task")
    task = make_task(task_name, manifest.version)
    _echo("eval", {"checkpoint": args.checkpoint, "manifest": args.manifest, "split": args.split, "task": task.name})
    result = evaluate(ckpt, manifest, args.split, task)
    print(f"accuracy={result.accuracy:.6f} n={int(result.confusion.sum())}")
    table = per_class_table(result)
    if args.per_class_out:
        Path(args.per_class_out).write_text(table)
    else:
        print(table, end="")
    return EXIT_OK


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    names = ckpt.meta.get("class_names") or [str(i) for i in range(ckpt.config.n_classes)]
    _echo("infer", {"checkpoint": args.checkpoint, "files": args.wavs, "verbose": args.verbose})
    status = EXIT_OK
    for path in args.wavs:
        try:
            clip = load_clip(path)
        except (OSError, WavError, ValueError) as exc:
            print(f"{path}\terror\t{exc}", file=sys.stderr)
            status = EXIT_DATA
            continue
        logits = M.forward(ckpt.params, ckpt.config, clip.samples[None, None, :]).data
        probs = layers.softmax(logits.astype(np.float64))[0]
        top = int(np.argmax(probs))
        print(f"{path}\t{names[top]}\t{probs[top]:.6f}")
        if args.verbose:
            for name, p in zip(names, probs):
                print(f"  {name}\t{p:.6f}")
    return status


def cmd_opcount(args) -> int:
    _echo("opcount", {"length": args.length, "kernel": args.kernel,
                      "in_channels": args.in_channels, "out_channels": args.out_channels})
    counts = layers.opcount(args.length, args.kernel, args.in_channels, args.out_channels)
    measured = layers.measure_macs(args.length, args.kernel, args.in_channels, args.out_channels)
    print(f"regular={counts.regular} separable={counts.separable} ratio={counts.ratio:.6f}")
    print(f"measured_regular={measured[0]} measured_separable={measured[1]}")
    return EXIT_OK


def cmd_stats(args) -> int:
    _echo("stats", {"a": list(args.a), "b": list(args.b)})
    try:
        res = t_test(*args.a, *args.b)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"t={res.t:.4f} df={res.df} p={res.p:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="xception1d", description="Keyword spotting with Xception-1d.")
    parser.add_argument("--log-level", default="WARNING", help="logging level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="index a Speech Commands directory", formatter_class=fmt)
    p.add_argument("--data-dir", required=True, help="corpus root with word folders and list files")
    p.add_argument("--version", default="V2", choices=["V1", "V2"], help="dataset version")
    p.add_argument("--out", default="manifest.tsv", help="manifest output path")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("augment", help="write distorted copies of the train split", formatter_class=fmt)
    p.add_argument("--manifest", required=True, help="manifest from 'prepare'")
    p.add_argument("--out-dir", required=True, help="mirror directory for distorted WAVs")
    p.add_argument("--copies", type=int, default=5, help="distorted copies per clip")
    p.add_argument("--seed", type=int, default=0, help="augmentation seed")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a model (best dev epoch is kept)", formatter_class=fmt)
    p.add_argument("--manifest", required=True, help="manifest from 'prepare'")
    p.add_argument("--task", required=True, choices=TASK_NAMES, help="label scheme")
    p.add_argument("--seed", type=int, default=0, help="seed for init, shuffling, dropout and augmentation")
    p.add_argument("--seeds", default=None, help="comma-separated seeds for a multi-seed run")
    p.add_argument("--epochs", type=int, default=50, help="training epochs")
    p.add_argument("--batch-size", type=int, default=32, help="clips per batch")
    p.add_argument("--lr", type=float, default=1e-4, help="initial Adam learning rate")
    p.add_argument("--weight-decay", type=float, default=1e-3, help="decoupled weight decay")
    p.add_argument("--dropout", type=float, default=0.75, help="dropout before the dense layer")
    p.add_argument("--patience", type=int, default=4, help="epochs without dev improvement before halving")
    p.add_argument("--lr-factor", type=float, default=0.5, help="learning-rate reduction factor")
    p.add_argument("--no-augment", action="store_true", help="disable the 5x training augmentation")
    p.add_argument("--model", default="default", choices=["default", "toy"], help="architecture preset")
    p.add_argument("--threads", type=int, default=1, help="augmentation worker threads")
    p.add_argument("--out", default="run", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--manifest", required=True, help="manifest from 'prepare'")
    p.add_argument("--split", default="test", choices=["train", "dev", "test"], help="split to score")
    p.add_argument("--task", default=None, choices=TASK_NAMES, help="defaults to the checkpoint's task")
    p.add_argument("--per-class-out", default=None, help="write the per-class table here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify WAV files", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--verbose", action="store_true", help="print the full class distribution")
    p.add_argument("wavs", nargs="+", help="WAV files")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("opcount", help="regular vs separable convolution cost", formatter_class=fmt)
    p.add_argument("--length", type=int, default=100, help="sequence length L")
    p.add_argument("--kernel", type=int, default=9, help="depthwise kernel size S")
    p.add_argument("--in-channels", type=int, default=64, help="input channels")
    p.add_argument("--out-channels", type=int, default=64, help="output channels N")
    p.set_defaults(func=cmd_opcount)

    p = sub.add_parser("stats", help="two-sample t-test from summary statistics", formatter_class=fmt)
    p.add_argument("--a", type=_summary_tuple, required=True, help="group A as mean,std,n")
    p.add_argument("--b", type=_summary_tuple, required=True, help="group B as mean,std,n")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, M.InvalidConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, WavError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailure, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
