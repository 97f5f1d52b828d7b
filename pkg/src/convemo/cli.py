"""Command-line interface: train, eval, gradcheck, synth, ablate.

Metrics are emitted as line-delimited JSON records; training logs go to
--log (a JSONL file) or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from .autodiff import finite_diff_check
from .config import TrainConfig
from .data import load_dataset, split_dataset, synth_generate, write_dataset
from .model import EmotionModel
from .trainer import evaluate, load_checkpoint, save_checkpoint, train

ABLATION_FLAGS = (
    "disable_decoupler",
    "disable_shared_branch",
    "disable_private_branch",
    "disable_transformer_fusion",
)


def _add_synth_options(parser):
    group = parser.add_argument_group("synthetic data")
    group.add_argument("--conversations", type=int, default=8)
    group.add_argument("--max-len", type=int, default=6)
    group.add_argument("--classes", type=int, default=4)
    group.add_argument("--speakers", type=int, default=2)
    group.add_argument("--dims", default="16,12,12", help="comma-separated d_t,d_a,d_v")
    group.add_argument("--seed", type=int, default=0, help="generator seed")


def _add_data_source(parser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", help="dataset file path")
    source.add_argument("--synth", action="store_true", help="generate a synthetic dataset")
    _add_synth_options(parser)


def _parse_dims(text):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"--dims wants three integers, got {text!r}")
    return tuple(parts)


def _resolve_dataset(args):
    if getattr(args, "synth", False):
        return synth_generate(
            args.conversations,
            args.max_len,
            args.classes,
            args.speakers,
            _parse_dims(args.dims),
            seed=args.seed,
        )
    return load_dataset(args.data)


def _load_config(args):
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    return config.validate()


def _emit(record, stream=None):
    (stream or sys.stdout).write(json.dumps(record, sort_keys=True) + "\n")


def cmd_synth(args):
    dataset = synth_generate(
        args.conversations,
        args.max_len,
        args.classes,
        args.speakers,
        _parse_dims(args.dims),
        seed=args.seed,
    )
    write_dataset(dataset, args.out)
    _emit(
        {
            "written": args.out,
            "conversations": len(dataset),
            "utterances": dataset.total_utterances,
        }
    )
    return 0


def cmd_train(args):
    config = _load_config(args)
    dataset = _resolve_dataset(args)
    checkpoint, log = train(config, dataset)
    log_stream = open(args.log, "w", encoding="utf-8") if args.log else sys.stdout
    try:
        for record in log:
            _emit(record, log_stream)
    finally:
        if args.log:
            log_stream.close()
    save_checkpoint(checkpoint, args.out)
    result = evaluate(checkpoint, dataset)
    _emit({"step": checkpoint.step, "split": "train", "accuracy": result.accuracy, "wf1": result.wf1})
    return 0


def cmd_eval(args):
    checkpoint = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    result = evaluate(checkpoint, dataset)
    _emit(
        {
            "split": "eval",
            "accuracy": result.accuracy,
            "wf1": result.wf1,
            "per_class_f1": [float(v) for v in result.per_class_f1],
            "confusion": result.confusion.tolist(),
        }
    )
    return 0


def cmd_gradcheck(args):
    config = _load_config(args)
    dataset = synth_generate(2, 4, 4, 2, (16, 12, 12), seed=config.seed)
    model = EmotionModel.for_dataset(config, dataset)
    started = time.time()
    error = finite_diff_check(
        lambda: model.dataset_loss(dataset),
        model.params.tensors(),
        h=args.h,
        n_samples=args.samples,
        seed=config.seed,
    )
    error = float(error)
    passed = bool(error < args.tolerance)
    _emit(
        {
            "max_relative_error": error,
            "tolerance": args.tolerance,
            "h": args.h,
            "samples": args.samples,
            "seconds": round(time.time() - started, 2),
            "passed": passed,
        }
    )
    return 0 if passed else 1


def cmd_ablate(args):
    config = _load_config(args)
    for flag in args.flag:
        if flag not in ABLATION_FLAGS:
            raise SystemExit(f"unknown ablation flag {flag!r}; choose from {', '.join(ABLATION_FLAGS)}")
        setattr(config, flag, True)
    config.validate()
    dataset = _resolve_dataset(args)
    train_set, held_out = split_dataset(dataset, args.train_frac, seed=config.seed)
    checkpoint, _ = train(config, train_set)
    result = evaluate(checkpoint, held_out)
    _emit(
        {
            "flags": sorted(args.flag),
            "steps": checkpoint.step,
            "split": "held_out",
            "accuracy": result.accuracy,
            "wf1": result.wf1,
        }
    )
    if args.out:
        save_checkpoint(checkpoint, args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="convemo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a synthetic dataset file")
    p_synth.add_argument("--out", required=True)
    _add_synth_options(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train a model and save a checkpoint")
    p_train.add_argument("--config", help="key=value config file; defaults used when omitted")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--log", help="JSONL metrics log path (default stdout)")
    _add_data_source(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p_grad.add_argument("--config", help="key=value config file")
    p_grad.add_argument("--tolerance", type=float, default=1e-5)
    p_grad.add_argument("--samples", type=int, default=200)
    p_grad.add_argument("--h", type=float, default=1e-6)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_abl = sub.add_parser("ablate", help="train with ablation flags and score a held-out split")
    p_abl.add_argument("--flag", action="append", default=[], help="ablation flag; repeatable")
    p_abl.add_argument("--config", help="key=value config file")
    p_abl.add_argument("--train-frac", type=float, default=0.75)
    p_abl.add_argument("--out", help="optional checkpoint output path")
    _add_data_source(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
