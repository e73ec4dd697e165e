"""Command-line entry point: ``reclra {train,eval,export-latents,inspect}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..checkpoint import load_checkpoint
from ..data import Dataset, Preprocessor, load_cifar10, load_directory
from ..errors import ReclraError
from .config import load_config
from .metrics import confusion_metrics, evaluate, export_latents
from .runner import train


def _load_dataset(spec: str, split_name: str) -> Dataset:
    path = Path(spec)
    if path.is_dir():
        return load_directory(path, split_name)
    return load_cifar10([Path(p) for p in spec.split(",")])


def _restore(checkpoint: str, dataset: str, split_name: str):
    ckpt = load_checkpoint(checkpoint)
    ds = _load_dataset(dataset, split_name)
    pre = Preprocessor.from_records(ckpt.meta, ckpt.extras)
    return ckpt, pre.apply(ds)


def cmd_train(args) -> int:
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    for flag in ("seed", "workers", "engine"):
        value = getattr(args, flag)
        if value is not None:
            overrides[flag] = str(value)
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    config = load_config(args.config, overrides)
    result = train(config)
    print(f"metrics: {result.metrics_csv}")
    print(f"best checkpoint: {result.best_checkpoint} (epoch {result.best_epoch})")
    if result.test is not None:
        for k, err in result.test.topk_error.items():
            print(f"test top-{k} error: {err:.4%}")
    return 0


def cmd_eval(args) -> int:
    ckpt, ds = _restore(args.checkpoint, args.dataset, args.split)
    ks = [int(k) for k in args.k.split(",")]
    result = evaluate(ckpt.net, ds, ks, workers=args.workers or 1)
    report = confusion_metrics(result.confusion)
    out = {
        "samples": result.count,
        "accuracy": result.accuracy,
        "loss": result.loss,
        "topk_error": {str(k): v for k, v in result.topk_error.items()},
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "macro_f1": report.macro_f1,
        "micro_f1": report.micro_f1,
    }
    print(json.dumps(out, indent=2))
    print(report.table())
    if args.out_dir:
        outdir = Path(args.out_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "eval.json").write_text(json.dumps(out, indent=2) + "\n")
        np.savetxt(outdir / "confusion.csv", result.confusion, fmt="%d", delimiter=",")
    return 0


def cmd_export(args) -> int:
    ckpt, ds = _restore(args.checkpoint, args.dataset, args.split)
    target = Path(args.output) if args.output else Path(args.out_dir or ".") / f"latents_layer{args.layer}.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    export_latents(ckpt.net, ds, args.layer, target)
    print(target)
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    net = ckpt.net
    print(f"input shape (channels, map size): {net.input_shape}")
    for layer, spec in enumerate(net.specs, start=1):
        extra = f" masks={spec.masks}" if spec.kind == "perturbative" else ""
        print(f"layer {layer}: {spec.kind} width={net.widths[layer]} "
              f"activation={spec.activation}{extra}")
    print(f"residual gap: {net.gap}")
    print("error wiring: " + ", ".join(f"{j}->{i}" for j, i in net.wiring))
    total = 0
    for name, arr in net.params.items():
        total += arr.size
        print(f"  {name:10s} {str(arr.shape):14s} |.|={np.linalg.norm(arr):.6g}")
    print(f"trainable values: {total}")
    if ckpt.meta:
        print(f"metadata: {json.dumps(ckpt.meta, sort_keys=True)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reclra", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network from a key=value config file")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--engine", choices=("reclra", "backprop"))
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.set_defaults(func=cmd_train)

    def data_args(q):
        q.add_argument("checkpoint")
        q.add_argument("dataset", help="dataset directory, or comma-separated CIFAR-10 .bin files")
        q.add_argument("--split", choices=("train", "test"), default="test")
        q.add_argument("--workers", type=int)
        q.add_argument("--out-dir")
        q.add_argument("--seed", type=int, help="accepted for symmetry; evaluation is deterministic")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    data_args(p)
    p.add_argument("--k", default="1,5", help="comma-separated top-k list")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-latents", help="write one layer's activities as CSV")
    data_args(p)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("inspect", help="describe a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ReclraError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
