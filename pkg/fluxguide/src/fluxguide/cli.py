"""Command line for building the toy dataset and training the model."""

from __future__ import annotations

import argparse
import json
import sys

from .data import ToyDataset, build_toy_dataset
from .losses import DEFAULT_LAMBDA
from .train import TrainConfig, train_toy


def cmd_build_data(args) -> int:
    s_dir = build_toy_dataset(args.out, n_tiles=args.tiles, seed=args.seed,
                              patch=args.patch, scale=args.scale)
    n = len(ToyDataset(s_dir, scale=args.scale))
    print(json.dumps({"dataset": str(s_dir), "samples": n}))
    return 0


def cmd_train(args) -> int:
    dataset = ToyDataset(args.data, scale=args.scale)
    train, val = dataset.split(args.train_split)
    cfg = TrainConfig(lam=args.lam, epochs=args.epochs, seed=args.seed,
                      eval_every=args.eval_every)
    result = train_toy(train, cfg, val_dataset=val, curves_path=args.curves)
    print(json.dumps({"final_eval": result.final_eval,
                      "last_loss": result.curves[-1]["loss"]}))
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fluxguide")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-data", help="build the toy dataset via skyflux")
    p.add_argument("--out", required=True)
    p.add_argument("--tiles", type=int, default=3)
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_data)

    p = sub.add_parser("train", help="train the toy model")
    p.add_argument("--data", required=True, help="s<scale> dataset directory")
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--train-split", type=int, default=16, dest="train_split")
    p.add_argument("--lambda", type=float, default=DEFAULT_LAMBDA, dest="lam")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--eval-every", type=int, default=0, dest="eval_every")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--curves", default=None)
    p.set_defaults(func=cmd_train)

    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
