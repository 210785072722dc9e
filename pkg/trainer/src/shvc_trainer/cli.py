"""Command line entry point: train a model and export its weight file."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .export import export_model, make_golden_vectors
from .model import ModelConfig, TorchShvc
from .train import TrainConfig, histogram_bpd, smooth_patches, train


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="shvc-train",
        description="train a hierarchical lossless-compression model")
    p.add_argument("--out", required=True, help="output weight file path")
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--mode", choices=("shvc", "arib"), default="shvc")
    p.add_argument("--split-s", type=int, default=2)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0,
                   help="initial-bits hinge penalty weight")
    p.add_argument("--use-f-op", action="store_true",
                   help="channel-first sub-block ordering (ablation)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", help="directory of .npy uint8 (C, H, W) patches;"
                   " synthetic smooth patches are used when omitted")
    p.add_argument("--patch-side", type=int, default=8)
    p.add_argument("--export-golden", metavar="PATH",
                   help="also write reference vectors for coder validation")
    p.add_argument("--log-every", type=int, default=50)
    return p


def load_dataset(args) -> np.ndarray:
    if args.data:
        files = sorted(Path(args.data).glob("*.npy"))
        if not files:
            raise SystemExit(f"no .npy patches under {args.data}")
        return np.stack([np.load(f) for f in files]).astype(np.uint8)
    return smooth_patches(512, side=args.patch_side, seed=args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = ModelConfig(L=args.levels, mode=args.mode, split_s=args.split_s,
                         seed=args.seed)
    data = load_dataset(args)
    split = max(1, data.shape[0] // 8)
    train_set, held_out = data[split:], data[:split]

    model = TorchShvc(config)
    tc = TrainConfig(steps=args.steps, batch_size=args.batch_size,
                     lam=args.lam, seed=args.seed, use_f_op=args.use_f_op)
    history = train(model, train_set, tc, log_every=args.log_every)
    print(f"final loss {history[-1]:.4f} bits/dim "
          f"(histogram baseline {histogram_bpd(train_set, held_out):.4f})")

    Path(args.out).write_bytes(export_model(model))
    print(f"wrote {args.out}")
    if args.export_golden:
        Path(args.export_golden).write_bytes(
            make_golden_vectors(model, seed=args.seed))
        print(f"wrote {args.export_golden}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
