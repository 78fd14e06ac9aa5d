"""Command line for training and inference on toolkit-exported files."""

from __future__ import annotations

import argparse
import sys

from .losses import LossWeights
from .net import NetConfig
from .train import TrainConfig, train_from_files


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsmnet-trainer")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train", help="train on a .qpatch dataset")
    p.add_argument("--data", required=True, help=".qpatch dataset")
    p.add_argument("--kernel", required=True,
                   help="dipole kernel .qvol exported by the toolkit")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--paper-scale", action="store_true",
                   help="use the full-width channel preset")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--lr0", type=float, default=1e-3)
    p.add_argument("--decay-rate", type=float, default=0.95)
    p.add_argument("--weights", default="1,1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="reconstruct a field .qvol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--mask")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)
    return parser


def cmd_train(args) -> int:
    w = [float(t) for t in args.weights.split(",")]
    if len(w) != 3:
        raise ValueError("--weights expects three comma-separated values")
    net_cfg = NetConfig.paper_scale() if args.paper_scale \
        else NetConfig(base_channels=args.base_channels)
    cfg = TrainConfig(lr0=args.lr0, decay_rate=args.decay_rate,
                      batch_size=args.batch_size, epochs=args.epochs,
                      max_steps=args.max_steps,
                      weights=LossWeights(*w), seed=args.seed)
    log = train_from_files(args.data, args.kernel, args.out_dir,
                           net_cfg=net_cfg, cfg=cfg)
    print(f"trained {len(log)} steps; final total loss {log[-1]['total']:.6g}")
    return 0


def cmd_infer(args) -> int:
    from .infer import infer_file

    infer_file(args.checkpoint, args.field, args.out, args.mask)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
