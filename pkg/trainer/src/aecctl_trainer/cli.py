"""Trainer command line: train a controller or verify the gradients."""

from __future__ import annotations

import argparse
import sys

from aecctl_trainer.config import LOSSES, TrainConfig
from aecctl_trainer.gradcheck import gradient_check, tiny_config
from aecctl_trainer.train import TrainingDiverged, train


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="aecctl-train")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train and export a weight bundle")
    p_train.add_argument("config", help="training config JSON")
    p_train.add_argument("--output", default="bundle.json")
    p_train.add_argument("--log", default=None, help="history CSV path")

    p_check = sub.add_parser("gradcheck",
                             help="finite-difference gradient verification")
    p_check.add_argument("--loss", default="all",
                         choices=("all",) + LOSSES)
    p_check.add_argument("--eps", type=float, default=1e-4)

    args = parser.parse_args(argv)
    if args.command == "train":
        try:
            cfg = TrainConfig.from_json(args.config)
            summary = train(cfg, args.output, history_path=args.log)
        except (OSError, ValueError, KeyError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        except TrainingDiverged as exc:
            print(f"training diverged: {exc}", file=sys.stderr)
            return 2
        print(f"best epoch {summary['best_epoch']} "
              f"(val {summary['best_val_loss']:.6g}); "
              f"bundle written to {summary['bundle']}")
        return 0

    losses = LOSSES if args.loss == "all" else (args.loss,)
    worst = 0.0
    for loss in losses:
        err = gradient_check(tiny_config(loss), eps=args.eps)
        print(f"{loss}: max relative gradient error {err:.3e}")
        worst = max(worst, err)
    return 0 if worst <= 1e-3 else 2


if __name__ == "__main__":
    sys.exit(main())
