"""cnn-labeler command line: finetune a model, then serve it.

    cnn-labeler finetune --data <class-folders> --out model.pt [--iterations N]
    cnn-labeler serve --model model.pt
"""

from __future__ import annotations

import argparse
import sys

from .finetune import finetune
from .model import LabelerModel
from .serve import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cnn-labeler", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("finetune", help="train the classification head on class folders")
    p.add_argument("--data", required=True, help="root directory, one sub-directory per class")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--crops-per-image", type=int, default=6)
    p.add_argument("--input-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", default=None, help="optional local backbone state-dict file")

    p = sub.add_parser("serve", help="speak the labeler wire protocol on stdin/stdout")
    p.add_argument("--model", required=True)

    args = parser.parse_args(argv)
    if args.command == "finetune":
        result = finetune(
            args.data,
            learning_rate=args.lr,
            iterations=args.iterations,
            batch_size=args.batch,
            crops_per_image=args.crops_per_image,
            input_size=args.input_size,
            seed=args.seed,
            weights_path=args.weights,
        )
        result.model.save(args.out)
        print(
            f"model saved to {args.out} (train {result.train_accuracy:.3f}, "
            f"validation {result.validation_accuracy:.3f}, test {result.test_accuracy:.3f})",
            file=sys.stderr,
        )
        return 0
    serve(LabelerModel.load(args.model))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
