"""Command line entry point: ``dfbk train|translate|evaluate|ablate``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from ._validation import DFBKError
from .config import ExperimentConfig, load_config
from .pipeline import cmd_ablate, cmd_evaluate, cmd_train, cmd_translate, format_table

log = logging.getLogger("dfbk")


def _config_from_args(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    return config.with_flags(
        use_dfb=False if args.no_dfb else None,
        use_kg=False if args.no_kg else None,
        seed=args.seed,
        out_dir=args.out,
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="dfbk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--no-dfb", action="store_true", help="disable frequency balance blocks")
    common.add_argument("--no-kg", action="store_true", help="disable knowledge guidance")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("train", parents=[common], help="train a denoiser")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")

    p = sub.add_parser("translate", parents=[common], help="translate source images")
    p.add_argument("--checkpoint", help="model checkpoint (default: <config out_dir>/model.pt)")
    p.add_argument("--input", help="directory of <id>_src.png (optionally <id>_tgt.png)")
    p.add_argument("--no-heatmaps", action="store_true")

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against targets")
    p.add_argument("--pred", required=True, help="directory of <id>_pred.png")
    p.add_argument("--truth", required=True, help="directory of <id>_tgt.png")

    sub.add_parser("ablate", parents=[common], help="run the four-way DFB/KG ablation")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "train":
            run_dir = cmd_train(_config_from_args(args), resume=args.resume)
            print(run_dir)
        elif args.command == "translate":
            if args.checkpoint:
                checkpoint = Path(args.checkpoint)
            else:
                checkpoint = Path(_config_from_args(args).out_dir) / "model.pt"
            out = args.out or str(checkpoint.parent / "translate")
            print(cmd_translate(checkpoint, out, args.input, args.seed, not args.no_heatmaps))
        elif args.command == "evaluate":
            report = cmd_evaluate(args.pred, args.truth, args.out)
            print(json.dumps(report.summary(), indent=2, sort_keys=True))
        elif args.command == "ablate":
            rows = cmd_ablate(_config_from_args(args))
            print(format_table(rows), end="")
    except DFBKError as exc:
        print(f"dfbk {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
