"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .errors import ChenoneError

COMMANDS = {
    "lexicon": pipeline.cmd_lexicon,
    "synth": pipeline.cmd_synth,
    "align": pipeline.cmd_align,
    "stats": pipeline.cmd_stats,
    "tree": pipeline.cmd_tree,
    "train": pipeline.cmd_train,
    "decode": pipeline.cmd_decode,
    "score": pipeline.cmd_score,
    "ablate": pipeline.cmd_ablate,
    "run": pipeline.run_pipeline,
}

HELP = {
    "lexicon": "build the lexicon and unit inventory",
    "synth": "generate a synthetic corpus",
    "align": "flat start, CI training and forced alignment",
    "stats": "accumulate tri-context statistics from alignments",
    "tree": "grow the state-tying tree",
    "train": "retie and train the context-dependent model",
    "decode": "decode the test set",
    "score": "WER and tagged-segment CER",
    "ablate": "CD x PD x case ablation table",
    "run": "synth followed by every stage through score",
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [section] key = value lines")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--out", help="work directory")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="chenone", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def load_config(args):
    overrides = list(args.set)
    for key in ("seed", "jobs", "out"):
        value = getattr(args, key)
        if value is not None:
            overrides.append(f"run.{key}={value}")
    return pipeline.PipelineConfig.load(args.config, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if cfg.jobs < 1:
            raise ValueError("--jobs must be at least 1")
        result = COMMANDS[args.command](cfg)
    except ChenoneError as err:
        print(f"chenone {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"chenone {args.command}: {err}", file=sys.stderr)
        return 2
    if args.command in ("score", "run"):
        sys.stdout.write(result.to_text())
    elif args.command == "ablate":
        sys.stdout.write(pipeline.format_ablation(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
