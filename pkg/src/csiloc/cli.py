"""Command-line entry point: ``csiloc <subcommand> --config FILE [--seed N]``.

Exit codes: 0 success, 2 config error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import Config, ConfigError
from .errors import ParameterError
from .pipeline import Experiment, Settings, StageError, report_table

EXIT_CONFIG = 2
EXIT_STAGE = 3

STAGES = {
    "gen-scene": Experiment.gen_scene,
    "build-map": Experiment.build_map,
    "split": Experiment.split,
    "train-sln": Experiment.train_sln,
    "infer-slot": Experiment.infer_slot,
    "train-fn": Experiment.train_fn,
    "evaluate": Experiment.evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csiloc", description="CSI fingerprint localization experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config's seed")
        p.add_argument("--output-dir", default=None, help="artifact directory (default: config output_dir)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "evaluate":
            p.add_argument("--all", action="store_true", help="run every stage from scene to reports")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = Settings.from_config(Config.load(args.config), args.output_dir, args.seed)
        settings.eval_locations
    except (ConfigError, ParameterError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        exp = Experiment(settings)
        if args.command == "report":
            print(report_table(settings.output_dir))
        elif args.command == "evaluate" and args.all:
            exp.run_all()
            print(report_table(settings.output_dir))
        else:
            STAGES[args.command](exp)
            if args.command == "evaluate":
                print(report_table(settings.output_dir))
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
