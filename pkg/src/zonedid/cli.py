"""Command line entry point: ``zonedid <task> --config run.yaml``."""

from __future__ import annotations

import argparse
import logging
import sys

from .pipeline import TASKS, ConfigError, RunConfig, run

EXIT_OK, EXIT_TASK_FAILED, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zonedid", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*TASKS, "run"):
        help_ = "run every task in the config" if name == "run" else f"run the {name} task"
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = RunConfig.load(args.config, out=args.out, seed=args.seed)
        report = run(cfg, None if args.command == "run" else [args.command])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(report.text())
    return EXIT_OK if report.ok else EXIT_TASK_FAILED


if __name__ == "__main__":
    sys.exit(main())
