"""Command-line entry point wiring the pipeline stages into subcommands."""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import ConfigError, load_config

COMMANDS = {
    "synthesize": pipeline.run_synthesize,
    "train": pipeline.run_train,
    "infer": pipeline.run_infer,
    "refine": pipeline.run_refine,
    "select": pipeline.run_select,
    "ground": pipeline.run_ground,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmnerkit",
        description="Grounded multimodal NER pipeline: train, refine, ground, eval.",
    )
    parser.add_argument("command",
                        choices=sorted(COMMANDS) + ["eval", "run-all"],
                        help="pipeline stage to run")
    parser.add_argument("--config", required=True, help="pipeline config JSON file")
    parser.add_argument("--out-dir", help="override paths.out_dir")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="PATH=VALUE",
                        help="override a config field, e.g. --set stages.stage2=false")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = list(args.overrides)
    if args.out_dir:
        overrides.append(f"paths.out_dir={args.out_dir}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")

    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "run-all":
            summary = pipeline.run_all(cfg)
            report = summary.report
        elif args.command == "eval":
            report = pipeline.run_eval(cfg)
        else:
            path = COMMANDS[args.command](cfg)
            print(f"wrote {path}")
            return 0
    except (pipeline.StageDependencyError, pipeline.ArtifactMismatchError,
            ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(f"variant: {report.variant}")
    print(f"P={report.precision:.4f} R={report.recall:.4f} F1={report.f1:.4f} "
          f"(gold={report.gold} pred={report.pred} correct={report.correct})")
    if cfg.min_f1 is not None and report.f1 < cfg.min_f1:
        print(f"F1 {report.f1:.4f} below gate {cfg.min_f1:.4f}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
