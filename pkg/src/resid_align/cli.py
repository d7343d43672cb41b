"""Command line entry point: `resid-align <subcommand> --config <path>`.

Exit codes: 0 ok, 2 config error, 3 data validation error, 4 compute error.
"""

from __future__ import annotations

import argparse
import sys

from .data_model import ConfigError, ExperimentConfig, FormatError, ValidationError
from .pipeline import SUBCOMMANDS, PipelineError, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_COMPUTE = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resid-align",
        description="Feature-removal brain-alignment pipeline (features, removal, "
                    "encoding, ceiling, normalization, statistics, report).")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="path to the experiment JSON")
    parser.add_argument("--workers", type=int, default=None, help="parallel graph nodes")
    parser.add_argument("--seed", type=int, default=None, help="override rng_seed")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field (dotted keys reach subsections)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ExperimentConfig.from_json(args.config)
        overrides = list(args.override)
        if args.seed is not None:
            overrides.append(f"rng_seed={args.seed}")
        if overrides:
            config = config.apply_overrides(overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        result = run(config, args.subcommand, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, FormatError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PipelineError as exc:
        cause = exc.cause
        if isinstance(cause, (ValidationError, FormatError)):
            print(f"validation error in {exc.node_id}: {cause}", file=sys.stderr)
            return EXIT_VALIDATION
        print(f"compute error in {exc.node_id}: {cause}", file=sys.stderr)
        return EXIT_COMPUTE

    print(f"{args.subcommand}: executed {len(result.executed)} node(s), "
          f"{len(result.skipped)} cached")
    for nid in result.executed:
        print(f"  ran {nid}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
