"""Command line entry point: `extract --spec <json>`."""

from __future__ import annotations

import argparse
import sys

from .spec import ExtractionSpec


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="extract",
        description="Dump layer-wise hidden states of a pretrained text or speech model "
                    "to the array+sidecar convention.")
    parser.add_argument("--spec", required=True, help="extraction spec JSON")
    args = parser.parse_args(argv)
    try:
        spec = ExtractionSpec.from_json(args.spec)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2
    try:
        if spec.mode == "text":
            from .text import extract_text

            written = extract_text(spec)
        else:
            from .speech import extract_speech

            written = extract_speech(spec)
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 3
    for layer, path in sorted(written.items()):
        print(f"layer {layer}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
