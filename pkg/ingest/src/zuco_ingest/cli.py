"""Command line: inspect an upstream pickle or convert it."""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .convert import convert
from .upstream import UpstreamError, inspect_upstream


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="zuco-ingest",
        description="Inspect or convert upstream word-level EEG pickles.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="summarize structure and flag deviations")
    p.add_argument("path")

    p = sub.add_parser("convert", help="write the portable dataset format")
    p.add_argument("path_in")
    p.add_argument("path_out")
    p.add_argument("--channels", type=int, default=105)
    p.add_argument("--sampling-rate", type=float, default=500.0)
    p.add_argument("--report", default="", help="conversion report path (JSON)")

    args = parser.parse_args(argv)
    try:
        if args.command == "inspect":
            summary = inspect_upstream(args.path)
            print(json.dumps(summary.to_dict(), indent=2))
            return 0
        report = convert(
            args.path_in,
            args.path_out,
            channels=args.channels,
            sampling_rate=args.sampling_rate,
            report_path=args.report or None,
        )
        print(
            json.dumps(
                {
                    "output": args.path_out,
                    "sentences_written": report.sentences_written,
                    "words_written": report.words_written,
                    "skipped": len(report.skipped),
                }
            )
        )
        return 0
    except UpstreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
