"""Command line wrapper.

    serplot --in results_tau64.csv:label=tau=64 --in results_tau16.csv \
        --series SERu,SERi --out fig.png [--title "..."]

Each --in takes a CSV path with an optional :label=... suffix; --series
selects which columns of every file are drawn.
"""
from __future__ import annotations

import argparse
import sys

from . import SERIES_COLUMNS, CurveSpec, plot

__all__ = ["main"]


def _parse_input(text: str) -> tuple[str, str]:
    """Split 'path[:label=LABEL]' into (path, label)."""
    path, sep, rest = text.partition(":label=")
    return (path, rest) if sep else (text, "")


def _parse_series(text: str) -> list[str]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    for name in names:
        if name not in SERIES_COLUMNS:
            raise argparse.ArgumentTypeError(
                f"unknown series {name!r}; choose from {','.join(SERIES_COLUMNS)}"
            )
    if not names:
        raise argparse.ArgumentTypeError("at least one series required")
    return names


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="serplot")
    parser.add_argument(
        "--in",
        dest="inputs",
        action="append",
        required=True,
        type=_parse_input,
        metavar="CSV[:label=LABEL]",
    )
    parser.add_argument("--series", type=_parse_series, default=list(SERIES_COLUMNS))
    parser.add_argument("--out", required=True)
    parser.add_argument("--title", default="")
    args = parser.parse_args(argv)

    curves = [
        CurveSpec(csv_path=path, label=label, which=series)
        for path, label in args.inputs
        for series in args.series
    ]
    try:
        plot(curves, args.out, args.title)
    except (ValueError, OSError) as exc:
        print(f"serplot: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} ({len(curves)} series)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
