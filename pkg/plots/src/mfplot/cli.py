"""Command line: plot <kind> --in <csv> [--summary <json>] --out <img>."""

from __future__ import annotations

import argparse
import sys

from mfplot.figures import KINDS, FigureSpec, render
from mfplot.io import SchemaError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot",
        description="Render figures from mean-field Langevin experiment reports.",
    )
    parser.add_argument("kind", choices=sorted(KINDS), help="figure kind")
    parser.add_argument("--in", dest="csv", required=True, help="input CSV report")
    parser.add_argument("--summary", default=None, help="summary JSON for annotations")
    parser.add_argument("--out", required=True, help="output image path (PNG and SVG written)")
    parser.add_argument("--title", default=None, help="optional figure title")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        result = render(FigureSpec(kind=args.kind, csv=args.csv, out=args.out,
                                   summary=args.summary, title=args.title))
    except (SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in result["written"]:
        print(f"wrote {path}")
    for name, value in sorted(result["annotations"].items()):
        print(f"annotation {name} = {value!r}")
    return 0


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
