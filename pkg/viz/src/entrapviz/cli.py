"""Command line for figure generation from simulator outputs."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FIGURE_KINDS, FigureSpec, MissingColumn, plot


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entrapviz",
        description="Render figures from an entrapsim trace/summary pair",
    )
    parser.add_argument("--trace", required=True, help="path to trace.csv")
    parser.add_argument("--summary", default=None, help="path to summary.json (optional)")
    parser.add_argument("--kind", required=True, choices=list(FIGURE_KINDS) + ["all"])
    parser.add_argument("--out", required=True,
                        help="output image path (directory when --kind all)")
    parser.add_argument("--dpi", type=int, default=130)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    kinds = FIGURE_KINDS if args.kind == "all" else (args.kind,)
    try:
        for kind in kinds:
            if args.kind == "all":
                out = Path(args.out) / f"{kind}.png"
            else:
                out = Path(args.out)
            spec = FigureSpec(kind=kind, trace=Path(args.trace), out=out,
                              summary=Path(args.summary) if args.summary else None,
                              dpi=args.dpi)
            print(f"wrote {plot(spec)}")
    except (MissingColumn, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
