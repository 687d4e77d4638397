"""plotkit command line: path CSV in, figure out."""

from __future__ import annotations

import argparse
import sys

from plotkit import GROUPS, PathTableError, plot_paths


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="plotkit",
        description="Render a solution-path CSV into a per-coordinate figure")
    ap.add_argument("--csv", required=True, help="path CSV exported by the solver")
    ap.add_argument("--which", required=True, choices=GROUPS,
                    help="coordinate group to draw")
    ap.add_argument("--out", required=True, help="output image (png/pdf/svg)")
    args = ap.parse_args(argv)
    try:
        out = plot_paths(args.csv, args.which, args.out)
    except (PathTableError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
