"""Run the bundled scenario under both protocols and write traces, summaries
and plots to ``runs/comparison``.

    python3 scripts/run_comparison.py [--out DIR] [--override KEY=VALUE ...]
"""
import argparse
import sys

from resboc.cli import cmd_compare
from resboc.scenario import bundled


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(bundled()))
    ap.add_argument("--out", default="runs/comparison")
    ap.add_argument("--override", action="append", default=[])
    args = ap.parse_args()
    return cmd_compare(args.scenario, args.out, args.override, plots=True)


if __name__ == "__main__":
    sys.exit(main())
