"""Scale benchmark on synthetic instances (1e3, 1e4, 1e5 units by default).

Usage: python3 scripts/run_benchmark.py [OUT_DIR] [--sizes 1000 10000 100000]
"""
import argparse
import sys

from cardmatch.cli import main as cli

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="runs/bench")
    ap.add_argument("--sizes", nargs="+", default=["1000", "10000", "100000"])
    ap.add_argument("--seed", default="0")
    args = ap.parse_args()
    sys.exit(cli(["bench", "--sizes", *args.sizes, "--seed", args.seed, "--out", args.out]))
