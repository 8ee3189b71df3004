"""Synthetic replica of the district study: simulate, match, pair and test outcomes.

Usage: python3 scripts/replicate_scenario.py [OUT_DIR] [--seed N]
"""
import argparse
import sys
from pathlib import Path

from cardmatch.cli import main as cli


def run(out: Path, seed: int) -> int:
    data_dir = out / "data"
    steps = [
        ["simulate", "--seed", str(seed), "--out", str(data_dir)],
        ["match", "--data", str(data_dir / "data.csv"), "--config", str(data_dir / "study.json"),
         "--out", str(out / "match")],
        ["analyze", "--data", str(data_dir / "data.csv"), "--config", str(data_dir / "study.json"),
         "--pairs", str(out / "match" / "pairs.csv"), "--out", str(out / "match" / "outcome.json")],
        ["baseline", "--data", str(data_dir / "data.csv"), "--config", str(data_dir / "study.json"),
         "--respect-strata", "--compare", "--out", str(out / "baseline")],
    ]
    for argv in steps:
        print("$ cardmatch " + " ".join(argv), flush=True)
        code = cli(argv)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="runs/scenario")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sys.exit(run(Path(args.out), args.seed))
