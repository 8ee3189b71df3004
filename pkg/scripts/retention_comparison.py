"""Exposed-unit retention: greedy propensity matching vs cardinality matching on an outlier instance.

Usage: python3 scripts/retention_comparison.py [OUT_DIR] [--seed N]
"""
import argparse
import json
import sys
from pathlib import Path

from cardmatch.cli import main as cli
from cardmatch.data import write_dataset
from cardmatch.synth import outlier_instance

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="runs/retention")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = outlier_instance(seed=args.seed)
    write_dataset(ds, out / "data.csv")
    (out / "study.json").write_text(json.dumps({
        "covariates": {"balance": list(ds.schema.names), "tolerance": 0.1},
    }, indent=2))
    code = cli(["baseline", "--data", str(out / "data.csv"), "--config", str(out / "study.json"),
                "--compare", "--out", str(out)])
    if code == 0:
        print((out / "retention.csv").read_text(), end="")
    sys.exit(code)
