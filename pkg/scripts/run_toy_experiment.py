#!/usr/bin/env python3
"""Run the full toy pipeline end to end and print the resulting metrics.

Equivalent to `ncis run-all` followed by a peek at metrics.csv; handy for a
quick sanity run after changes:

    python scripts/run_toy_experiment.py --out /tmp/ncis-demo --seed 7
"""

import argparse
import sys
from pathlib import Path

from ncis.artifacts import load_metrics_csv
from ncis.config import RunConfig, load_config
from ncis.errors import NcisError
from ncis.pipeline import run_pipeline


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None, help="key = value configuration file")
    parser.add_argument("--out", default="ncis-out", help="artifact directory")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        run_pipeline(cfg, args.out, log=print)
    except NcisError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    print()
    print(f"{'dataset':<8} {'method':<8} {'fpr95':>8} {'auroc':>8} {'accuracy':>9}")
    for dataset, method, fpr, auc, acc in load_metrics_csv(Path(args.out) / "metrics.csv"):
        print(f"{dataset:<8} {method:<8} {fpr:>8.4f} {auc:>8.4f} {acc:>9.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
