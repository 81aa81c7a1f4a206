#!/usr/bin/env python3
"""Soft-sensor benchmark on the debutanizer column dataset.

Expects the public file with 2394 rows of 7 process variables plus the butane
content (comma- or whitespace-separated, header optional). Trains on samples
1-1500 and tests on the rest, streaming test windows of 40 samples through
the error-interval driver for the adaptive variants.

    python scripts/run_debutanizer.py --data data/debutanizer.csv
"""

import argparse
import os

import numpy as np

from sorscn.experiment import ExperimentConfig, compare_variants, write_report

EXPECTED_SHAPE = (2394, 8)
COLUMNS = ["u1", "u2", "u3", "u4", "u5", "u6", "u7", "y"]


def to_headered_csv(raw_path: str, out_path: str) -> str:
    """Normalize whichever layout the dataset shipped in to a headered CSV."""
    with open(raw_path) as fh:
        first = fh.readline()
    delimiter = "," if "," in first else None
    try:
        float(first.replace(",", " ").split()[0])
        skip = 0
    except (ValueError, IndexError):
        skip = 1
    table = np.loadtxt(raw_path, delimiter=delimiter, skiprows=skip)
    if table.shape != EXPECTED_SHAPE:
        raise SystemExit(
            f"{raw_path}: expected {EXPECTED_SHAPE[0]} rows x {EXPECTED_SHAPE[1]} "
            f"columns (u1..u7, y), found {table.shape}"
        )
    with open(out_path, "w") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        for row in table:
            fh.write(",".join(f"{v:.10g}" for v in row) + "\n")
    return out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data", required=True, help="path to the raw dataset file")
    parser.add_argument("--variants", nargs="+", default=["esn", "rscn", "sorscn1", "sorscn2"])
    parser.add_argument("--trials", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-blocks", type=int, default=30)
    parser.add_argument("--block-size", type=int, default=10)
    parser.add_argument("--out", default="results/debutanizer")
    args = parser.parse_args(argv)

    os.makedirs(args.out, exist_ok=True)
    csv_path = to_headered_csv(args.data, os.path.join(args.out, "debutanizer.csv"))
    cfg = ExperimentConfig.from_dict(
        {
            "dataset": {
                "source": csv_path,
                "schema": {name: ("target" if name == "y" else "input") for name in COLUMNS},
                "train_end": 1500,
                "washout": 100,
                "normalization": "minmax",
            },
            "model": {
                "max_blocks": args.max_blocks,
                "block_size": args.block_size,
                "window_size": 40,
            },
            "run": {"trials": args.trials, "base_seed": args.seed},
        }
    )
    reports = compare_variants(cfg, variants=tuple(args.variants))
    for name, report in reports.items():
        agg = report.aggregates["testing_nrmse"]
        nodes = report.aggregates.get("n_nodes")
        print(
            f"{name:>8}: testing NRMSE {agg['mean']:.4f} +/- {agg['std']:.4f}"
            + (f", {nodes['mean']:.0f} nodes" if nodes else "")
        )
        write_report(report, args.out, name=f"report_{name}")
    print(f"reports written to {args.out}/")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
