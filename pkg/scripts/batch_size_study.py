#!/usr/bin/env python3
"""Relative training-time comparison across batch sizes (event task).

Retrains the configured model at each batch size and writes
sweep_batch.csv with wall-clock seconds and times relative to the first
entry.  Timing is machine-relative; only the trend is meaningful.

Usage: python scripts/batch_size_study.py [--config potsdam-desk]
                                          [--batches 50,150,250,400]
"""

import argparse
import sys

from gridfault.cli import main as gridfault


def run(argv):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="potsdam-desk")
    parser.add_argument("--out", default="runs/batch-study")
    parser.add_argument("--batches", default="50,150,250,400")
    args = parser.parse_args(argv)
    return gridfault([
        "sweep", "--config", args.config, "--out", args.out,
        "--sweep", f"batch={args.batches}",
    ])


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
