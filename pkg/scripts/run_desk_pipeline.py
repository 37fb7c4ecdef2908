#!/usr/bin/env python3
"""End-to-end desk experiment: generate, train all tasks, transfer, evaluate.

Usage: python scripts/run_desk_pipeline.py [--config potsdam-desk] [--out DIR]
"""

import argparse
import sys

from gridfault.cli import main as gridfault


def run(argv):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="potsdam-desk")
    parser.add_argument("--out", default="runs/potsdam-desk")
    args = parser.parse_args(argv)
    base = ["--config", args.config, "--out", args.out]

    steps = [["generate", *base]]
    steps += [["train", *base, "--task", task]
              for task in ("event", "type", "phase", "location")]
    steps += [["transfer", *base], ["evaluate", *base]]
    for step in steps:
        print(f"\n$ gridfault {' '.join(step)}")
        rc = gridfault(step)
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
