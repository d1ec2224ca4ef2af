#!/usr/bin/env python3
"""Desk-scale gated-knapsack experiment: generate 700 labeled instances,
train ASL/Z/FY cost predictors with a small learning-rate grid, calibrate
the conformal bound, and write the comparison CSVs.

Pass --quick for a minutes-scale shakedown at reduced sizes.
"""

import argparse
import sys

from hmip.cli import main as hmip


def run(args):
    common = ["--family", "knapsack", "--seed", str(args.seed),
              "--out", args.out]
    if args.quick:
        common += ["--J", "6", "--k", "4", "--total", "60",
                   "--n-train", "30", "--n-eval", "10", "--n-calib", "10",
                   "--n-test", "10"]
        epochs = "2"
    else:
        common += ["--J", "20", "--k", "10", "--total", "700",
                   "--n-train", "500", "--n-eval", "50", "--n-calib", "50",
                   "--n-test", "100"]
        epochs = "3"

    steps = [["generate", *common]]
    for loss in ("asl", "z", "fy"):
        steps.append(["train", *common, "--loss", loss, "--epochs", epochs,
                      "--lr-grid", "1e-5,1e-4"])
    steps.append(["calibrate", *common, "--loss", "asl",
                  "--alpha", str(args.alpha)])
    steps.append(["evaluate", *common, "--loss", "asl",
                  "--alpha", str(args.alpha)])
    steps.append(["report", *common])
    for step in steps:
        print("+ hmip " + " ".join(step), flush=True)
        code = hmip(step)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--alpha", type=float, default=0.1)
    parser.add_argument("--out", default="runs")
    parser.add_argument("--quick", action="store_true")
    sys.exit(run(parser.parse_args()))
