#!/usr/bin/env python3
"""Loss-composition sweep: which objective terms matter, and how the two
prior-matching KL directions compare, on noisy blobs over shared seeds."""

import argparse
import sys

from plslab import cli

ARMS = "ce_only,pri_only,ce_pri,forward_pri,no_estep,full"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/loss_ablations")
    parser.add_argument("--rate", type=float, default=0.4)
    parser.add_argument("--seeds", default="1,2,3")
    parser.add_argument("--arms", default=ARMS)
    args = parser.parse_args()
    return cli.main([
        "compare",
        "--arms", args.arms,
        "--seeds", args.seeds,
        "--rate", str(args.rate),
        "--out", args.out,
    ])


if __name__ == "__main__":
    sys.exit(main())
