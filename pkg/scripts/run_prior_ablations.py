#!/usr/bin/env python3
"""Prior-construction sweep: moving-average settings, coverage and uncertainty
components, and the noise-probability source, on noisy blobs."""

import argparse
import sys

from plslab import cli

ARMS = "full,beta_zero,argmax_coverage,no_coverage,uniform_w,no_uncertainty"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/prior_ablations")
    parser.add_argument("--rate", type=float, default=0.4)
    parser.add_argument("--seeds", default="1,2,3")
    args = parser.parse_args()
    return cli.main([
        "compare",
        "--arms", ARMS,
        "--seeds", args.seeds,
        "--rate", str(args.rate),
        "--out", args.out,
    ])


if __name__ == "__main__":
    sys.exit(main())
