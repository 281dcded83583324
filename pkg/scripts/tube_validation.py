"""Compare Monte-Carlo tube probabilities with the summation and simple bounds on a (delta, sigma) grid."""
import argparse
import csv
import sys

import numpy as np

from bmsdp.core import make_rng, triangular
from bmsdp.theory import mc_tube_probability, tube_bound


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=2)
    ap.add_argument("-p", type=int, default=1)
    ap.add_argument("--sigmas", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.001, 0.003, 0.007, 0.015],
                    help="delta / sigma values")
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    n, p = args.n, args.p
    k, c, D = triangular(n), triangular(p), n - p + 1
    z = np.zeros((n, n))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["sigma", "delta", "estimate", "wilson_low", "wilson_high", "summation", "simple", "simple_valid"])
    for si, sigma in enumerate(args.sigmas):
        for ri, ratio in enumerate(args.ratios):
            delta = ratio * sigma
            est = mc_tube_probability(n, p, z, z, sigma, delta, args.trials, make_rng(args.seed, si, ri))
            tb = tube_bound(k, c, D, delta, sigma)
            w.writerow([sigma, delta, est.estimate, est.low, est.high, tb.summation.value, tb.simple.value,
                        tb.simple.validity["simple_form_region"]])


if __name__ == "__main__":
    main()
