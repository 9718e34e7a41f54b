"""Rejection rate of the permutation test on i.i.d. Gaussian series.

    python scripts/null_calibration.py [--runs 200] [--permutations 200]
"""

import argparse

import numpy as np
from scipy.stats import binomtest

from abcdcp.abcd import abcd_detect
from abcdcp.core import SeriesTensor, counter_rng


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--runs", type=int, default=200)
    ap.add_argument("--permutations", type=int, default=200)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--d", type=int, default=50)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=123)
    args = ap.parse_args()

    pvals = []
    for i in range(args.runs):
        x = counter_rng(args.seed, i).standard_normal((args.n, args.d))
        res = abcd_detect(SeriesTensor(x), [1, 4, 10], U=args.permutations, seed=i, retain_blocks=False)
        pvals.append(res.p_value)
    pvals = np.array(pvals)
    hits = int(np.sum(pvals <= args.alpha))
    ci = binomtest(hits, args.runs, args.alpha).proportion_ci(0.99, method="exact")
    print(f"rejections at alpha={args.alpha}: {hits}/{args.runs} = {hits / args.runs:.3f} "
          f"(99% CI {ci.low:.3f}-{ci.high:.3f})")
    print("p-value histogram (10 bins):", np.histogram(pvals, bins=10, range=(0, 1))[0].tolist())


if __name__ == "__main__":
    main()
