"""Gibbs study of the group l1 prior at D = 4.

Reports mean diagonals and mean absolute off-diagonals for three partitions.
With ``--both-triangles`` each off-diagonal rate is doubled, which is the
density obtained when the penalty sums over both triangles of the matrix.
"""

import argparse

import numpy as np

from blockprec.model import Partition, PenaltyConfig
from blockprec.sampler import ChainConfig, gibbs_chain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lambda-d", type=float, default=0.1)
    ap.add_argument("--lambda-1", type=float, default=0.1)
    ap.add_argument("--lambda-0", type=float, default=1.0)
    ap.add_argument("--chains", type=int, default=5)
    ap.add_argument("--sweeps", type=int, default=1200)
    ap.add_argument("--burn-in", type=int, default=200)
    ap.add_argument("--kind", default="gl1", choices=["gl1", "gl12"])
    ap.add_argument("--both-triangles", action="store_true")
    args = ap.parse_args()

    f = 2.0 if args.both_triangles else 1.0
    c = PenaltyConfig(args.lambda_d, f * args.lambda_1, f * args.lambda_0)
    print(f"{args.kind}: {c}")
    for name, p in (
        ("singletons", Partition.singletons(4)),
        ("one group", Partition.single(4)),
        ("two pairs", Partition((0, 0, 1, 1))),
    ):
        runs = [
            gibbs_chain(args.kind, p, c, ChainConfig(args.sweeps, args.burn_in, seed=s))
            for s in range(args.chains)
        ]
        m = np.mean([r.mean_abs for r in runs], axis=0)
        same = p.same_group()
        iu = np.triu_indices(4, 1)
        within = m[iu][same[iu]]
        between = m[iu][~same[iu]]
        print(f"  {name:<10} mean diag {np.mean(np.diag(m)):7.3f}", end="")
        if within.size:
            print(f"  within |X_ij| {within.mean():6.3f}", end="")
        if between.size:
            print(f"  between |X_ij| {between.mean():6.3f}", end="")
        print(f"  min ESS {min(r.ess.min() for r in runs):.0f}")


if __name__ == "__main__":
    main()
