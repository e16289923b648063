"""Tightness of the closed-form normalizer bounds.

Prints the bound/exact ratio in two dimensions, the different-group gap as a
function of lambda_0 / lambda_1, and bound-minus-IS gaps for random larger
configurations.
"""

import argparse
import math

import numpy as np

from blockprec.model import Partition, PenaltyConfig, estimate_logz_is, exact_logz_2d, log_bound


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-samples", type=int, default=100_000)
    ap.add_argument("--n-random", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print("same group, lambda_d = lambda_1 = lambda_0 / 2")
    for lam in (0.5, 1.0, 2.0):
        c = PenaltyConfig(lam, lam, 2 * lam)
        gap = log_bound(Partition.single(2), c, "gl1") - exact_logz_2d(c, same_group=True)
        print(f"  lambda={lam:<4} log gap {gap:.6f}  ratio {math.exp(gap):.6f}")

    print("different groups, lambda_d = lambda_1 = 1")
    for ratio in (1.1, 1.2, 1.5, 1.8, 2.5, 4.0, 8.0, 16.0):
        c = PenaltyConfig(1.0, 1.0, ratio)
        exact = exact_logz_2d(c, same_group=False)
        gap = log_bound(Partition.singletons(2), c, "gl1") - exact
        line = f"  lambda_0={ratio:<5} exact {exact:+.6f}  log gap {gap:.6f}"
        if ratio < 2:
            est, se = estimate_logz_is(Partition.singletons(2), c, "gl1", args.n_samples, seed=args.seed)
            line += f"  IS {est:+.6f} +- {se:.6f}"
        print(line)

    print("random configurations: log bound - IS estimate")
    rng = np.random.default_rng(args.seed)
    for k in range(args.n_random):
        d = int(rng.integers(2, 6))
        p = Partition.from_labels(rng.integers(0, d, d))
        l1 = rng.uniform(0.5, 2.0)
        c = PenaltyConfig(rng.uniform(0.5, 2.0), l1, l1 * rng.uniform(1.1, 4.0))
        for kind in ("gl1", "gl12"):
            est, se = estimate_logz_is(p, c, kind, args.n_samples, seed=k)
            print(f"  D={d} z={p.to_list()} {kind:<4} gap {log_bound(p, c, kind) - est:7.4f} (se {se:.4f})")


if __name__ == "__main__":
    main()
