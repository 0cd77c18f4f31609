"""Held-out nll of the low-rank CDM as the context window grows, averaged over seeds.

    python scripts/topk_sweep.py --ks 0 1 2 3 inf --seeds 5
"""

import argparse

import numpy as np

from rankchoice import (ContextPolicy, DistrictSpec, LengthDist, ModelSpec, TrainConfig, block_cdm_truth,
                        explode_rankings, fit, generate_district, nll, sample_dataset)


def policy_for(k: str) -> ContextPolicy:
    return ContextPolicy.parse("backward" if k == "inf" else f"topk:{k}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ks", nargs="+", default=["0", "1", "2", "3", "inf"])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--n", type=int, default=1500)
    ap.add_argument("--m", type=int, default=12)
    ap.add_argument("--rank", type=int, default=3)
    args = ap.parse_args(argv)

    feats = ("sqrt_distance", "bus_route", "language_match", "attendance_area")
    table = np.zeros((len(args.ks), args.seeds))
    for seed in range(args.seeds):
        district = generate_district(DistrictSpec(n=args.n, m=args.m, n_s=args.m // 2, n_p=3, features=feats,
                                                  length=LengthDist("poisson", mean=4.0), seed=seed))
        data = sample_dataset(district, block_cdm_truth(district, seed=seed), seed=100 + seed)
        cut = int(0.8 * data.n)
        train, test = data.subset(np.arange(cut)), data.subset(np.arange(cut, data.n))
        cfg = TrainConfig(step_size=0.05, tol=1e-7, max_epochs=1500, rank=args.rank, seed=seed)
        for i, k in enumerate(args.ks):
            spec = ModelSpec("cdm", policy_for(k))
            table[i, seed] = nll(fit(spec, train, cfg).params, explode_rankings(test, spec.policy))
        print(f"seed {seed}: " + " ".join(f"k={k}:{v:.4f}" for k, v in zip(args.ks, table[:, seed])))
    print(f"\n{'k':>4s} {'mean':>8s} {'sd':>8s}")
    for k, row in zip(args.ks, table):
        print(f"{k:>4s} {row.mean():8.4f} {row.std(ddof=1) if len(row) > 1 else 0.0:8.4f}")


if __name__ == "__main__":
    main()
