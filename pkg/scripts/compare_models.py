"""Held-out nll of every model family on block-affinity synthetic data.

    python scripts/compare_models.py --n 2000 --out compare.csv
"""

import argparse
import csv
import logging

import numpy as np

from rankchoice import (DistrictSpec, LengthDist, ModelSpec, TrainConfig, block_cdm_truth, explode_rankings, fit,
                        generate_district, nll, sample_dataset)
from rankchoice.metrics import accuracy_in_kth_prediction, nll_by_rank, null_nll

FEATURES = ("sqrt_distance", "bus_route", "sibling_match", "language_match", "attendance_area")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--m", type=int, default=16)
    ap.add_argument("--affinity", type=float, default=2.0)
    ap.add_argument("--rank", type=int, default=4)
    ap.add_argument("--epochs", type=int, default=1500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    spec = DistrictSpec(n=args.n, m=args.m, n_s=args.m // 2, n_p=4, features=FEATURES,
                        length=LengthDist("poisson", mean=4.0), seed=args.seed)
    district = generate_district(spec)
    data = sample_dataset(district, block_cdm_truth(district, affinity=args.affinity, seed=args.seed),
                          seed=args.seed + 1)
    cut = int(0.8 * data.n)
    train, test = data.subset(np.arange(cut)), data.subset(np.arange(cut, data.n))
    cfg = TrainConfig(step_size=0.05, tol=1e-7, max_epochs=args.epochs, rank=args.rank, seed=args.seed)

    # each family warm-starts from the one before it
    fitted, prev = {}, None
    for kind in ("fixed", "linear", "nested", "cdm", "cdm-full"):
        warm = prev if kind != "nested" else fitted["linear"]
        fitted[kind] = fit(ModelSpec(kind), train, cfg, warm_start=warm).params
        if kind in ("fixed", "linear"):
            prev = fitted[kind]

    held = explode_rankings(test)
    rows = [dict(model="null", nll=null_nll(held), rank=0, rank_nll=float("nan"), accuracy_1=float("nan"))]
    for kind, params in fitted.items():
        acc = accuracy_in_kth_prediction(params, test, 1).value
        for r, value, _ in nll_by_rank(params, held):
            rows.append(dict(model=kind, nll=nll(params, held), rank=r, rank_nll=value, accuracy_1=acc))
    print(f"{'model':10s} {'held-out nll':>12s} {'top-1 acc':>10s}")
    for kind, params in fitted.items():
        print(f"{kind:10s} {nll(params, held):12.4f} {accuracy_in_kth_prediction(params, test, 1).value:10.3f}")
    print(f"{'null':10s} {null_nll(held):12.4f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
