"""Synthetic end-to-end run: estimate risk, calibrate noise, re-estimate.

A population of small incomes plus one large outlier ("whale") is subsampled
into 100 databases. The sum query leaks whether the whale is present; after
calibrating a Laplace target scale and re-estimating with that smoothing the
risk drops to zero.

    python3 scripts/whale_demo.py --epsilon 0.1
"""

import argparse

from empdp import FitConfig, ModelSpec, QuerySpec, empirical_privacy, select_lambda
from empdp.synthetic import whale_collection


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--databases", type=int, default=100)
    ap.add_argument("--whale", type=float, default=50.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    c = whale_collection(n_databases=args.databases, whale=args.whale, seed=args.seed)
    q = QuerySpec("sum", "value")
    raw = empirical_privacy(c, q, args.epsilon)
    worst = max(raw.per_individual, key=lambda p: p[1])
    print(f"raw:      delta = {raw.delta:.4f}  delta* = {raw.delta_star:.4f}  worst individual {worst[0]}")

    for distance in ("matching", "hausdorff"):
        sel = select_lambda(c, q, args.epsilon, distance)
        fixed = FitConfig(fixed=ModelSpec(kernel="laplace", scale=(sel.lam,)))
        noised = empirical_privacy(c, q, args.epsilon, fixed)
        print(f"{distance:9s} lambda = {sel.lam:8.3f}  re-estimated delta = {noised.delta:.4f}")


if __name__ == "__main__":
    main()
