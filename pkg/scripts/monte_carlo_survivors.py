"""Mean surviving workers per phase versus W0*(1-r)^p, over several seeds."""
import argparse

import numpy as np

from hypertrick.core import RunParams
from hypertrick.policy import expected_workers
from hypertrick.simulator import monte_carlo_eviction


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workers", type=int, default=100)
    ap.add_argument("--r", type=float, default=0.25)
    ap.add_argument("--phases", type=int, default=10)
    ap.add_argument("--runs", type=int, default=10000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    rows = []
    for seed in args.seeds:
        run = RunParams(args.workers, args.r, args.phases, 1, seed)
        rows.append(monte_carlo_eviction(run, args.runs))
    means = np.array(rows)
    print("phase  expected " + " ".join(f"seed{s:>4}" for s in args.seeds) + "   worst rel.err")
    for p in range(args.phases):
        e = expected_workers(args.workers, args.r, p)
        rel = (means[:, p] - e) / e
        print(f"{p:>5} {e:>9.3f} " + " ".join(f"{m:>8.3f}" for m in means[:, p])
              + f"   {rel[np.argmax(abs(rel))]:+.2%}")


if __name__ == "__main__":
    main()
