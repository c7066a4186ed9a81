"""Replay the 16-worker toy problem under every policy and write comparison CSVs."""
import argparse
from pathlib import Path

from hypertrick.analysis import compare, summarize
from hypertrick.policy import GridSearchParams, HyperTrickParams, SuccessiveHalvingParams
from hypertrick.simulator import SchedulerKind, golden_scenario, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/toy")
    ap.add_argument("--r", type=float, default=0.25)
    args = ap.parse_args()

    sc = golden_scenario()
    n = sc.n_phases
    runs = {
        "hypertrick": (HyperTrickParams(len(sc.workers), args.r, n), SchedulerKind.GREEDY_REALLOC),
        "sh-dynamic": (SuccessiveHalvingParams(args.r, n), SchedulerKind.BARRIER_DYNAMIC),
        "sh-static": (SuccessiveHalvingParams(args.r, n), SchedulerKind.BARRIER_STATIC),
        "grid": (GridSearchParams(n), SchedulerKind.CONTIGUOUS),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for label, (params, sched) in runs.items():
        tl = simulate(sc, params, sched)
        tl.write(out / f"timeline_{label}.jsonl")
        summaries.append(summarize(tl))
        # one row per worker: the phases it ran and how it ended
        print(f"\n{label}")
        done = tl.completed_phases()
        for w, kind in sorted(tl.outcome().items()):
            print(f"  W{w:<3}{'#' * done.get(w, 0):<{n + 1}}{kind}")
    cmp = compare(summaries, list(runs))
    print()
    print(cmp.text())
    cmp.write(out)
    print(f"\nCSVs and timelines in {out}")


if __name__ == "__main__":
    main()
