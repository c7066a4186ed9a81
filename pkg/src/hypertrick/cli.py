"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis, orchestrator, policy as pol, simulator as sim
from .core import RunParams, load_space


class UsageError(Exception):
    pass


POLICIES = ("hypertrick", "sh-dynamic", "sh-static", "grid")


def _policy(name: str, w0: int, r: float, n_phases: int):
    if name == "hypertrick":
        return pol.HyperTrickParams(w0, r, n_phases), sim.SchedulerKind.GREEDY_REALLOC
    if name == "sh-dynamic":
        return pol.SuccessiveHalvingParams(r, n_phases), sim.SchedulerKind.BARRIER_DYNAMIC
    if name == "sh-static":
        return pol.SuccessiveHalvingParams(r, n_phases), sim.SchedulerKind.BARRIER_STATIC
    return pol.GridSearchParams(n_phases), sim.SchedulerKind.CONTIGUOUS


def _check_r(r: float) -> None:
    if not 0 < r < 1:
        raise UsageError("r must be in (0,1)")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    _check_r(args.r)
    if args.golden and args.scenario:
        raise UsageError("--golden and --scenario are mutually exclusive")
    if args.golden:
        scenario = sim.golden_scenario()
    elif args.scenario:
        try:
            scenario = sim.load_scenario(args.scenario)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read scenario: {exc}")
    else:
        run = RunParams(args.workers or 16, args.r, args.phases or 4, args.nodes or 6, args.seed)
        scenario = sim.synthetic_scenario(sim.MetricModel(), run)
    for flag, have, want in (("--phases", args.phases, scenario.n_phases),
                             ("--workers", args.workers, len(scenario.workers)),
                             ("--nodes", args.nodes, len(scenario.nodes))):
        if have is not None and have != want:
            raise UsageError(f"{flag} {have} does not match the scenario ({want})")
    run = RunParams(len(scenario.workers), args.r, scenario.n_phases, len(scenario.nodes), args.seed)
    params, scheduler = _policy(args.policy, run.w0, run.r, run.n_phases)
    tl = sim.simulate(scenario, params, scheduler, run)
    s = analysis.summarize(tl)
    out = _out_dir(args)
    tl.write(out / f"timeline_{args.policy}.jsonl")
    print(f"makespan {s.makespan:.6f}")
    print(f"measured_alpha {s.measured_alpha:.6f}")
    print(f"occupancy {s.occupancy:.6f}")
    print(f"kills_per_phase {' '.join(map(str, s.kill_counts))}")
    done = sorted(w for w, k in tl.outcome().items() if k == "complete")
    print("completed " + " ".join(f"W{w}" for w in done))
    print(f"best W{s.best[0]} metric {s.best[1]:g} at {s.best[2]:.6f}")
    print(f"timeline {out / f'timeline_{args.policy}.jsonl'}")
    return 0


def cmd_brackets(args) -> int:
    if args.eta < 2:
        raise UsageError("eta must be >= 2")
    if args.R < 1:
        raise UsageError("R must be >= 1")
    n0 = None
    if args.n0:
        try:
            n0 = [int(x) for x in args.n0.split(",")]
        except ValueError:
            raise UsageError("--n0 must be a comma-separated list of integers")
    try:
        brackets = pol.hyperband_brackets(args.eta, args.R, n0)
    except ValueError as exc:
        raise UsageError(str(exc))
    for b in brackets:
        rounds = " ".join(f"({n},{r})" for n, r in b.rounds)
        print(f"s={b.s}  alpha_s={100 * pol.bracket_alpha(b, args.R):.2f}%  rounds {rounds}")
    print(f"configurations {sum(b.n0 for b in brackets)}")
    print(f"overall alpha {100 * pol.hyperband_alpha(brackets, args.R):.2f}%")
    if n0 is None:
        canon = pol.canonical_n0(args.eta, args.R)
        print(f"note: canonical initial counts {','.join(map(str, canon))}", end="")
        if (args.eta, args.R) == (3, 27):
            print("; the reference configuration uses 27,9,6,4 (pass --n0 to reproduce it)")
        else:
            print()
    return 0


def cmd_solve_rate(args) -> int:
    try:
        r = pol.solve_eviction_rate(args.alpha, args.phases)
    except pol.UnachievableTarget as exc:
        raise UsageError(str(exc))
    print(f"r {r:.6f}")
    print(f"expected_alpha {pol.expected_alpha(r, args.phases):.6f}")
    print(f"min_alpha {pol.min_alpha(r, args.phases):.6f}")
    return 0


def cmd_run(args) -> int:
    _check_r(args.r)
    try:
        space = load_space(args.space)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read search space: {exc}")
    if not args.cmd:
        raise UsageError("--cmd is required")
    run = RunParams(args.workers, args.r, args.phases, args.slots, args.seed)
    params, _ = _policy(args.policy, run.w0, run.r, run.n_phases)
    if args.policy == "sh-static":
        raise UsageError("sh-static is a simulator-only scheduler; use sh-dynamic")
    log_path = args.log or str(_out_dir(args) / "study.jsonl")
    try:
        res = orchestrator.run_study(space, run, params, args.cmd, log_path)
    except ValueError as exc:
        raise UsageError(str(exc))
    outcomes = {}
    for rec in res.store.records:
        if rec["type"] in ("complete", "terminate", "failure"):
            outcomes[rec["type"]] = outcomes.get(rec["type"], 0) + 1
    print(f"log {log_path}")
    print(" ".join(f"{k} {v}" for k, v in sorted(outcomes.items())))
    if res.best is not None:
        print(f"best config {res.best.config_id} metric {res.best_metric:g} {json.dumps(res.best.values)}")
    return 0


def cmd_mc(args) -> int:
    _check_r(args.r)
    run = RunParams(args.workers, args.r, args.phases, 1, args.seed)
    means = sim.monte_carlo_eviction(run, args.runs)
    print(f"{'phase':>5} {'mean':>10} {'expected':>10} {'rel_err':>9}")
    for p, m in enumerate(means):
        e = pol.expected_workers(args.workers, args.r, p)
        print(f"{p:>5} {m:>10.4f} {e:>10.4f} {(m - e) / e:>9.4%}")
    return 0


def _load_log(path: str):
    first = None
    with open(path) as f:
        for line in f:
            if line.strip():
                first = json.loads(line)
                break
    if first is None:
        raise UsageError(f"{path}: empty log")
    if "kind" in first:
        return sim.read_timeline(path)
    records, err = orchestrator.load_store(path)
    if err:
        logging.warning(err)
    return records


def cmd_analyze(args) -> int:
    labels = args.labels or [Path(p).stem for p in args.log]
    if len(labels) != len(args.log):
        raise UsageError("need one label per log file")
    try:
        summaries = [analysis.summarize(_load_log(p), n_phases=args.phases, n_nodes=args.nodes)
                     for p in args.log]
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc))
    out = _out_dir(args)
    cmp = analysis.tabulate(summaries, labels)
    print(cmp.text())
    for p in cmp.write(out):
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    def globals_(default_seed, default_out):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=default_seed, help="64-bit RNG seed (default 0)")
        g.add_argument("--out", default=default_out, help="output directory (default ./out)")
        return g

    parser = argparse.ArgumentParser(prog="hypertrick", parents=[globals_(0, "out")],
                                     description="HyperTrick scheduling engine")
    # SUPPRESS keeps a subcommand from resetting globals given before it
    common = globals_(argparse.SUPPRESS, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="discrete-event simulation")
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--golden", action="store_true", help="use the built-in 16-worker toy problem")
    p.add_argument("--policy", choices=POLICIES, default="hypertrick")
    p.add_argument("--r", type=float, default=0.25,
                   help="target eviction rate (HyperTrick) or per-phase eviction fraction (SH)")
    p.add_argument("--phases", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--nodes", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("brackets", parents=[common], help="Hyperband bracket table")
    p.add_argument("--eta", type=int, default=3)
    p.add_argument("--R", type=int, default=27)
    p.add_argument("--n0", help="comma-separated initial configuration counts, s=s_max..0")
    p.set_defaults(func=cmd_brackets)

    p = sub.add_parser("solve-rate", parents=[common], help="eviction rate for a target alpha")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--phases", type=int, required=True)
    p.set_defaults(func=cmd_solve_rate)

    p = sub.add_parser("run", parents=[common], help="run a real study with child processes")
    p.add_argument("--space", required=True, help="search-space JSON file")
    p.add_argument("--policy", choices=POLICIES, default="hypertrick")
    p.add_argument("--workers", type=int, default=16)
    p.add_argument("--slots", type=int, default=4)
    p.add_argument("--phases", type=int, default=4)
    p.add_argument("--r", type=float, default=0.25)
    p.add_argument("--cmd", help="worker command line")
    p.add_argument("--log", help="knowledge-store file (default <out>/study.jsonl)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("mc", parents=[common], help="Monte Carlo check of expected survivors")
    p.add_argument("--workers", type=int, default=100)
    p.add_argument("--r", type=float, default=0.25)
    p.add_argument("--phases", type=int, default=10)
    p.add_argument("--runs", type=int, default=10000)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("analyze", parents=[common], help="summarize and compare logs")
    p.add_argument("--log", nargs="+", required=True, help="timeline or store JSONL files")
    p.add_argument("--labels", nargs="+")
    p.add_argument("--phases", type=int)
    p.add_argument("--nodes", type=int)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except orchestrator.StudyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
