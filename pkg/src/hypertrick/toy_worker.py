"""Trial process that replays a scenario's learning curve over the worker protocol.

Run as ``python -m hypertrick.toy_worker``. Besides the standard HT_* variables
it reads:

    HT_TOY_SCENARIO  scenario JSON file (default: the golden toy problem)
    HT_TOY_UNIT      wall seconds per simulated time unit (default 0)
    HT_TOY_CRASH     "<worker>:<phase>": that worker SIGKILLs itself mid-phase
"""
import os
import signal
import sys
import time

from .simulator import golden_scenario, load_scenario


def main() -> int:
    wid = int(os.environ["HT_WORKER_ID"])
    n_phases = int(os.environ["HT_NUM_PHASES"])
    slot = int(os.environ.get("HT_SLOT_ID", "0"))
    unit = float(os.environ.get("HT_TOY_UNIT", "0"))
    path = os.environ.get("HT_TOY_SCENARIO")
    scenario = load_scenario(path) if path else golden_scenario()
    crash = os.environ.get("HT_TOY_CRASH")
    crash_at = tuple(int(x) for x in crash.split(":")) if crash else None

    spec = scenario.workers[wid % len(scenario.workers)]
    speed = scenario.nodes[slot % len(scenario.nodes)].speed
    for p in range(n_phases):
        if crash_at == (wid, p):
            time.sleep(0.5 * spec.work[p] * speed * unit)
            os.kill(os.getpid(), signal.SIGKILL)
        time.sleep(spec.work[p] * speed * unit)
        print(f"REPORT {p} {spec.metrics[p % len(spec.metrics)]!r}", flush=True)
        answer = sys.stdin.readline().strip()
        if answer != "CONTINUE":
            return 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
