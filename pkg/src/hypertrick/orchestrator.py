"""Run real trial processes under an early-stopping policy.

A single decision loop owns the knowledge store; each child process talks to
it over a line protocol on its standard streams:

    child  -> REPORT <phase_index> <metric>
    parent -> CONTINUE | STOP

The child receives HT_WORKER_ID, HT_NUM_PHASES and HT_CONFIG_JSON (plus
HT_SLOT_ID, the logical node it occupies) in its environment. Exit code 0
after the last acknowledged phase means the trial completed.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence, Union

from .core import (Configuration, Decision, PhaseReport, RunParams, SearchSpace,
                   make_rng, sample_configuration)
from .policy import (GridSearchParams, HyperTrickParams, PhaseStats,
                     SuccessiveHalvingParams, grid_decide, hypertrick_decide,
                     successive_halving_cut)

log = logging.getLogger(__name__)

RECORD_TYPES = ("launch", "report", "decision", "terminate", "complete", "failure")
RECORD_KEYS = ("ts", "type", "worker", "slot", "phase", "metric", "decision", "config")

PolicyParams = Union[HyperTrickParams, SuccessiveHalvingParams, GridSearchParams]


class StudyError(RuntimeError):
    """The study cannot proceed at all (e.g. the worker command does not start)."""


class ProtocolViolation(ValueError):
    pass


class WorkerState(str, enum.Enum):
    RUNNING = "running"
    AWAITING_DECISION = "awaiting_decision"
    COMPLETED = "completed"
    TERMINATED = "terminated"
    FAILED = "failed"


# -- knowledge store ------------------------------------------------------------

@dataclass
class KnowledgeStore:
    """Append-only record log with per-phase statistics derived on the fly.

    When ``path`` is given every record is written and flushed as one JSON
    line before the call returns.
    """
    path: Optional[str] = None
    records: list[dict] = field(default_factory=list)
    stats: PhaseStats = field(default_factory=PhaseStats)
    # worker -> (next expected phase, finished?)
    _progress: dict[int, list] = field(default_factory=dict, repr=False)
    _fh: Optional[IO] = field(default=None, repr=False)
    _t0: float = field(default_factory=time.monotonic, repr=False)

    def __post_init__(self):
        if self.path is not None:
            self._fh = open(self.path, "a")

    def now(self) -> float:
        return round(time.monotonic() - self._t0, 6)

    def append(self, type_: str, worker: int, slot: Optional[int] = None,
               phase: Optional[int] = None, metric: Optional[float] = None,
               decision: Optional[str] = None, config: Optional[dict] = None,
               ts: Optional[float] = None) -> dict:
        assert type_ in RECORD_TYPES
        rec = {"ts": self.now() if ts is None else ts, "type": type_, "worker": worker,
               "slot": slot, "phase": phase, "metric": metric, "decision": decision,
               "config": config}
        self.records.append(rec)
        if type_ == "launch":
            self._progress[worker] = [0, False]
        elif type_ in ("terminate", "complete", "failure") and worker in self._progress:
            self._progress[worker][1] = True
        if self._fh is not None:
            self._fh.write(json.dumps(rec) + "\n")
            self._fh.flush()
        return rec

    def expect_report(self, report: PhaseReport) -> None:
        prog = self._progress.get(report.worker_id)
        if prog is None:
            raise ProtocolViolation(f"report from unknown worker {report.worker_id}")
        if prog[1]:
            raise ProtocolViolation(f"report from finished worker {report.worker_id}")
        if report.phase_index != prog[0]:
            raise ProtocolViolation(
                f"worker {report.worker_id} reported phase {report.phase_index}, "
                f"expected {prog[0]}")
        prog[0] += 1

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def load_store(path) -> tuple[list[dict], Optional[str]]:
    """Read a store file; stop at the first corrupted line.

    Returns the valid prefix and a diagnostic (None when the file is clean).
    """
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict) or rec.get("type") not in RECORD_TYPES \
                        or not all(k in rec for k in RECORD_KEYS):
                    raise ValueError("missing fields or unknown record type")
            except ValueError as exc:
                return records, f"{path}:{lineno}: corrupted record ({exc}); kept {len(records)} records"
            records.append(rec)
    return records, None


@dataclass
class Replay:
    stats: PhaseStats
    decisions: list[tuple[int, int, str]]
    persisted: list[tuple[int, int, str]]

    @property
    def consistent(self) -> bool:
        n = len(self.persisted)
        return self.decisions[:n] == self.persisted


def replay_store(records: Sequence[dict], policy: PolicyParams) -> Replay:
    """Rebuild statistics and decisions from persisted reports.

    Successive Halving stores are replayed phase by phase, in the order the
    reports were persisted.
    """
    stats = PhaseStats()
    decisions = []
    reports = [r for r in records if r["type"] == "report"]
    if isinstance(policy, SuccessiveHalvingParams):
        # A phase is cut when its first decision record appears; workers that
        # failed before that point are out of the pool, as in the live loop.
        pending: dict[int, dict[int, float]] = {}
        for r in records:
            if r["type"] == "report":
                stats.add(r["phase"], r["metric"])
                pending.setdefault(r["phase"], {})[r["worker"]] = r["metric"]
            elif r["type"] == "failure":
                for pool in pending.values():
                    pool.pop(r["worker"], None)
            elif r["type"] == "decision" and r["phase"] in pending:
                decisions.extend(_cut_phase(pending.pop(r["phase"]), r["phase"], policy))
        persisted = [(r["worker"], r["phase"], r["decision"])
                     for r in records if r["type"] == "decision"]
        return Replay(stats, decisions, persisted)
    for r in reports:
        rep = PhaseReport(r["worker"], r["worker"], r["phase"], r["metric"], r["ts"])
        if isinstance(policy, HyperTrickParams):
            v = hypertrick_decide(policy, stats, rep)
        else:
            stats.add(rep.phase_index, rep.metric)
            v = grid_decide(policy, rep)
        decisions.append((rep.worker_id, rep.phase_index, v.value))
    persisted = [(r["worker"], r["phase"], r["decision"])
                 for r in records if r["type"] == "decision"]
    return Replay(stats, decisions, persisted)


def _cut_phase(pool: dict[int, float], p: int,
               policy: SuccessiveHalvingParams) -> list[tuple[int, int, str]]:
    killed = set()
    if pool and p < policy.n_phases - 1:
        killed = successive_halving_cut(sorted(pool.items()), policy.evict_fraction)
    out = []
    for wid in sorted(pool):
        v = (Decision.TERMINATE if wid in killed else
             Decision.COMPLETE if p == policy.n_phases - 1 else Decision.CONTINUE)
        out.append((wid, p, v.value))
    return out


def handle_report(store: KnowledgeStore, report: PhaseReport, policy: PolicyParams,
                  slot: Optional[int] = None) -> Decision:
    """Persist ``report``, decide with the pure rule, persist the decision."""
    store.expect_report(report)
    store.append("report", report.worker_id, slot, report.phase_index, report.metric)
    if isinstance(policy, HyperTrickParams):
        verdict = hypertrick_decide(policy, store.stats, report)
    elif isinstance(policy, GridSearchParams):
        store.stats.add(report.phase_index, report.metric)
        verdict = grid_decide(policy, report)
    else:
        raise TypeError("barrier policies are decided in batches, see run_study")
    store.append("decision", report.worker_id, slot, report.phase_index,
                 decision=verdict.value)
    return verdict


# -- child processes -------------------------------------------------------------

@dataclass
class WorkerHandle:
    worker_id: int
    config: Configuration
    slot_id: int
    proc: subprocess.Popen
    state: WorkerState = WorkerState.RUNNING
    last_metric: Optional[float] = None
    last_ts: Optional[float] = None
    stop_deadline: Optional[float] = None
    exited: bool = False
    phase: int = 0


def _pump(wid: int, proc: subprocess.Popen, q: queue.Queue) -> None:
    for line in proc.stdout:
        q.put(("line", wid, line))
    q.put(("exit", wid, proc.wait()))


def parse_report_line(line: str) -> Optional[tuple[int, float]]:
    """``REPORT <phase> <metric>`` -> (phase, metric); None for other output."""
    parts = line.split()
    if not parts or parts[0] != "REPORT":
        return None
    if len(parts) != 3:
        raise ProtocolViolation(f"malformed report line {line.strip()!r}")
    try:
        return int(parts[1]), float(parts[2])
    except ValueError:
        raise ProtocolViolation(f"malformed report line {line.strip()!r}") from None


@dataclass
class StudyResult:
    store: KnowledgeStore
    best: Optional[Configuration]
    best_metric: Optional[float]
    handles: dict[int, WorkerHandle]


def run_study(space: SearchSpace, run: RunParams, policy: PolicyParams,
              worker_command: Union[str, Sequence[str]], store_path: Optional[str] = None,
              env: Optional[dict] = None, stop_timeout: float = 10.0) -> StudyResult:
    """Run ``run.w0`` configurations on ``run.n_nodes`` slots.

    Replacement configurations are launched whenever a slot frees up, by
    termination, completion or failure alike.
    """
    if isinstance(policy, SuccessiveHalvingParams) and run.n_nodes < run.w0:
        raise ValueError("Successive Halving needs one slot per configuration "
                         "(trials cannot be preempted)")
    if policy.n_phases != run.n_phases:
        raise ValueError("policy and run disagree on n_phases")
    cmd = shlex.split(worker_command) if isinstance(worker_command, str) else list(worker_command)
    rng = make_rng(run.seed)
    store = KnowledgeStore(store_path)
    q: queue.Queue = queue.Queue()
    handles: dict[int, WorkerHandle] = {}
    next_id = 0
    barrier_pending: dict[int, dict[int, float]] = {}

    def launch(slot: int) -> None:
        nonlocal next_id
        if next_id >= run.w0:
            return
        cfg = sample_configuration(space, rng, next_id)
        child_env = dict(os.environ if env is None else env)
        child_env.update(HT_WORKER_ID=str(next_id), HT_NUM_PHASES=str(run.n_phases),
                         HT_CONFIG_JSON=cfg.to_json(), HT_SLOT_ID=str(slot))
        try:
            proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                    text=True, bufsize=1, env=child_env)
        except OSError as exc:
            raise StudyError(f"cannot launch worker command {cmd!r}: {exc}") from exc
        handles[next_id] = WorkerHandle(next_id, cfg, slot, proc)
        store.append("launch", next_id, slot, config=cfg.values)
        threading.Thread(target=_pump, args=(next_id, proc, q), daemon=True).start()
        next_id += 1

    def send(h: WorkerHandle, word: str) -> None:
        try:
            h.proc.stdin.write(word + "\n")
            h.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            pass  # the exit event will follow

    def fail(h: WorkerHandle, why: str) -> None:
        log.warning("worker %d failed: %s", h.worker_id, why)
        if h.proc.poll() is None:
            h.proc.kill()
        h.state = WorkerState.FAILED
        store.append("failure", h.worker_id, h.slot_id, h.phase)
        for pend in barrier_pending.values():
            pend.pop(h.worker_id, None)
        launch(h.slot_id)
        if isinstance(policy, SuccessiveHalvingParams):
            settle_barrier()

    def apply(h: WorkerHandle, verdict: Decision) -> None:
        if verdict is Decision.TERMINATE:
            h.state = WorkerState.TERMINATED
            h.stop_deadline = time.monotonic() + stop_timeout
            send(h, "STOP")
            store.append("terminate", h.worker_id, h.slot_id, h.phase - 1)
            launch(h.slot_id)
        else:
            # COMPLETE is confirmed by a clean exit
            h.state = WorkerState.RUNNING if verdict is Decision.CONTINUE else WorkerState.COMPLETED
            send(h, "CONTINUE")

    def settle_barrier() -> None:
        alive = [h for h in handles.values()
                 if h.state in (WorkerState.RUNNING, WorkerState.AWAITING_DECISION)]
        for p in sorted(barrier_pending):
            if any(h.state is WorkerState.RUNNING and h.phase <= p for h in alive):
                return
            if next_id < run.w0:
                return
            for wid, _, v in _cut_phase(barrier_pending.pop(p), p, policy):
                h = handles[wid]
                store.append("decision", wid, h.slot_id, p, decision=v)
                apply(h, Decision(v))

    for slot in range(min(run.w0, run.n_nodes)):
        launch(slot)

    while not all(h.exited for h in handles.values()):
        try:
            kind, wid, payload = q.get(timeout=0.2)
        except queue.Empty:
            now = time.monotonic()
            for h in handles.values():
                if not h.exited and h.stop_deadline is not None and now > h.stop_deadline:
                    h.proc.kill()  # ignored STOP; its exit event follows
                    h.stop_deadline = None
            continue
        h = handles[wid]
        if kind == "exit":
            h.exited = True
            if h.state is WorkerState.COMPLETED and payload == 0:
                store.append("complete", wid, h.slot_id, h.phase - 1)
                launch(h.slot_id)
            elif h.state in (WorkerState.TERMINATED, WorkerState.FAILED):
                pass
            else:
                fail(h, f"exit code {payload} in state {h.state.value}")
            continue
        if h.state in (WorkerState.TERMINATED, WorkerState.FAILED):
            continue
        try:
            parsed = parse_report_line(payload)
            if parsed is None:
                continue
            if h.state is not WorkerState.RUNNING:
                raise ProtocolViolation(f"report from worker {wid} in state {h.state.value}")
            phase, metric = parsed
            report = PhaseReport(wid, wid, phase, metric, store.now())
            h.state = WorkerState.AWAITING_DECISION
            h.last_metric, h.last_ts = metric, report.report_time
            if isinstance(policy, SuccessiveHalvingParams):
                store.expect_report(report)
                store.append("report", wid, h.slot_id, phase, metric, ts=report.report_time)
                store.stats.add(phase, metric)
                h.phase = phase + 1
                barrier_pending.setdefault(phase, {})[wid] = metric
                settle_barrier()
            else:
                verdict = handle_report(store, report, policy, h.slot_id)
                h.phase = phase + 1
                apply(h, verdict)
        except ProtocolViolation as exc:
            fail(h, str(exc))

    store.close()
    best, best_metric = best_of(handles)
    return StudyResult(store, best, best_metric, handles)


def best_of(handles: dict[int, WorkerHandle]) -> tuple[Optional[Configuration], Optional[float]]:
    """Highest last-reported metric; ties go to the earlier report, then lower id."""
    scored = [h for h in handles.values() if h.last_metric is not None]
    if not scored:
        return None, None
    h = min(scored, key=lambda h: (-h.last_metric, h.last_ts, h.worker_id))
    return h.config, h.last_metric
