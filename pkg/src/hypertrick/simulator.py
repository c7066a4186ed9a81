"""Deterministic discrete-event simulation of a metaoptimization run.

Time is kept as exact fractions internally (node speeds and work units are
converted from their decimal representation), so simultaneous events are
detected exactly and the toy schedules come out with exact makespans.
Events are converted to floats only when the timeline is emitted.
"""
from __future__ import annotations

import enum
import heapq
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import (Configuration, Decision, NodeSpec, PhaseReport, RunParams,
                   SearchSpace, make_rng, sample_configuration)
from .policy import (GridSearchParams, HyperTrickParams, PhaseStats,
                     SuccessiveHalvingParams, grid_decide, hypertrick_decide,
                     successive_halving_cut)

PolicyParams = Union[HyperTrickParams, SuccessiveHalvingParams, GridSearchParams]


class SchedulerKind(str, enum.Enum):
    GREEDY_REALLOC = "greedy_realloc"
    BARRIER_DYNAMIC = "barrier_dynamic"
    BARRIER_STATIC = "barrier_static"
    CONTIGUOUS = "contiguous"


# -- scenarios ----------------------------------------------------------------

@dataclass(frozen=True)
class WorkerSpec:
    worker_id: int
    metrics: tuple[float, ...]
    work: tuple[float, ...]
    # (phase, fraction of that phase executed before the worker dies)
    fail_at: Optional[tuple[int, float]] = None


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[NodeSpec, ...]
    workers: tuple[WorkerSpec, ...]
    n_phases: int

    def validate(self) -> list[str]:
        problems = []
        if not self.nodes:
            problems.append("scenario has no nodes")
        if [n.node_id for n in self.nodes] != list(range(len(self.nodes))):
            problems.append("node ids must be 0..N-1 in order")
        if [w.worker_id for w in self.workers] != list(range(len(self.workers))):
            problems.append("worker ids must be 0..W0-1 in order")
        for w in self.workers:
            if len(w.metrics) != self.n_phases or len(w.work) != self.n_phases:
                problems.append(f"worker {w.worker_id}: metrics/work length != n_phases")
            if any(not x > 0 for x in w.work):
                problems.append(f"worker {w.worker_id}: work must be positive")
            if w.fail_at is not None:
                p, frac = w.fail_at
                if not (0 <= p < self.n_phases and 0 <= frac < 1):
                    problems.append(f"worker {w.worker_id}: bad fail_at {w.fail_at}")
        return problems


GOLDEN_SPEEDS = (1.0, 1.1, 1.2, 1.3, 1.4, 1.5)
# (intercept, slope) of each worker's linear learning curve
GOLDEN_LINES = ((26, 1), (7, 8), (13, 5), (24, 7), (0, 1), (13, 9), (0, 8), (22, 4),
                (29, 2), (0, 9), (16, 0), (11, 10), (13, 2), (6, 0), (15, 4), (7, 2))


def golden_scenario() -> Scenario:
    """The 16-worker, 6-node, 4-phase toy problem."""
    n_phases = 4
    nodes = tuple(NodeSpec(i, s) for i, s in enumerate(GOLDEN_SPEEDS))
    workers = tuple(
        WorkerSpec(i, tuple(float(a * p + b) for p in range(n_phases)), (1.0,) * n_phases)
        for i, (b, a) in enumerate(GOLDEN_LINES))
    return Scenario(nodes, workers, n_phases)


def scenario_to_dict(sc: Scenario) -> dict:
    workers = []
    for w in sc.workers:
        d = {"id": w.worker_id, "metrics": list(w.metrics), "work": list(w.work)}
        if w.fail_at is not None:
            d["fail_at"] = list(w.fail_at)
        workers.append(d)
    return {"nodes": [{"id": n.node_id, "speed": n.speed} for n in sc.nodes],
            "n_phases": sc.n_phases, "workers": workers}


def scenario_from_dict(doc: dict) -> Scenario:
    n_phases = int(doc["n_phases"])
    nodes = tuple(NodeSpec(int(n["id"]), float(n["speed"])) for n in doc["nodes"])
    workers = []
    for w in doc["workers"]:
        work = w.get("work", [1.0] * n_phases)
        fail = w.get("fail_at")
        workers.append(WorkerSpec(int(w["id"]), tuple(float(m) for m in w["metrics"]),
                                  tuple(float(x) for x in work),
                                  (int(fail[0]), float(fail[1])) if fail else None))
    sc = Scenario(nodes, tuple(workers), n_phases)
    problems = sc.validate()
    if problems:
        raise ValueError("; ".join(problems))
    return sc


def load_scenario(path) -> Scenario:
    with open(path) as f:
        return scenario_from_dict(json.load(f))


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w") as f:
        json.dump(scenario_to_dict(sc), f, indent=1)


# -- synthetic scenarios -------------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def draw(self, rng):
        return float(rng.uniform(self.lo, self.hi)) if self.hi > self.lo else float(self.lo)


@dataclass(frozen=True)
class Choice:
    values: tuple

    def draw(self, rng):
        return float(self.values[int(rng.integers(len(self.values)))])


Dist = Union[Uniform, Choice]


@dataclass(frozen=True)
class MetricModel:
    """Per-worker learning-curve generator.

    ``linear``: metric(p) = a*p + b with a ~ slope, b ~ intercept.
    ``noisy_curve``: metric(p) = ceiling*(1 - exp(-rate*(p+1))) + N(0, noise^2).
    """
    kind: str = "linear"
    slope: Dist = Uniform(0, 10)
    intercept: Dist = Uniform(0, 30)
    ceiling: Dist = Uniform(10, 100)
    rate: Dist = Uniform(0.1, 1.0)
    noise: float = 0.0
    integer: bool = False
    cost: Optional[Callable[[Configuration], float]] = None
    fail_prob: float = 0.0


def synthetic_scenario(model: MetricModel, run: RunParams,
                       space: Optional[SearchSpace] = None,
                       speeds: Optional[Sequence[float]] = None,
                       seed: Optional[int] = None) -> Scenario:
    """Random scenario for ``run``; identical seeds give identical scenarios.

    When ``model.cost`` is set, each worker's per-phase work is
    ``cost(configuration)`` for a configuration drawn from ``space``.
    """
    if model.kind not in ("linear", "noisy_curve"):
        raise ValueError(f"unknown metric model {model.kind!r}")
    if model.noise < 0 or not 0 <= model.fail_prob < 1:
        raise ValueError("noise must be >= 0 and fail_prob in [0,1)")
    if model.cost is not None and space is None:
        raise ValueError("a cost model needs a search space")
    rng = make_rng(run.seed if seed is None else seed)
    speeds = list(speeds) if speeds is not None else [1.0] * run.n_nodes
    if len(speeds) != run.n_nodes:
        raise ValueError("need one speed per node")
    nodes = tuple(NodeSpec(i, float(s)) for i, s in enumerate(speeds))
    workers = []
    for wid in range(run.w0):
        if model.kind == "linear":
            a, b = model.slope.draw(rng), model.intercept.draw(rng)
            metrics = [a * p + b for p in range(run.n_phases)]
        else:
            c, k = model.ceiling.draw(rng), model.rate.draw(rng)
            metrics = [c * (1.0 - math.exp(-k * (p + 1))) for p in range(run.n_phases)]
        if model.noise > 0:
            metrics = [m + float(rng.normal(0.0, model.noise)) for m in metrics]
        if model.integer:
            metrics = [float(round(m)) for m in metrics]
        work = [1.0] * run.n_phases
        if model.cost is not None:
            cfg = sample_configuration(space, rng, wid)
            work = [float(model.cost(cfg))] * run.n_phases
        fail = None
        if model.fail_prob > 0 and rng.random() < model.fail_prob:
            fail = (int(rng.integers(run.n_phases)), round(float(rng.uniform(0.1, 0.9)), 3))
        workers.append(WorkerSpec(wid, tuple(metrics), tuple(work), fail))
    return Scenario(nodes, tuple(workers), run.n_phases)


# -- timelines ----------------------------------------------------------------

KIND_RANK = {"report": 0, "failure": 0, "decision": 1, "terminate": 2,
             "complete": 2, "launch": 3}


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    worker_id: int
    node_id: int
    phase_index: Optional[int] = None
    metric: Optional[float] = None
    decision: Optional[str] = None
    start: Optional[float] = None  # phase start, on report and failure events

    def to_json(self) -> str:
        parts = [f'"time": {self.time:.6f}', f'"kind": "{self.kind}"',
                 f'"worker_id": {self.worker_id}', f'"node_id": {self.node_id}',
                 f'"phase_index": {json.dumps(self.phase_index)}',
                 f'"metric": {json.dumps(self.metric)}',
                 f'"decision": {json.dumps(self.decision)}',
                 '"start": ' + ("null" if self.start is None else f"{self.start:.6f}")]
        return "{" + ", ".join(parts) + "}"

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(float(d["time"]), d["kind"], int(d["worker_id"]), int(d["node_id"]),
                   d.get("phase_index"), d.get("metric"), d.get("decision"), d.get("start"))


@dataclass
class Timeline:
    events: list[Event]
    n_nodes: Optional[int] = None
    n_phases: Optional[int] = None
    n_workers: Optional[int] = None

    def makespan(self) -> float:
        return self.events[-1].time - self.events[0].time if self.events else 0.0

    def reports(self) -> list[Event]:
        return [e for e in self.events if e.kind == "report"]

    def decisions(self) -> list[tuple[int, int, str]]:
        return [(e.worker_id, e.phase_index, e.decision)
                for e in self.events if e.kind == "decision"]

    def launch_times(self) -> dict[int, float]:
        return {e.worker_id: e.time for e in self.events if e.kind == "launch"}

    def outcome(self) -> dict[int, str]:
        return {e.worker_id: e.kind for e in self.events
                if e.kind in ("terminate", "complete", "failure")}

    def completed_phases(self) -> dict[int, int]:
        counts = {w: 0 for w in self.launch_times()}
        for e in self.reports():
            counts[e.worker_id] += 1
        return counts

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def write(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_jsonl())


def read_timeline(path) -> Timeline:
    events = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                events.append(Event.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad timeline event ({exc})") from None
    return Timeline(events)


def validate_timeline(tl: Timeline) -> Optional[str]:
    """Return a description of the first violated invariant, or None."""
    if not tl.events:
        return "empty timeline"
    open_workers: dict[int, int] = {}
    finished = set()
    last = -math.inf
    for i, e in enumerate(tl.events):
        if e.kind not in KIND_RANK:
            return f"event {i}: unknown kind {e.kind!r}"
        if e.time < last - 1e-9:
            return f"event {i}: time goes backwards ({e.time} < {last})"
        last = e.time
        if e.kind == "launch":
            if e.worker_id in open_workers or e.worker_id in finished:
                return f"event {i}: worker {e.worker_id} launched twice"
            open_workers[e.worker_id] = e.node_id
        elif e.worker_id not in open_workers:
            return f"event {i}: worker {e.worker_id} not running"
        if e.kind in ("terminate", "complete", "failure"):
            del open_workers[e.worker_id]
            finished.add(e.worker_id)
    if open_workers:
        return f"workers never finished: {sorted(open_workers)}"
    return None


# -- the event loop -------------------------------------------------------------

def _frac(x: float) -> Fraction:
    return Fraction(repr(float(x)))


def _check(scenario: Scenario, policy: PolicyParams, scheduler: SchedulerKind,
           run: RunParams) -> None:
    problems = scenario.validate()
    if len(scenario.workers) != run.w0:
        problems.append(f"scenario has {len(scenario.workers)} workers, run expects {run.w0}")
    if len(scenario.nodes) != run.n_nodes:
        problems.append(f"scenario has {len(scenario.nodes)} nodes, run expects {run.n_nodes}")
    if scenario.n_phases != run.n_phases or policy.n_phases != run.n_phases:
        problems.append("n_phases differs between scenario, policy and run")
    barrier = scheduler in (SchedulerKind.BARRIER_DYNAMIC, SchedulerKind.BARRIER_STATIC)
    if barrier and isinstance(policy, HyperTrickParams):
        problems.append("HyperTrick runs under greedy reallocation, not barriers")
    if not barrier and isinstance(policy, SuccessiveHalvingParams):
        problems.append("Successive Halving needs a barrier scheduler")
    if isinstance(policy, HyperTrickParams) and policy.w0 != run.w0:
        problems.append("policy w0 differs from run w0")
    if problems:
        raise ValueError("; ".join(problems))


def default_scheduler(policy: PolicyParams) -> SchedulerKind:
    if isinstance(policy, HyperTrickParams):
        return SchedulerKind.GREEDY_REALLOC
    if isinstance(policy, SuccessiveHalvingParams):
        return SchedulerKind.BARRIER_DYNAMIC
    return SchedulerKind.CONTIGUOUS


def simulate(scenario: Scenario, policy: PolicyParams,
             scheduler: Optional[SchedulerKind] = None,
             run: Optional[RunParams] = None) -> Timeline:
    if scheduler is None:
        scheduler = default_scheduler(policy)
    if run is None:
        r = getattr(policy, "r", getattr(policy, "evict_fraction", 0.5))
        run = RunParams(len(scenario.workers), r, scenario.n_phases, len(scenario.nodes))
    _check(scenario, policy, scheduler, run)
    if scheduler in (SchedulerKind.GREEDY_REALLOC, SchedulerKind.CONTIGUOUS):
        events = _run_greedy(scenario, policy)
    else:
        events = _run_barrier(scenario, policy, scheduler == SchedulerKind.BARRIER_STATIC)
    return Timeline(events, len(scenario.nodes), scenario.n_phases, len(scenario.workers))


def _duration(scenario: Scenario, wid: int, node: int, p: int) -> Fraction:
    return _frac(scenario.workers[wid].work[p]) * _frac(scenario.nodes[node].speed)


def _run_greedy(scenario: Scenario, policy: PolicyParams) -> list[Event]:
    stats = PhaseStats()
    events: list[Event] = []
    queue: list = []  # (time, rank, worker, phase, start, node, kind)
    free_nodes = list(range(len(scenario.nodes)))
    next_wid = 0

    def start_phase(wid, node, p, t):
        dur = _duration(scenario, wid, node, p)
        fail = scenario.workers[wid].fail_at
        if fail is not None and fail[0] == p:
            heapq.heappush(queue, (t + dur * _frac(fail[1]), 0, wid, p, t, node, "failure"))
        else:
            heapq.heappush(queue, (t + dur, 0, wid, p, t, node, "report"))

    def launch_pending(t):
        nonlocal next_wid
        free_nodes.sort()
        while free_nodes and next_wid < len(scenario.workers):
            node = free_nodes.pop(0)
            events.append(Event(float(t), "launch", next_wid, node))
            start_phase(next_wid, node, 0, t)
            next_wid += 1

    launch_pending(Fraction(0))
    while queue:
        t = queue[0][0]
        batch = []
        while queue and queue[0][0] == t:
            batch.append(heapq.heappop(queue))
        for _, _, wid, p, start, node, kind in sorted(batch, key=lambda x: (x[1], x[2])):
            if kind == "failure":
                events.append(Event(float(t), "failure", wid, node, p, start=float(start)))
                free_nodes.append(node)
                continue
            metric = scenario.workers[wid].metrics[p]
            report = PhaseReport(wid, wid, p, metric, float(t))
            if isinstance(policy, HyperTrickParams):
                verdict = hypertrick_decide(policy, stats, report)
            else:
                verdict = grid_decide(policy, report)
            events.append(Event(float(t), "report", wid, node, p, metric, start=float(start)))
            events.append(Event(float(t), "decision", wid, node, p, decision=verdict.value))
            if verdict is Decision.CONTINUE:
                start_phase(wid, node, p + 1, t)
            else:
                events.append(Event(float(t), verdict.value, wid, node, p))
                free_nodes.append(node)
        launch_pending(t)
    return events


def _run_barrier(scenario: Scenario, policy: PolicyParams, static: bool) -> list[Event]:
    n_nodes = len(scenario.nodes)
    events: list[tuple] = []  # (time, rank, worker, seq, Event)
    seq = 0

    def emit(t, ev):
        nonlocal seq
        events.append((t, KIND_RANK[ev.kind], ev.worker_id, seq, ev))
        seq += 1

    survivors = [w.worker_id for w in scenario.workers]
    binding: dict[int, int] = {}
    barrier = Fraction(0)
    for p in range(scenario.n_phases):
        if not survivors:
            break
        reports = []
        if p == 0 or not static:
            node_free = [barrier] * n_nodes
            for wid in survivors:  # FIFO by worker id onto the earliest free node
                node = min(range(n_nodes), key=lambda n: (node_free[n], n))
                start = node_free[node]
                if p == 0:
                    binding[wid] = node
                    emit(start, Event(float(start), "launch", wid, node))
                end = _run_task(scenario, wid, node, p, start, emit, reports)
                node_free[node] = end
        else:
            node_free = [barrier] * n_nodes
            for wid in survivors:
                node = binding[wid]
                start = node_free[node]
                node_free[node] = _run_task(scenario, wid, node, p, start, emit, reports)
        barrier = max(node_free)
        # decisions are taken together once every survivor has reported
        reported = [(wid, scenario.workers[wid].metrics[p]) for wid, _ in reports]
        if isinstance(policy, SuccessiveHalvingParams) and p < scenario.n_phases - 1 and reported:
            killed = successive_halving_cut(reported, policy.evict_fraction)
        else:
            killed = set()
        nxt = []
        for wid, node in reports:
            if wid in killed:
                verdict = Decision.TERMINATE
            elif p == scenario.n_phases - 1:
                verdict = Decision.COMPLETE
            else:
                verdict = Decision.CONTINUE
                nxt.append(wid)
            emit(barrier, Event(float(barrier), "decision", wid, node, p, decision=verdict.value))
            if verdict is not Decision.CONTINUE:
                emit(barrier, Event(float(barrier), verdict.value, wid, node, p))
        survivors = sorted(nxt)
    events.sort(key=lambda x: x[:4])
    return [e[-1] for e in events]


def _run_task(scenario, wid, node, p, start, emit, reports) -> Fraction:
    dur = _duration(scenario, wid, node, p)
    fail = scenario.workers[wid].fail_at
    if fail is not None and fail[0] == p:
        end = start + dur * _frac(fail[1])
        emit(end, Event(float(end), "failure", wid, node, p, start=float(start)))
        return end
    end = start + dur
    metric = scenario.workers[wid].metrics[p]
    emit(end, Event(float(end), "report", wid, node, p, metric, start=float(start)))
    reports.append((wid, node))
    return end


# -- oracle replay ------------------------------------------------------------

def replay_decisions(reports: Sequence[PhaseReport], policy: PolicyParams,
                     ) -> list[tuple[int, int, str]]:
    """Feed ``reports`` (in the given order) through the pure decision rules.

    For Successive Halving the reports of a phase are cut together, in the
    order the barrier emits them (worker id ascending).
    """
    if isinstance(policy, HyperTrickParams):
        stats = PhaseStats()
        return [(r.worker_id, r.phase_index, hypertrick_decide(policy, stats, r).value)
                for r in reports]
    if isinstance(policy, GridSearchParams):
        return [(r.worker_id, r.phase_index, grid_decide(policy, r).value) for r in reports]
    out = []
    by_phase: dict[int, list[PhaseReport]] = {}
    for r in reports:
        by_phase.setdefault(r.phase_index, []).append(r)
    for p in sorted(by_phase):
        pool = sorted(by_phase[p], key=lambda r: r.worker_id)
        killed = set()
        if p < policy.n_phases - 1:
            killed = successive_halving_cut([(r.worker_id, r.metric) for r in pool],
                                            policy.evict_fraction)
        for r in pool:
            if r.worker_id in killed:
                v = Decision.TERMINATE
            elif p == policy.n_phases - 1:
                v = Decision.COMPLETE
            else:
                v = Decision.CONTINUE
            out.append((r.worker_id, p, v.value))
    return out


def timeline_reports(tl: Timeline) -> list[PhaseReport]:
    return [PhaseReport(e.worker_id, e.worker_id, e.phase_index, e.metric, e.time)
            for e in tl.reports()]


# -- Monte Carlo ----------------------------------------------------------------

def monte_carlo_eviction(run: RunParams, n_runs: int,
                         metric_model: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
                         ) -> np.ndarray:
    """Mean number of workers reporting at each phase over ``n_runs`` runs.

    Only the decision process is simulated: at every phase the survivors
    report in a uniformly random order, with metrics drawn i.i.d. from
    ``metric_model(rng, k)`` (standard uniform by default).
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if metric_model is None:
        def metric_model(rng, k):
            return rng.random(k)
    rng = make_rng(run.seed)
    params = HyperTrickParams(run.w0, run.r, run.n_phases)
    totals = np.zeros(run.n_phases)
    for _ in range(n_runs):
        stats = PhaseStats()
        alive = run.w0
        for p in range(run.n_phases):
            totals[p] += alive
            if alive == 0:
                continue
            metrics = metric_model(rng, alive)  # i.i.d., so draw order is report order
            survivors = 0
            for wid, m in enumerate(metrics):
                v = hypertrick_decide(params, stats, PhaseReport(wid, wid, p, float(m)))
                if v is not Decision.TERMINATE:
                    survivors += 1
            alive = survivors
    return totals / n_runs
