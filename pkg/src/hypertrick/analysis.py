"""Evaluation quantities for a finished study.

Works on simulator timelines and on orchestrator knowledge stores alike;
stores are first converted to a timeline.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .simulator import Event, Timeline, validate_timeline


@dataclass
class StudySummary:
    makespan: float
    measured_alpha: float
    occupancy: float
    best: tuple[int, float, float]  # (config_id, metric, time)
    kill_counts: list[int]
    curves: dict[int, list[tuple[float, float]]]
    n_phases: int
    n_workers: int
    n_nodes: int
    occupancy_curve: list[tuple[float, float]] = field(default_factory=list)
    best_so_far: list[tuple[float, float]] = field(default_factory=list)

    @property
    def time_to_best(self) -> float:
        return self.best[2]


def timeline_from_store(records: Sequence[dict]) -> Timeline:
    """Rebuild a timeline from store records.

    A phase starts at the worker's launch or at its previous decision, since a
    trial resumes as soon as it reads CONTINUE.
    """
    events = []
    phase_start: dict[int, float] = {}
    slot: dict[int, int] = {}
    for r in records:
        w, t = r["worker"], float(r["ts"])
        if r["type"] == "launch":
            slot[w] = r["slot"]
            phase_start[w] = t
            events.append(Event(t, "launch", w, r["slot"]))
        elif r["type"] == "report":
            events.append(Event(t, "report", w, slot[w], r["phase"], r["metric"],
                                start=phase_start[w]))
        elif r["type"] == "decision":
            phase_start[w] = t
            events.append(Event(t, "decision", w, slot[w], r["phase"], decision=r["decision"]))
        elif r["type"] == "failure":
            events.append(Event(t, "failure", w, slot.get(w, r["slot"]), r["phase"],
                                start=phase_start.get(w, t)))
        else:
            events.append(Event(t, r["type"], w, slot[w], r["phase"]))
    return Timeline(events)


def busy_intervals(tl: Timeline) -> dict[int, list[tuple[float, float]]]:
    """Per node, the [start, end) intervals spent executing phases."""
    out: dict[int, list[tuple[float, float]]] = {}
    for e in tl.events:
        if e.kind in ("report", "failure") and e.start is not None:
            out.setdefault(e.node_id, []).append((e.start, e.time))
    for v in out.values():
        v.sort()
    return out


def occupancy_curve(tl: Timeline, n_nodes: int) -> list[tuple[float, float]]:
    """Step function: fraction of busy nodes from each listed time onwards."""
    deltas: dict[float, int] = {}
    for iv in busy_intervals(tl).values():
        for a, b in iv:
            deltas[a] = deltas.get(a, 0) + 1
            deltas[b] = deltas.get(b, 0) - 1
    curve, busy = [], 0
    for t in sorted(deltas):
        busy += deltas[t]
        curve.append((t, busy / n_nodes))
    return curve


def best_so_far_curve(tl: Timeline) -> list[tuple[float, float]]:
    curve: list[tuple[float, float]] = []
    for e in tl.reports():
        if not curve or e.metric > curve[-1][1]:
            curve.append((e.time, e.metric))
    return curve


def summarize(source: Union[Timeline, Sequence[dict]], n_phases: Optional[int] = None,
              n_workers: Optional[int] = None, n_nodes: Optional[int] = None) -> StudySummary:
    """Summarize a timeline or a list of store records.

    Unspecified sizes fall back to the timeline's metadata, then to what the
    events themselves show (distinct workers, distinct nodes, highest phase).
    """
    tl = source if isinstance(source, Timeline) else timeline_from_store(source)
    problem = validate_timeline(tl)
    if problem:
        raise ValueError(f"malformed timeline: {problem}")
    reports = tl.reports()
    launched = tl.launch_times()
    n_phases = n_phases or tl.n_phases or (max(e.phase_index for e in reports) + 1 if reports else 1)
    n_workers = n_workers or tl.n_workers or len(launched)
    n_nodes = n_nodes or tl.n_nodes or len({e.node_id for e in tl.events})

    t0 = tl.events[0].time
    makespan = tl.events[-1].time - t0
    busy = sum(b - a for iv in busy_intervals(tl).values() for a, b in iv)
    occupancy = busy / (n_nodes * makespan) if makespan > 0 else 0.0

    best = (-1, -math.inf, math.inf)
    curves: dict[int, list[tuple[float, float]]] = {}
    for e in reports:
        curves.setdefault(e.worker_id, []).append((e.time, e.metric))
        if e.metric > best[1]:
            best = (e.worker_id, e.metric, e.time - t0)

    kills = [0] * n_phases
    for e in tl.events:
        if e.kind == "terminate":
            kills[e.phase_index] += 1

    return StudySummary(makespan=makespan,
                        measured_alpha=len(reports) / (n_workers * n_phases),
                        occupancy=occupancy, best=best, kill_counts=kills, curves=curves,
                        n_phases=n_phases, n_workers=n_workers, n_nodes=n_nodes,
                        occupancy_curve=occupancy_curve(tl, n_nodes),
                        best_so_far=best_so_far_curve(tl))


# -- comparison ---------------------------------------------------------------

SUMMARY_COLUMNS = ["label", "makespan", "measured_alpha", "occupancy", "best_config",
                   "best_metric", "time_to_best", "n_phases", "d_makespan",
                   "d_measured_alpha", "d_occupancy", "d_time_to_best", "warning"]


@dataclass
class Comparison:
    rows: list[dict]
    occupancy: dict[str, list[tuple[float, float]]]
    best_so_far: dict[str, list[tuple[float, float]]]
    curves: dict[str, dict[int, list[tuple[float, float]]]]

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()

    def text(self) -> str:
        head = f"{'label':<14}{'makespan':>10}{'alpha':>9}{'occup.':>9}{'best':>10}{'t_best':>9}"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r['label']:<14}{r['makespan']:>10.4f}{r['measured_alpha']:>9.4f}"
                         f"{r['occupancy']:>9.4f}{r['best_metric']:>10.4g}{r['time_to_best']:>9.4f}"
                         + (f"  ! {r['warning']}" if r["warning"] else ""))
        return "\n".join(lines)

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "summary.csv"]
        written[0].write_text(self.csv())
        for label in self.occupancy:
            written.append(_write_rows(out / f"occupancy_{label}.csv", ["time", "fraction"],
                                       self.occupancy[label]))
            written.append(_write_rows(out / f"best_{label}.csv", ["time", "best_metric"],
                                       self.best_so_far[label]))
            rows = [(w, t, m) for w, pts in sorted(self.curves[label].items()) for t, m in pts]
            written.append(_write_rows(out / f"curves_{label}.csv", ["worker", "time", "metric"], rows))
        return written


def _write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def compare(summaries: Sequence[StudySummary], labels: Sequence[str]) -> Comparison:
    """Tabulate summaries side by side; ``d_*`` columns are differences to the first."""
    if len(summaries) < 2:
        raise ValueError("need at least two summaries to compare")
    return tabulate(summaries, labels)


def tabulate(summaries: Sequence[StudySummary], labels: Sequence[str]) -> Comparison:
    if not summaries:
        raise ValueError("nothing to tabulate")
    if len(labels) != len(summaries) or len(set(labels)) != len(labels):
        raise ValueError("need one distinct label per summary")
    ref = summaries[0]
    phases = {s.n_phases for s in summaries}
    rows = []
    for s, label in zip(summaries, labels):
        rows.append({
            "label": label, "makespan": s.makespan, "measured_alpha": s.measured_alpha,
            "occupancy": s.occupancy, "best_config": s.best[0], "best_metric": s.best[1],
            "time_to_best": s.time_to_best, "n_phases": s.n_phases,
            "d_makespan": s.makespan - ref.makespan,
            "d_measured_alpha": s.measured_alpha - ref.measured_alpha,
            "d_occupancy": s.occupancy - ref.occupancy,
            "d_time_to_best": s.time_to_best - ref.time_to_best,
            "warning": "" if len(phases) == 1 else f"n_phases differ across studies: {sorted(phases)}",
        })
    return Comparison(rows,
                      {l: s.occupancy_curve for s, l in zip(summaries, labels)},
                      {l: s.best_so_far for s, l in zip(summaries, labels)},
                      {l: s.curves for s, l in zip(summaries, labels)})
