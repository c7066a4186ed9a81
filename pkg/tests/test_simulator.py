import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypertrick.core import NodeSpec, RunParams, ga3c_space
from hypertrick.policy import (GridSearchParams, HyperTrickParams, SuccessiveHalvingParams,
                               expected_workers)
from hypertrick.simulator import (Choice, MetricModel, Scenario, SchedulerKind,
                                  WorkerSpec, golden_scenario, load_scenario,
                                  monte_carlo_eviction, read_timeline, replay_decisions,
                                  save_scenario, scenario_from_dict, scenario_to_dict, simulate,
                                  synthetic_scenario, timeline_reports, validate_timeline)

HT = HyperTrickParams(16, 0.25, 4)
SH = SuccessiveHalvingParams(0.25, 4)
GRID = GridSearchParams(4)

# hand trace of the toy problem under HyperTrick: (worker, node, launch time)
HT_LAUNCHES = [(6, 0, 4.0), (7, 4, 4.2), (8, 1, 4.4), (9, 2, 4.8), (10, 3, 5.2),
               (11, 0, 6.0), (12, 2, 6.0), (13, 5, 6.0), (14, 0, 7.0), (15, 5, 7.5)]
HT_PHASES = {0: 4, 1: 4, 2: 4, 3: 4, 4: 3, 5: 4, 6: 2, 7: 4, 8: 4, 9: 1, 10: 2, 11: 1,
             12: 2, 13: 1, 14: 3, 15: 1}


def kills_by_phase(tl):
    out = {}
    for e in tl.events:
        if e.kind == "terminate":
            out.setdefault(e.phase_index, set()).add(e.worker_id)
    return out


# -- golden scenario ------------------------------------------------------------

def test_golden_scenario_shape(golden):
    assert len(golden.workers) == 16 and len(golden.nodes) == 6 and golden.n_phases == 4
    assert golden.workers[11].metrics == (11, 21, 31, 41)
    assert golden.workers[13].metrics == (6, 6, 6, 6)
    assert golden.nodes[3].speed == 1.3
    assert golden.validate() == []


def test_golden_hypertrick(golden):
    tl = simulate(golden, HT)
    assert tl.makespan() == pytest.approx(10.0, abs=1e-9)
    launches = [(e.worker_id, e.node_id, e.time) for e in tl.events
                if e.kind == "launch" and e.worker_id >= 6]
    assert [(w, n) for w, n, _ in launches] == [(w, n) for w, n, _ in HT_LAUNCHES]
    assert [t for *_, t in launches] == pytest.approx([t for *_, t in HT_LAUNCHES], abs=1e-9)
    assert tl.completed_phases() == HT_PHASES
    done = sorted(w for w, k in tl.outcome().items() if k == "complete")
    assert done == [0, 1, 2, 3, 5, 7, 8]


def test_golden_sh_dynamic(golden):
    tl = simulate(golden, SH, SchedulerKind.BARRIER_DYNAMIC)
    assert tl.makespan() == pytest.approx(11.5, abs=1e-9)
    assert kills_by_phase(tl) == {0: {4, 6, 9, 13}, 1: {1, 12, 15}, 2: {10}}


def test_golden_sh_static(golden):
    tl = simulate(golden, SH, SchedulerKind.BARRIER_STATIC)
    assert tl.makespan() == pytest.approx(14.7, abs=1e-9)
    assert kills_by_phase(tl) == {0: {4, 6, 9, 13}, 1: {1, 12, 15}, 2: {10}}
    # each worker stays on its first node
    home = {}
    for e in tl.events:
        if e.kind == "report":
            assert home.setdefault(e.worker_id, e.node_id) == e.node_id


def test_golden_grid(golden):
    tl = simulate(golden, GRID)
    assert tl.makespan() == pytest.approx(15.6, abs=1e-9)
    assert len(tl.reports()) == 64
    assert set(tl.outcome().values()) == {"complete"}


def test_policy_scheduler_mismatch(golden):
    with pytest.raises(ValueError, match="greedy"):
        simulate(golden, HT, SchedulerKind.BARRIER_DYNAMIC)
    with pytest.raises(ValueError, match="barrier"):
        simulate(golden, SH, SchedulerKind.GREEDY_REALLOC)


def test_byte_identical_timelines(golden, tmp_path):
    for params in (HT, SH, GRID):
        a, b = simulate(golden, params), simulate(golden, params)
        assert a.to_jsonl() == b.to_jsonl()
    a.write(tmp_path / "t.jsonl")
    back = read_timeline(tmp_path / "t.jsonl")
    assert back.to_jsonl() == a.to_jsonl()


def test_jsonl_fields(golden):
    line = simulate(golden, HT).to_jsonl().splitlines()[0]
    d = json.loads(line)
    assert list(d)[:7] == ["time", "kind", "worker_id", "node_id", "phase_index",
                           "metric", "decision"]
    assert '"time": 0.000000' in line


def test_decisions_emitted_at_barrier(golden):
    tl = simulate(golden, SH, SchedulerKind.BARRIER_DYNAMIC)
    last_report = {}
    for e in tl.events:
        if e.kind == "report":
            last_report[e.phase_index] = max(last_report.get(e.phase_index, 0), e.time)
        if e.kind == "decision":
            assert e.time == pytest.approx(last_report[e.phase_index])


def test_oracle_replay_golden(golden):
    for params, sched in ((HT, None), (SH, SchedulerKind.BARRIER_DYNAMIC),
                          (SH, SchedulerKind.BARRIER_STATIC), (GRID, None)):
        tl = simulate(golden, params, sched)
        assert replay_decisions(timeline_reports(tl), params) == tl.decisions()


def test_failure_injection(golden):
    workers = list(golden.workers)
    workers[2] = replace(workers[2], fail_at=(1, 0.5))
    sc = replace(golden, workers=tuple(workers))
    tl = simulate(sc, HT)
    fails = [e for e in tl.events if e.kind == "failure"]
    assert [(e.worker_id, e.phase_index) for e in fails] == [(2, 1)]
    # W2 starts phase 1 at 1.2 and dies half way through: node 2 frees at 1.8
    assert fails[0].time == pytest.approx(1.8)
    assert tl.outcome()[2] == "failure"
    assert validate_timeline(tl) is None
    assert replay_decisions(timeline_reports(tl), HT) == tl.decisions()


def test_scenario_roundtrip(golden, tmp_path):
    assert scenario_from_dict(scenario_to_dict(golden)) == golden
    save_scenario(golden, tmp_path / "s.json")
    assert load_scenario(tmp_path / "s.json") == golden


def test_invalid_scenario_rejected():
    bad = Scenario((NodeSpec(0, 1.0),), (WorkerSpec(0, (1.0,), (0.0,)),), 1)
    with pytest.raises(ValueError, match="work must be positive"):
        simulate(bad, GridSearchParams(1))


def test_validate_timeline_rejects_empty():
    from hypertrick.simulator import Timeline
    assert validate_timeline(Timeline([])) == "empty timeline"


# -- synthetic scenarios ----------------------------------------------------------

def test_degenerate_linear_model():
    run = RunParams(8, 0.25, 3, 2, seed=5)
    m = MetricModel(slope=Choice((0.0,)), intercept=Choice((5.0,)))
    sc = synthetic_scenario(m, run)
    assert all(w.metrics == (5.0, 5.0, 5.0) for w in sc.workers)


def test_cost_model_work():
    run = RunParams(4, 0.25, 2, 2, seed=1)
    space = ga3c_space()
    space.params["t_max"] = type(space.params["t_max"])(20, 20.0001, 1)
    sc = synthetic_scenario(MetricModel(cost=lambda c: c.values["t_max"] / 10), run, space)
    assert all(w.work == (2.0, 2.0) for w in sc.workers)


def test_synthetic_deterministic():
    run = RunParams(20, 0.25, 5, 3, seed=42)
    m = MetricModel(kind="noisy_curve", noise=1.0, fail_prob=0.2)
    assert synthetic_scenario(m, run) == synthetic_scenario(m, run)
    assert synthetic_scenario(m, run) != synthetic_scenario(m, replace(run, seed=43))


def test_synthetic_errors():
    run = RunParams(2, 0.25, 2, 1)
    with pytest.raises(ValueError):
        synthetic_scenario(MetricModel(kind="cubic"), run)
    with pytest.raises(ValueError):
        synthetic_scenario(MetricModel(cost=lambda c: 1.0), run)


# -- Monte Carlo --------------------------------------------------------------------

def test_mc_tiny_rate_keeps_everyone():
    means = monte_carlo_eviction(RunParams(20, 1e-9, 5, 1, seed=0), 20)
    # dcm threshold is W0 - 1 at r ~ 0, one reporter per phase is exposed
    assert means[0] == 20
    assert all(m >= 19 - p for p, m in enumerate(means))


def test_mc_single_phase():
    assert list(monte_carlo_eviction(RunParams(10, 0.25, 1, 1), 5)) == [10.0]


def test_mc_tracks_expectation():
    run = RunParams(100, 0.25, 5, 1, seed=1)
    means = monte_carlo_eviction(run, 2000)
    for p in range(5):
        e = expected_workers(100, 0.25, p)
        assert abs(means[p] - e) / e < 0.03


# -- properties on random scenarios -----------------------------------------------

@st.composite
def scenarios(draw, max_workers=12):
    n_nodes = draw(st.integers(1, 4))
    n_phases = draw(st.integers(1, 4))
    w0 = draw(st.integers(1, max_workers))
    speeds = draw(st.lists(st.sampled_from([0.5, 1.0, 1.1, 1.3, 2.0]),
                           min_size=n_nodes, max_size=n_nodes))
    metric = st.integers(0, 20).map(float)
    work = st.sampled_from([0.5, 1.0, 1.5, 2.0])
    workers = []
    for wid in range(w0):
        workers.append(WorkerSpec(wid, tuple(draw(st.lists(metric, min_size=n_phases, max_size=n_phases))),
                                  tuple(draw(st.lists(work, min_size=n_phases, max_size=n_phases)))))
    return Scenario(tuple(NodeSpec(i, s) for i, s in enumerate(speeds)), tuple(workers), n_phases)


def busy_nodes_at(tl, t):
    busy = set()
    for e in tl.events:
        if e.kind in ("report", "failure") and e.start < t < e.time:
            busy.add(e.node_id)
    return busy


@settings(max_examples=200, deadline=None)
@given(sc=scenarios(), r=st.floats(0.05, 0.9))
def test_greedy_never_idles_with_pending_work(sc, r):
    tl = simulate(sc, HyperTrickParams(len(sc.workers), r, sc.n_phases))
    assert validate_timeline(tl) is None
    launches = tl.launch_times()
    for w, t0 in launches.items():
        # every node was busy just before a delayed launch
        if t0 > 0:
            assert len(busy_nodes_at(tl, t0 - 1e-6)) == len(sc.nodes)
    assert set(launches) == set(range(len(sc.workers)))
    assert replay_decisions(timeline_reports(tl), HyperTrickParams(len(sc.workers), r, sc.n_phases)) \
        == tl.decisions()


@settings(max_examples=200, deadline=None)
@given(sc=scenarios(), f=st.floats(0.05, 0.9), static=st.booleans())
def test_barrier_conservation(sc, f, static):
    params = SuccessiveHalvingParams(f, sc.n_phases)
    kind = SchedulerKind.BARRIER_STATIC if static else SchedulerKind.BARRIER_DYNAMIC
    tl = simulate(sc, params, kind)
    assert validate_timeline(tl) is None
    out = tl.outcome()
    assert set(out) == set(range(len(sc.workers)))
    assert sum(v == "complete" for v in out.values()) >= 1
    # no phase p+1 work before the phase p barrier
    barrier = {}
    for e in tl.events:
        if e.kind == "decision":
            barrier[e.phase_index] = e.time
    for e in tl.reports():
        if e.phase_index > 0:
            assert e.start >= barrier[e.phase_index - 1] - 1e-9
    assert replay_decisions(timeline_reports(tl), params) == tl.decisions()


def test_mc_array_type():
    assert isinstance(monte_carlo_eviction(RunParams(5, 0.5, 2, 1), 3), np.ndarray)
