"""Early-stopping decision rules and the closed-form statistics behind them.

The quantile convention used everywhere is linear interpolation between
order statistics at fractional index ``q * (n - 1)``; a report under
evaluation is part of its own pool, and a worker is evicted only when its
metric is strictly below the cut-off.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .core import Decision, PhaseReport


# -- statistics ---------------------------------------------------------------

def _interp_sorted(v: Sequence[float], q: float) -> float:
    h = q * (len(v) - 1)
    lo = math.floor(h)
    hi = math.ceil(h)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


def quantile(values: Iterable[float], q: float) -> float:
    v = sorted(values)
    if not v:
        raise ValueError("quantile of an empty pool")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must be in [0, 1]")
    return _interp_sorted(v, q)


@dataclass
class PhaseStats:
    """Metrics reported so far, per phase, in processing order.

    Pools are never pruned: reports of workers that were later terminated
    still count towards the quantile of their phase.
    """
    metrics: dict[int, list[float]] = field(default_factory=dict)
    _sorted: dict[int, list[float]] = field(default_factory=dict, repr=False)

    def count(self, phase: int) -> int:
        return len(self.metrics.get(phase, ()))

    @property
    def report_count(self) -> int:
        return sum(len(v) for v in self.metrics.values())

    def add(self, phase: int, metric: float) -> None:
        self.metrics.setdefault(phase, []).append(metric)
        bisect.insort(self._sorted.setdefault(phase, []), metric)

    def quantile(self, phase: int, q: float) -> float:
        return _interp_sorted(self._sorted[phase], q)

    def copy(self) -> "PhaseStats":
        return PhaseStats({p: list(v) for p, v in self.metrics.items()},
                          {p: list(v) for p, v in self._sorted.items()})


# -- HyperTrick ---------------------------------------------------------------

@dataclass(frozen=True)
class HyperTrickParams:
    w0: int
    r: float
    n_phases: int

    def __post_init__(self):
        if not 0 < self.r < 1:
            raise ValueError("r must be in (0,1)")
        if self.w0 < 1 or self.n_phases < 1:
            raise ValueError("w0 and n_phases must be >= 1")

    @property
    def q_wsm(self) -> float:
        return math.sqrt(self.r)


def expected_workers(w0: int, r: float, p: int) -> float:
    """Expected number of workers alive at the start of phase ``p``."""
    return w0 * (1.0 - r) ** p


def dcm_threshold(w0: int, r: float, p: int) -> int:
    """Reports accepted unconditionally at phase ``p`` before selection starts."""
    # The small epsilon keeps exact products such as 8.0 from flooring to 7.
    return math.floor(w0 * (1.0 - math.sqrt(r)) * (1.0 - r) ** p + 1e-9)


def _finish(report: PhaseReport, n_phases: int) -> Decision:
    return Decision.COMPLETE if report.phase_index == n_phases - 1 else Decision.CONTINUE


def hypertrick_decide(params: HyperTrickParams, stats: PhaseStats,
                      report: PhaseReport) -> Decision:
    """Record ``report`` in ``stats`` and return the HyperTrick verdict.

    The first ``dcm_threshold`` reporters of a phase always continue (data
    collection). Every later reporter is terminated iff its metric is strictly
    below the sqrt(r) quantile of all metrics recorded at that phase,
    its own included.
    """
    p = report.phase_index
    if not 0 <= p < params.n_phases:
        raise ValueError(f"phase_index {p} outside [0, {params.n_phases - 1}]")
    prior = stats.count(p)
    stats.add(p, report.metric)
    if prior < dcm_threshold(params.w0, params.r, p):
        return _finish(report, params.n_phases)
    if report.metric < stats.quantile(p, params.q_wsm):
        return Decision.TERMINATE
    return _finish(report, params.n_phases)


# -- Successive Halving / Grid -------------------------------------------------

@dataclass(frozen=True)
class SuccessiveHalvingParams:
    evict_fraction: float
    n_phases: int

    def __post_init__(self):
        if not 0 < self.evict_fraction < 1:
            raise ValueError("evict_fraction must be in (0,1)")
        if self.n_phases < 1:
            raise ValueError("n_phases must be >= 1")


@dataclass(frozen=True)
class GridSearchParams:
    n_phases: int


def successive_halving_cut(metrics_of_survivors: Sequence[tuple[int, float]],
                           evict_fraction: float) -> set[int]:
    if not metrics_of_survivors:
        raise ValueError("no survivors to cut")
    cut = quantile([m for _, m in metrics_of_survivors], evict_fraction)
    return {w for w, m in metrics_of_survivors if m < cut}


def grid_decide(params: GridSearchParams, report: PhaseReport) -> Decision:
    return _finish(report, params.n_phases)


# -- Hyperband ----------------------------------------------------------------

@dataclass(frozen=True)
class Bracket:
    s: int
    rounds: tuple[tuple[int, int], ...]  # (configurations, resource per configuration)

    @property
    def n0(self) -> int:
        return self.rounds[0][0]


def canonical_n0(eta: int, R: int) -> list[int]:
    """Initial configuration counts of the standard Hyperband budget, s = s_max..0."""
    s_max = _s_max(eta, R)
    return [math.ceil((s_max + 1) / (s + 1) * eta ** s) for s in range(s_max, -1, -1)]


def _s_max(eta: int, R: int) -> int:
    s = 0
    while eta ** (s + 1) <= R:
        s += 1
    return s


def hyperband_brackets(eta: int, R: int,
                       n0_override: Optional[Sequence[int]] = None) -> list[Bracket]:
    if eta < 2:
        raise ValueError("eta must be >= 2")
    if R < 1:
        raise ValueError("R must be >= 1")
    s_max = _s_max(eta, R)
    n0s = list(n0_override) if n0_override is not None else canonical_n0(eta, R)
    if len(n0s) != s_max + 1:
        raise ValueError(f"expected {s_max + 1} initial counts, got {len(n0s)}")
    brackets = []
    for n0, s in zip(n0s, range(s_max, -1, -1)):
        rounds = []
        n = n0
        for i in range(s + 1):
            if n < 1:
                raise ValueError(f"bracket s={s} runs out of configurations at round {i}")
            rounds.append((n, R * eta ** i // eta ** s))
            n = n // eta
        brackets.append(Bracket(s, tuple(rounds)))
    return brackets


def bracket_alpha(b: Bracket, R: int) -> float:
    # Work actually performed over the work of running every initial
    # configuration to the full budget R.
    return sum(n * r for n, r in b.rounds) / (b.n0 * R)


def hyperband_alpha(brackets: Sequence[Bracket], R: int) -> float:
    done = sum(n * r for b in brackets for n, r in b.rounds)
    return done / sum(b.n0 * R for b in brackets)


# -- completion-rate formulas -------------------------------------------------

def expected_alpha(r: float, n_phases: int) -> float:
    return (1.0 - (1.0 - r) ** n_phases) / (r * n_phases)


def min_alpha(r: float, n_phases: int) -> float:
    return (1.0 - math.sqrt(r)) * expected_alpha(r, n_phases)


class UnachievableTarget(ValueError):
    pass


SOLVE_EPS = 1e-6


def solve_eviction_rate(target_alpha: float, n_phases: int, tol: float = 1e-13) -> float:
    """Bisect for r in (eps, 1 - eps) such that expected_alpha(r) == target.

    expected_alpha is strictly decreasing in r for n_phases >= 2, so the
    achievable targets are the open interval between its values at the ends.
    """
    lo, hi = SOLVE_EPS, 1.0 - SOLVE_EPS
    top, bottom = expected_alpha(lo, n_phases), expected_alpha(hi, n_phases)
    if n_phases < 2 or not bottom < target_alpha < top:
        raise UnachievableTarget(
            f"unachievable target alpha {target_alpha} for {n_phases} phases "
            f"(achievable range ({bottom:.6g}, {top:.6g}))")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected_alpha(mid, n_phases) > target_alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)
