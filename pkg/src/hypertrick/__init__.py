"""HyperTrick early stopping, its Successive Halving / Hyperband / Grid baselines,
a discrete-event cluster simulator and a process orchestrator."""

from .core import (Categorical, Configuration, Decision, LogUniform, NodeSpec,
                   PhaseReport, QuantizedLogUniform, RunParams, SearchSpace,
                   ga3c_space, load_space, sample_configuration, validate_space)
from .policy import (Bracket, GridSearchParams, HyperTrickParams, PhaseStats,
                     SuccessiveHalvingParams, bracket_alpha, dcm_threshold,
                     expected_alpha, expected_workers, hyperband_alpha,
                     hyperband_brackets, hypertrick_decide, min_alpha, quantile,
                     solve_eviction_rate, successive_halving_cut)
from .simulator import (Scenario, SchedulerKind, Timeline, golden_scenario,
                        monte_carlo_eviction, simulate, synthetic_scenario)
from .analysis import StudySummary, compare, summarize
from .orchestrator import KnowledgeStore, handle_report, replay_store, run_study

__version__ = "0.1.0"
