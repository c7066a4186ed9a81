"""Domain types shared by the policy, simulator and orchestrator.

Everything here is an immutable value object except the random generator,
which is owned by a single run and consumed sequentially.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Union

import numpy as np


@dataclass(frozen=True)
class LogUniform:
    lo: float
    hi: float

    kind = "log_uniform"


@dataclass(frozen=True)
class QuantizedLogUniform:
    lo: float
    hi: float
    step: float = 1.0

    kind = "quantized_log_uniform"


@dataclass(frozen=True)
class Categorical:
    values: tuple

    kind = "categorical"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))


ParamDomain = Union[LogUniform, QuantizedLogUniform, Categorical]


@dataclass(frozen=True)
class SearchSpace:
    params: dict[str, ParamDomain]

    def names(self) -> list[str]:
        return list(self.params)


@dataclass(frozen=True)
class Configuration:
    config_id: int
    values: dict[str, Any]

    def to_json(self) -> str:
        return json.dumps(self.values, sort_keys=True, separators=(",", ":"))


class Decision(str, enum.Enum):
    CONTINUE = "continue"
    TERMINATE = "terminate"
    COMPLETE = "complete"


@dataclass(frozen=True)
class PhaseReport:
    worker_id: int
    config_id: int
    phase_index: int
    metric: float
    report_time: float = 0.0


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    speed: float  # time units per unit of work

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError(f"node {self.node_id}: speed must be > 0")


@dataclass(frozen=True)
class RunParams:
    w0: int
    r: float
    n_phases: int
    n_nodes: int
    seed: int = 0

    def __post_init__(self):
        for msg in validate_run(self):
            raise ValueError(msg)


def validate_run(run: RunParams) -> list[str]:
    problems = []
    if not 0 < run.r < 1:
        problems.append("r must be in (0,1)")
    if run.w0 < 1:
        problems.append("w0 must be >= 1")
    if run.n_phases < 1:
        problems.append("n_phases must be >= 1")
    if run.n_nodes < 1:
        problems.append("n_nodes must be >= 1")
    if not 0 <= run.seed < 2**64:
        problems.append("seed must be a 64-bit unsigned integer")
    return problems


def validate_domain(dom: ParamDomain) -> list[str]:
    problems = []
    if isinstance(dom, (LogUniform, QuantizedLogUniform)):
        if not (dom.lo > 0 and dom.hi > 0):
            problems.append("bounds must be positive")
        if dom.lo >= dom.hi:
            problems.append("lo >= hi")
        if isinstance(dom, QuantizedLogUniform) and not dom.step > 0:
            problems.append("step must be > 0")
    elif isinstance(dom, Categorical):
        if len(dom.values) == 0:
            problems.append("empty categorical")
        elif len(set(dom.values)) != len(dom.values):
            problems.append("duplicate categorical values")
    else:
        problems.append(f"unknown domain {type(dom).__name__}")
    return problems


def validate_space(space: SearchSpace) -> list[str]:
    """Return ``"<param>: <problem>"`` strings; an empty list means valid."""
    if not space.params:
        return ["empty search space"]
    return [f"{name}: {msg}" for name, dom in space.params.items()
            for msg in validate_domain(dom)]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.uint64(seed))


def _quantize(x: float, dom: QuantizedLogUniform) -> float:
    # Round to the nearest multiple of step, then clamp to the closed range
    # of multiples that lie inside [lo, hi].
    q = round(x / dom.step) * dom.step
    lo = math.ceil(dom.lo / dom.step - 1e-12) * dom.step
    hi = math.floor(dom.hi / dom.step + 1e-12) * dom.step
    q = min(max(q, lo), hi)
    if float(dom.step).is_integer():
        return int(round(q))
    return q


def sample_value(dom: ParamDomain, rng: np.random.Generator):
    if isinstance(dom, LogUniform):
        return float(math.exp(rng.uniform(math.log(dom.lo), math.log(dom.hi))))
    if isinstance(dom, QuantizedLogUniform):
        x = math.exp(rng.uniform(math.log(dom.lo), math.log(dom.hi)))
        return _quantize(x, dom)
    if isinstance(dom, Categorical):
        return dom.values[int(rng.integers(len(dom.values)))]
    raise TypeError(f"unknown domain {dom!r}")


def sample_configuration(space: SearchSpace, rng: np.random.Generator,
                         config_id: int) -> Configuration:
    """Draw one point of ``space``; parameters are drawn in declaration order."""
    values = {name: sample_value(dom, rng) for name, dom in space.params.items()}
    return Configuration(config_id, values)


# -- search-space files -------------------------------------------------------

def domain_from_dict(d: dict) -> ParamDomain:
    kind = d.get("kind")
    if kind == "log_uniform":
        return LogUniform(float(d["lo"]), float(d["hi"]))
    if kind == "quantized_log_uniform":
        return QuantizedLogUniform(float(d["lo"]), float(d["hi"]), float(d.get("step", 1.0)))
    if kind == "categorical":
        return Categorical(tuple(d["values"]))
    raise ValueError(f"unknown parameter kind {kind!r}")


def domain_to_dict(dom: ParamDomain) -> dict:
    if isinstance(dom, LogUniform):
        return {"kind": dom.kind, "lo": dom.lo, "hi": dom.hi}
    if isinstance(dom, QuantizedLogUniform):
        return {"kind": dom.kind, "lo": dom.lo, "hi": dom.hi, "step": dom.step}
    return {"kind": dom.kind, "values": list(dom.values)}


def space_from_dict(doc: dict) -> SearchSpace:
    if "params" not in doc or not isinstance(doc["params"], dict):
        raise ValueError("search space document needs a 'params' object")
    return SearchSpace({k: domain_from_dict(v) for k, v in doc["params"].items()})


def space_to_dict(space: SearchSpace) -> dict:
    return {"params": {k: domain_to_dict(v) for k, v in space.params.items()}}


def load_space(path) -> SearchSpace:
    with open(path) as f:
        space = space_from_dict(json.load(f))
    problems = validate_space(space)
    if problems:
        raise ValueError(f"{path}: " + "; ".join(problems))
    return space


GA3C_SPACE_PATH = Path(__file__).parent / "data" / "space_ga3c.json"


def ga3c_space() -> SearchSpace:
    return load_space(GA3C_SPACE_PATH)
