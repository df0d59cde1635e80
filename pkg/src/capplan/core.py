"""Shared domain types for capacity planning.

All types here are immutable value objects. Mappings stored on frozen
dataclasses are never mutated after construction.
"""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

DEFAULT_GRANULARITY_MB = 512


class CapPlanError(Exception):
    """Base class for all domain errors."""


class GraphError(CapPlanError):
    pass


class CyclicGraph(GraphError):
    pass


class DisconnectedOperator(GraphError):
    pass


class MultipleSources(GraphError):
    pass


class ConfigurationMismatch(CapPlanError):
    pass


class InsufficientSlots(CapPlanError):
    pass


@dataclass(frozen=True)
class JobGraph:
    """Logical query graph. ``operators`` excludes the source and the sink."""

    operators: Tuple[str, ...]
    edges: Tuple[Tuple[str, str], ...]
    source: str = "source"
    sink: str = "sink"

    def __post_init__(self):
        object.__setattr__(self, "operators", tuple(self.operators))
        object.__setattr__(self, "edges", tuple((u, v) for u, v in self.edges))

    @property
    def nodes(self) -> Tuple[str, ...]:
        return (self.source,) + self.operators + (self.sink,)

    def predecessors(self, node: str) -> List[str]:
        return [u for u, v in self.edges if v == node]

    def successors(self, node: str) -> List[str]:
        return [v for u, v in self.edges if u == node]

    def topological_order(self) -> List[str]:
        """Operators only, in an order compatible with the edges."""
        ts = graphlib.TopologicalSorter({n: set() for n in self.nodes})
        for u, v in self.edges:
            ts.add(v, u)
        order = list(ts.static_order())
        return [n for n in order if n in set(self.operators)]

    def identity(self) -> Tuple:
        return (self.operators, self.edges, self.source, self.sink)


def validate_graph(graph: JobGraph) -> JobGraph:
    ops = graph.operators
    if not ops:
        raise GraphError("graph has no operators")
    for name in ops:
        if not name:
            raise GraphError("operator names must be non-empty")
    if len(set(ops)) != len(ops):
        raise GraphError("operator names must be unique")
    if graph.source in ops or graph.sink in ops or graph.source == graph.sink:
        raise GraphError("source and sink must be distinct from operators")

    known = set(graph.nodes)
    for u, v in graph.edges:
        if u not in known:
            # an undeclared node feeding the graph is a second entry point
            raise MultipleSources(f"edge from undeclared node {u!r}")
        if v not in known:
            raise GraphError(f"edge to undeclared node {v!r}")
        if v == graph.source:
            raise GraphError("edges into the source are not allowed")
        if u == graph.sink:
            raise GraphError("edges out of the sink are not allowed")

    try:
        graph.topological_order()
    except graphlib.CycleError as exc:
        raise CyclicGraph(f"cycle through {exc.args[1]}") from None

    for name in ops:
        if not graph.predecessors(name):
            raise DisconnectedOperator(f"operator {name!r} has no incoming edge")

    forward = _reachable(graph, graph.source, graph.successors)
    backward = _reachable(graph, graph.sink, graph.predecessors)
    for name in ops:
        if name not in forward:
            raise DisconnectedOperator(f"operator {name!r} unreachable from source")
        if name not in backward:
            raise DisconnectedOperator(f"sink unreachable from operator {name!r}")
    return graph


def _reachable(graph: JobGraph, start: str, step) -> set:
    seen = {start}
    stack = [start]
    while stack:
        for nxt in step(stack.pop()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def derive_seed(seed: int, *stream: int) -> int:
    """Independent, reproducible child seed for a named stream."""
    return int(np.random.SeedSequence([int(seed), *stream]).generate_state(1)[0])


def linear_graph(names: Sequence[str]) -> JobGraph:
    """source -> names[0] -> ... -> names[-1] -> sink"""
    chain = ["source", *names, "sink"]
    return JobGraph(tuple(names), tuple(zip(chain[:-1], chain[1:])))


@dataclass(frozen=True)
class ResourceProfile:
    memory_mb: int
    granularity_mb: int = DEFAULT_GRANULARITY_MB

    def __post_init__(self):
        if self.memory_mb <= 0:
            raise ValueError(f"memory_mb must be positive, got {self.memory_mb}")
        if self.granularity_mb <= 0 or self.memory_mb % self.granularity_mb:
            raise ValueError(
                f"memory_mb={self.memory_mb} is not a multiple of {self.granularity_mb} MB"
            )


@dataclass(frozen=True)
class ResourceBudget:
    task_slots: int
    profile: ResourceProfile

    def check(self, graph: JobGraph) -> "ResourceBudget":
        if self.task_slots < len(graph.operators):
            raise InsufficientSlots(
                f"{self.task_slots} slots for {len(graph.operators)} operators"
            )
        return self


@dataclass(frozen=True)
class Configuration:
    parallelism: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "parallelism", dict(self.parallelism))
        for op, p in self.parallelism.items():
            if int(p) != p or p < 1:
                raise ValueError(f"parallelism of {op!r} must be a positive integer")

    @classmethod
    def ones(cls, graph: JobGraph) -> "Configuration":
        return cls({op: 1 for op in graph.operators})

    @property
    def total(self) -> int:
        return sum(self.parallelism.values())

    def __getitem__(self, op: str) -> int:
        return self.parallelism[op]

    def check(self, graph: JobGraph) -> "Configuration":
        if set(self.parallelism) != set(graph.operators):
            missing = sorted(set(graph.operators) - set(self.parallelism))
            extra = sorted(set(self.parallelism) - set(graph.operators))
            raise ConfigurationMismatch(f"missing={missing} unexpected={extra}")
        return self

    def as_list(self, graph: JobGraph) -> List[int]:
        return [self.parallelism[op] for op in graph.operators]


@dataclass(frozen=True)
class OperatorMetrics:
    actual_input_rate: float
    busyness: float
    per_task_busyness: Tuple[float, ...]
    parallelism: int = 1

    @property
    def max_task_busyness(self) -> float:
        return max(self.per_task_busyness)


@dataclass(frozen=True)
class UsageMetrics:
    per_operator: Mapping[str, OperatorMetrics]
    source_rate: float
    ratios: Mapping[str, float]


@dataclass(frozen=True)
class MstResult:
    mst: float
    achieved_ratio: float
    ratio_stddev: float
    metrics: Optional[UsageMetrics]
    iterations_used: int
    source_saturated: bool = False
    probes: Tuple[Tuple[float, bool], ...] = field(default=())
    sim_seconds: float = 0.0
