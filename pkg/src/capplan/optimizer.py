"""Optimal per-operator parallelism for a bounded slot budget.

The allocation problem is max over integer pi >= 1 with sum(pi) == P of
min_i pi_i * o_i / r_i. Each term is increasing in its own pi_i only, so
handing the next slot to the current bottleneck is exact.
"""

from __future__ import annotations

import heapq
import threading
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

from capplan.core import (
    CapPlanError,
    Configuration,
    InsufficientSlots,
    JobGraph,
    MstResult,
    ResourceBudget,
    UsageMetrics,
    derive_seed,
)
from capplan.estimator import CeParams, estimate_mst
from capplan.simulator import GroundTruthSpec

__all__ = [
    "InsufficientSlots",
    "ZeroBusyness",
    "TrueRates",
    "CoResult",
    "SingleTaskCache",
    "true_rates_from_metrics",
    "bids2",
    "optimize",
]


class ZeroBusyness(CapPlanError):
    pass


@dataclass(frozen=True)
class TrueRates:
    o: Mapping[str, float]
    r: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(self, "o", dict(self.o))
        object.__setattr__(self, "r", dict(self.r))
        if set(self.o) != set(self.r):
            raise ValueError("o and r must cover the same operators")
        for op in self.o:
            if not (self.o[op] > 0 and self.r[op] > 0):
                raise ValueError(f"rates for {op!r} must be positive")


@dataclass(frozen=True)
class CoResult:
    configuration: Configuration
    predicted_rate: float
    mst: MstResult
    single_task: Optional[MstResult] = None
    ce_calls: int = 1


def true_rates_from_metrics(m: UsageMetrics) -> TrueRates:
    """Per-task rate extrapolated to full busyness."""
    o, r = {}, {}
    for op, om in m.per_operator.items():
        if om.busyness <= 0:
            raise ZeroBusyness(f"operator {op!r} reported zero busyness")
        o[op] = om.actual_input_rate / (om.parallelism * om.busyness)
        r[op] = m.ratios[op]
    return TrueRates(o, r)


def bids2(rates: TrueRates, budget_slots: int, order: Optional[Sequence[str]] = None) -> Tuple[Configuration, float]:
    """Greedy water-filling; ties go to the earlier operator in ``order``."""
    ops = list(order) if order is not None else list(rates.o)
    if budget_slots < len(ops):
        raise InsufficientSlots(f"{budget_slots} slots for {len(ops)} operators")
    unit = [rates.o[op] / rates.r[op] for op in ops]
    pi = [1] * len(ops)
    heap = [(unit[i], i) for i in range(len(ops))]
    heapq.heapify(heap)
    for _ in range(budget_slots - len(ops)):
        _, i = heapq.heappop(heap)
        pi[i] += 1
        heapq.heappush(heap, (pi[i] * unit[i], i))
    predicted = min(p * u for p, u in zip(pi, unit))
    return Configuration(dict(zip(ops, pi))), predicted


@dataclass
class SingleTaskCache:
    """Single-task metrics per (graph, profile, CE params)."""

    _entries: Dict[Tuple, MstResult] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @staticmethod
    def key(graph: JobGraph, budget: ResourceBudget, params: CeParams) -> Tuple:
        return (graph.identity(), budget.profile, params)

    def get(self, key) -> Optional[MstResult]:
        return self._entries.get(key)

    def put(self, key, result: MstResult) -> None:
        with self._lock:
            self._entries[key] = result

    def __len__(self):
        return len(self._entries)


def optimize(
    spec: GroundTruthSpec,
    graph: JobGraph,
    budget: ResourceBudget,
    ce_params: CeParams,
    cache: SingleTaskCache,
    force_single_task: bool = False,
    seed: int = 0,
) -> CoResult:
    budget.check(graph)
    key = SingleTaskCache.key(graph, budget, ce_params)
    single = None if force_single_task else cache.get(key)
    ce_calls = 0
    if single is None:
        single = estimate_mst(spec, Configuration.ones(graph), budget.profile, ce_params, seed=derive_seed(seed, 0))
        ce_calls += 1
        cache.put(key, single)

    rates = true_rates_from_metrics(single.metrics)
    config, predicted = bids2(rates, budget.task_slots, graph.operators)
    measured = estimate_mst(spec, config, budget.profile, ce_params, seed=derive_seed(seed, 1))
    ce_calls += 1
    return CoResult(config, predicted, measured, single, ce_calls)
