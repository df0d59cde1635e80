"""Deterministic discrete-time testbed standing in for a small stream cluster.

The planning modules only ever see what :func:`sample_metrics` reports; the
ground truth below is the simulator's private business.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from capplan.core import (
    CapPlanError,
    Configuration,
    JobGraph,
    OperatorMetrics,
    ResourceProfile,
    UsageMetrics,
    validate_graph,
)

# cold-start absorption: cap_cold = COLD_START_FACTOR * cap_steady
COLD_START_FACTOR = 2.0
REDEPLOY_SECONDS = 60.0
NOISE_CLIP_SIGMAS = 3.0


class InsufficientHistory(CapPlanError):
    pass


@dataclass(frozen=True)
class OperatorGroundTruth:
    base_rate: float
    memory_knee_mb: float = 512.0
    memory_exponent: float = 0.0
    scaling_exponent: float = 0.0
    skew_factor: float = 0.0
    noise_level: float = 0.0
    selectivity: float = 1.0
    # aggregate capacity grows as 1 + log_gain * ln(pi) when > 0
    log_gain: float = 0.0

    def __post_init__(self):
        if not self.base_rate > 0:
            raise ValueError("base_rate must be positive")
        if not self.memory_knee_mb > 0:
            raise ValueError("memory_knee_mb must be positive")
        for name in ("memory_exponent", "skew_factor", "noise_level", "log_gain"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")
        if not 0 <= self.scaling_exponent < 1:
            raise ValueError("scaling_exponent must lie in [0, 1)")
        if self.log_gain > 0 and self.scaling_exponent > 0:
            raise ValueError("log_gain and scaling_exponent are mutually exclusive")
        if not (math.isfinite(self.selectivity) and self.selectivity > 0):
            raise ValueError("selectivity must be positive")


@dataclass(frozen=True)
class GroundTruthSpec:
    graph: JobGraph
    per_operator: Mapping[str, OperatorGroundTruth]
    max_injectable_rate: float
    warmup_time_constant_s: float = 20.0
    tick_seconds: float = 5.0

    def __post_init__(self):
        validate_graph(self.graph)
        object.__setattr__(self, "per_operator", dict(self.per_operator))
        if set(self.per_operator) != set(self.graph.operators):
            raise ValueError("ground truth must cover every operator exactly once")
        if not self.tick_seconds > 0:
            raise ValueError("tick_seconds must be positive")
        if not self.max_injectable_rate > 0:
            raise ValueError("max_injectable_rate must be positive")
        if self.warmup_time_constant_s < 0:
            raise ValueError("warmup_time_constant_s must be >= 0")

    @property
    def source_noise(self) -> float:
        return max(gt.noise_level for gt in self.per_operator.values())

    def ratios(self) -> Dict[str, float]:
        return structural_ratios(self.graph, self.per_operator)


def structural_ratios(graph: JobGraph, per_operator: Mapping[str, OperatorGroundTruth]) -> Dict[str, float]:
    """Input rate of each operator relative to the source rate.

    Each node forwards ``selectivity`` events per consumed event on every
    outgoing edge; inbound contributions add up.
    """
    inflow = {n: 0.0 for n in graph.nodes}
    inflow[graph.source] = 1.0
    order = [graph.source] + graph.topological_order()
    for node in order:
        sel = 1.0 if node == graph.source else per_operator[node].selectivity
        out = inflow[node] * sel
        for nxt in graph.successors(node):
            inflow[nxt] += out
    return {op: inflow[op] for op in graph.operators}


def effective_task_capacity(gt: OperatorGroundTruth, profile: ResourceProfile, parallelism: int) -> float:
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    pi = float(parallelism)
    memory = min(1.0, (profile.memory_mb / gt.memory_knee_mb) ** gt.memory_exponent)
    if gt.log_gain > 0:
        scale = (1.0 + gt.log_gain * math.log(pi)) / pi
    else:
        scale = pi ** (-gt.scaling_exponent)
    skew = 1.0 + gt.skew_factor * (1.0 - 1.0 / pi)
    return gt.base_rate * memory * scale / skew


def true_mst(
    spec: GroundTruthSpec,
    config: Configuration,
    profile: ResourceProfile,
    *,
    source_cap: bool = True,
) -> float:
    """Oracle MST. ``source_cap=False`` drops the testbed injection limit,
    which is what a production deployment of the same plan would face."""
    config.check(spec.graph)
    ratios = spec.ratios()
    best = math.inf
    for op in spec.graph.operators:
        pi = config[op]
        cap = pi * effective_task_capacity(spec.per_operator[op], profile, pi)
        best = min(best, cap / ratios[op])
    if source_cap:
        best = min(best, spec.max_injectable_rate)
    return best


@dataclass
class TickRecord:
    index: int
    clock_s: float
    target_rate: float
    offered: float
    processed: float
    capacity_multiplier: float
    pending_after: float


@dataclass(frozen=True)
class SampleResult:
    metrics: UsageMetrics
    achieved_ratio: float
    ratio_stddev: float
    pending_records: float
    first_tick: int
    last_tick: int


@dataclass
class Deployment:
    spec: GroundTruthSpec
    configuration: Configuration
    profile: ResourceProfile
    seed: int
    sim_clock_s: float = 0.0
    target_rate: float = 0.0
    pending_records: float = 0.0
    tick_index: int = 0
    cumulative_offered: float = 0.0
    cumulative_processed: float = 0.0
    history: List[TickRecord] = field(default_factory=list)
    sample_log: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        graph = self.spec.graph
        self._ops = list(graph.operators)
        self._ratios = self.spec.ratios()
        self._pi = {op: self.configuration[op] for op in self._ops}
        self._task_cap = {
            op: effective_task_capacity(self.spec.per_operator[op], self.profile, self._pi[op])
            for op in self._ops
        }
        self._steady_capacity = min(
            self._pi[op] * self._task_cap[op] / self._ratios[op] for op in self._ops
        )

    @property
    def steady_capacity(self) -> float:
        return self._steady_capacity

    def capacity_multiplier(self, clock_s: float) -> float:
        tau = self.spec.warmup_time_constant_s
        if tau <= 0:
            return 1.0
        return 1.0 + (COLD_START_FACTOR - 1.0) * math.exp(-clock_s / tau)


def deploy(spec: GroundTruthSpec, config: Configuration, profile: ResourceProfile, seed: int) -> Deployment:
    config.check(spec.graph)
    return Deployment(spec=spec, configuration=config, profile=profile, seed=int(seed))


def set_target_rate(d: Deployment, rate: float) -> None:
    if rate < 0:
        raise ValueError("target rate must be >= 0")
    d.target_rate = float(rate)


def tick(d: Deployment, n_ticks: int = 1) -> None:
    if n_ticks < 1:
        raise ValueError("n_ticks must be >= 1")
    dt = d.spec.tick_seconds
    offered_rate = min(d.target_rate, d.spec.max_injectable_rate)
    for _ in range(n_ticks):
        d.tick_index += 1
        d.sim_clock_s = d.tick_index * dt
        mult = d.capacity_multiplier(d.sim_clock_s)
        offered = offered_rate * dt
        processed = min(mult * d.steady_capacity * dt, d.pending_records + offered)
        d.pending_records = max(0.0, d.pending_records + offered - processed)
        d.cumulative_offered += offered
        d.cumulative_processed += processed
        d.history.append(
            TickRecord(d.tick_index, d.sim_clock_s, d.target_rate, offered, processed, mult, d.pending_records)
        )


def _tick_noise(d: Deployment, tick_index: int, size: int) -> np.ndarray:
    rng = np.random.default_rng([d.seed, tick_index])
    return rng.standard_normal(size)


def _perturb(value, z, eps):
    if eps <= 0:
        return value
    return value * (1.0 + np.clip(eps * z, -NOISE_CLIP_SIGMAS * eps, NOISE_CLIP_SIGMAS * eps))


def sample_metrics(d: Deployment, window_ticks: int) -> SampleResult:
    """Average the last ``window_ticks`` ticks into usage metrics."""
    if window_ticks < 1:
        raise ValueError("window_ticks must be >= 1")
    if len(d.history) < window_ticks:
        raise InsufficientHistory(f"{len(d.history)} ticks recorded, {window_ticks} requested")
    window = d.history[-window_ticks:]
    dt = d.spec.tick_seconds
    ops = d._ops
    n_tasks = sum(d._pi[op] for op in ops)
    eps_src = d.spec.source_noise

    src_rates, achieved = [], []
    op_rates = {op: [] for op in ops}
    task_busy = {op: [] for op in ops}
    for rec in window:
        z = _tick_noise(d, rec.index, 1 + len(ops) + n_tasks)
        true_src = rec.processed / dt
        if rec.processed < rec.offered:
            # throttled by backpressure: the achieved rate jitters, never above the limiter
            measured_src = min(rec.offered / dt, float(_perturb(true_src, z[0], eps_src)))
        else:
            measured_src = true_src
        src_rates.append(measured_src)
        achieved.append(1.0 if rec.target_rate <= 0 else measured_src / rec.target_rate)
        k = 1 + len(ops)
        for j, op in enumerate(ops):
            eps = d.spec.per_operator[op].noise_level
            rate = d._ratios[op] * true_src
            op_rates[op].append(float(_perturb(rate, z[1 + j], eps)))
            pi = d._pi[op]
            busy = (rate / pi) / (d._task_cap[op] * rec.capacity_multiplier)
            per_task = np.clip(_perturb(np.full(pi, busy), z[k:k + pi], eps), 0.0, 1.0)
            task_busy[op].append(per_task)
            k += pi

    source_rate = float(np.mean(src_rates))
    per_operator = {}
    ratios = {}
    for op in ops:
        rate = float(np.mean(op_rates[op]))
        per_task = np.mean(np.array(task_busy[op]), axis=0)
        per_operator[op] = OperatorMetrics(
            actual_input_rate=rate,
            busyness=float(np.mean(per_task)),
            per_task_busyness=tuple(float(b) for b in per_task),
            parallelism=d._pi[op],
        )
        ratios[op] = rate / source_rate if source_rate > 0 else 0.0

    first, last = window[0].index, window[-1].index
    d.sample_log.append((first, last))
    return SampleResult(
        metrics=UsageMetrics(per_operator, source_rate, ratios),
        # the rate limiter caps emission at the target: ratio never exceeds 1
        achieved_ratio=min(1.0, float(np.mean(achieved))),
        ratio_stddev=float(np.std(achieved)),
        pending_records=d.pending_records,
        first_tick=first,
        last_tick=last,
    )
