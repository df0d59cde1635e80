"""Capacity-planning workflow: corner bootstrap, BO candidate search,
model selection and plan generation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from capplan import gp as gpmod
from capplan.core import (
    CapPlanError,
    Configuration,
    JobGraph,
    ResourceBudget,
    ResourceProfile,
    UsageMetrics,
    derive_seed,
)
from capplan.estimator import CeParams, NeverSucceeded
from capplan.model import (
    DEFAULT_OVERPROVISION,
    DEFAULT_SLOTS_CAP,
    FAMILIES,
    CapacityModel,
    Observation,
    RankDeficient,
    best_model,
    fit_family,
    holdout_rmse,
    invert,
    loocv_scores,
    predict,
    select_model,
    split_by_slots,
)
from capplan.optimizer import SingleTaskCache, bids2, optimize, true_rates_from_metrics
from capplan.simulator import GroundTruthSpec

log = logging.getLogger(__name__)


class InsufficientObservations(CapPlanError):
    pass


class MissingProfileMetrics(CapPlanError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    pi_min: int
    pi_max: int = 48
    memory_values: Tuple[int, ...] = tuple(range(512, 4097, 512))

    def __post_init__(self):
        object.__setattr__(self, "memory_values", tuple(int(m) for m in self.memory_values))
        if self.pi_min < 1 or self.pi_min > self.pi_max:
            raise ValueError("need 1 <= pi_min <= pi_max")
        if not self.memory_values:
            raise ValueError("memory_values must be non-empty")
        if list(self.memory_values) != sorted(self.memory_values):
            raise ValueError("memory_values must be sorted")

    def check(self, graph: JobGraph) -> "SearchSpace":
        if self.pi_min < len(graph.operators):
            raise ValueError(f"pi_min={self.pi_min} below operator count {len(graph.operators)}")
        return self

    def grid(self) -> List[Tuple[int, int]]:
        return [(m, p) for p in range(self.pi_min, self.pi_max + 1) for m in self.memory_values]

    def normalizer(self) -> gpmod.Normalizer:
        return gpmod.Normalizer(self.memory_values[0], self.memory_values[-1], self.pi_min, self.pi_max)


@dataclass(frozen=True)
class ExplorerParams:
    min_extra_measurements: int = 3
    rmse_worsen_stop: float = 0.10
    max_measurements: int = 20
    overprovision: float = DEFAULT_OVERPROVISION

    def __post_init__(self):
        if self.min_extra_measurements < 1 or self.max_measurements < 1:
            raise ValueError("measurement counts must be positive")
        if not (self.rmse_worsen_stop > 0 and self.overprovision > 0):
            raise ValueError("rmse_worsen_stop and overprovision must be positive")


@dataclass
class Step:
    step: int
    kind: str
    memory_mb: int
    task_slots: int
    mst: float
    configuration: Configuration
    predicted_rate: float
    metrics: UsageMetrics
    cost: Optional[float]
    family: Optional[str]
    scores: Dict[str, float]
    ce_calls: int
    sim_seconds: float

    @property
    def observation(self) -> Observation:
        return Observation(self.memory_mb, self.task_slots, self.mst)


@dataclass
class ExplorationReport:
    graph: JobGraph
    steps: List[Step]
    model: CapacityModel
    selection_scores: Dict[str, float] = field(default_factory=dict)
    selection_fallback: bool = False

    @property
    def observations(self) -> List[Observation]:
        return [s.observation for s in self.steps]

    @property
    def co_calls(self) -> int:
        return len(self.steps)

    @property
    def ce_calls(self) -> int:
        return sum(s.ce_calls for s in self.steps)

    @property
    def total_sim_seconds(self) -> float:
        return sum(s.sim_seconds for s in self.steps)

    @property
    def rmse_trajectory(self) -> List[Optional[float]]:
        return [s.cost for s in self.steps]


@dataclass(frozen=True)
class PlanEntry:
    memory_mb: int
    task_slots: int
    configuration: Configuration
    predicted_rate: float


@dataclass(frozen=True)
class PlanResult:
    requested_rate: float
    overprovision: float
    entries: Tuple[PlanEntry, ...]


def bootstrap_corners(space: SearchSpace) -> List[ResourceBudget]:
    lo_m, hi_m = space.memory_values[0], space.memory_values[-1]
    return [
        ResourceBudget(space.pi_min, ResourceProfile(lo_m)),
        ResourceBudget(space.pi_min, ResourceProfile(hi_m)),
        ResourceBudget(space.pi_max, ResourceProfile(lo_m)),
        ResourceBudget(space.pi_max, ResourceProfile(hi_m)),
    ]


def _cost(observations: Sequence[Observation]) -> Tuple[Optional[float], Optional[str], Dict[str, float]]:
    if len(observations) < 4:
        return None, None, {}
    scores = loocv_scores(observations)
    family = best_model(observations)
    return scores[family], family, scores


def _record(steps: List[Step], kind: str, budget: ResourceBudget, co) -> Step:
    obs = [s.observation for s in steps]
    obs.append(Observation(budget.profile.memory_mb, budget.task_slots, co.mst.mst))
    cost, family, scores = _cost(obs)
    step = Step(
        step=len(steps) + 1,
        kind=kind,
        memory_mb=budget.profile.memory_mb,
        task_slots=budget.task_slots,
        mst=co.mst.mst,
        configuration=co.configuration,
        predicted_rate=co.predicted_rate,
        metrics=co.mst.metrics,
        cost=cost,
        family=family,
        scores=scores,
        ce_calls=co.ce_calls,
        sim_seconds=co.mst.sim_seconds + (co.single_task.sim_seconds if co.ce_calls > 1 else 0.0),
    )
    steps.append(step)
    log.debug("step %d %s M=%d P=%d mst=%.6g cost=%s", step.step, kind, step.memory_mb, step.task_slots, step.mst, cost)
    return step


def _gp_points(steps: Sequence[Step], normalize: gpmod.Normalizer):
    # bootstrap steps preceding the first computable cost share it
    first = next(s.cost for s in steps if s.cost is not None)
    return [
        (normalize(s.memory_mb, s.task_slots), s.cost if s.cost is not None else first)
        for s in steps
    ]


def explore(
    spec: GroundTruthSpec,
    graph: JobGraph,
    space: SearchSpace,
    explorer_params: ExplorerParams = ExplorerParams(),
    ce_params: CeParams = CeParams(),
    seed: int = 0,
    hyper_grid: gpmod.HyperGrid = gpmod.HyperGrid(),
) -> ExplorationReport:
    space.check(graph)
    cache = SingleTaskCache()
    steps: List[Step] = []

    for k, budget in enumerate(bootstrap_corners(space)):
        try:
            co = optimize(
                spec, graph, budget, ce_params, cache,
                force_single_task=budget.task_slots == space.pi_min,
                seed=derive_seed(seed, k),
            )
        except NeverSucceeded as exc:
            raise InsufficientObservations(f"corner {k + 1} failed: {exc}") from exc
        _record(steps, "corner", budget, co)

    normalize = space.normalizer()
    grid = space.grid()
    n_corners = len(steps)
    while len(steps) < explorer_params.max_measurements:
        points = _gp_points(steps, normalize)
        posterior = gpmod.fit(points, hyper_grid)
        best_cost = min(c for _, c in points)
        memory_mb, slots = gpmod.suggest(posterior, grid, best_cost, normalize)
        budget = ResourceBudget(slots, ResourceProfile(memory_mb))
        co = optimize(spec, graph, budget, ce_params, cache, seed=derive_seed(seed, len(steps)))
        prev = steps[-1].cost
        step = _record(steps, "search", budget, co)
        extra = len(steps) - n_corners
        if extra >= explorer_params.min_extra_measurements and prev is not None and prev > 0:
            if step.cost > prev * (1.0 + explorer_params.rmse_worsen_stop):
                break

    observations = [s.observation for s in steps]
    fallback = False
    selection_scores: Dict[str, float] = {}
    try:
        train, test = split_by_slots(observations)
        selection_scores = {f: holdout_rmse(train, test, f) for f in FAMILIES}
        model = select_model(observations)
    except (RankDeficient, ValueError):
        # low-slot half cannot identify a model: fall back to the LOOCV winner
        fallback = True
        model = fit_family(observations, best_model(observations))
    return ExplorationReport(graph, steps, model, selection_scores, fallback)


def plan(
    report: ExplorationReport,
    requested_rate: float,
    profiles: Sequence[ResourceProfile],
    slots_cap: int = DEFAULT_SLOTS_CAP,
    overprovision: float = DEFAULT_OVERPROVISION,
) -> PlanResult:
    ops = report.graph.operators
    entries = []
    for profile in profiles:
        candidates = [s for s in report.steps if s.memory_mb == profile.memory_mb]
        if not candidates:
            raise MissingProfileMetrics(f"no observation at {profile.memory_mb} MB")
        # largest slot count; most recent among equals
        source = max(candidates, key=lambda s: (s.task_slots, s.step))
        slots = max(invert(report.model, profile.memory_mb, requested_rate, overprovision, slots_cap), len(ops))
        config, _ = bids2(true_rates_from_metrics(source.metrics), slots, ops)
        entries.append(PlanEntry(profile.memory_mb, slots, config, predict(report.model, profile.memory_mb, slots)))
    return PlanResult(requested_rate, overprovision, tuple(entries))
