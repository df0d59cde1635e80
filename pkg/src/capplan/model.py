"""Surrogate capacity models: capacity = a*phi(M) + b*phi(Pi) + c."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from capplan.core import CapPlanError

FAMILIES = ("linear", "log", "sqrt")
DEFAULT_OVERPROVISION = 1.10
DEFAULT_SLOTS_CAP = 10_000

_PHI: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "linear": lambda v: v,
    "log": np.log,
    "sqrt": np.sqrt,
}


class RankDeficient(CapPlanError):
    pass


class Unreachable(CapPlanError):
    pass


@dataclass(frozen=True)
class Observation:
    memory_mb: float
    task_slots: int
    mst: float

    def __post_init__(self):
        if not (self.memory_mb > 0 and self.task_slots > 0 and self.mst > 0):
            raise ValueError("observation fields must be positive")


ObservationSet = Sequence[Observation]


@dataclass(frozen=True)
class CapacityModel:
    family: str
    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c)):
            raise ValueError("coefficients must be finite")


def _design(memory, slots, family: str) -> np.ndarray:
    phi = _PHI[family]
    m = phi(np.asarray(memory, dtype=float))
    p = phi(np.asarray(slots, dtype=float))
    return np.column_stack([m, p, np.ones_like(m)])


def _arrays(d: ObservationSet):
    return (
        np.array([o.memory_mb for o in d], dtype=float),
        np.array([o.task_slots for o in d], dtype=float),
        np.array([o.mst for o in d], dtype=float),
    )


def fit_family(d: ObservationSet, family: str) -> CapacityModel:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    m, p, y = _arrays(d)
    if len(d) < 3 or len(np.unique(m)) < 2 or len(np.unique(p)) < 2:
        raise RankDeficient(f"{len(d)} observations, {len(np.unique(m))} memory / {len(np.unique(p))} slot values")
    x = _design(m, p, family)
    if np.linalg.matrix_rank(x) < 3:
        raise RankDeficient("design matrix rank < 3")
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    return CapacityModel(family, float(coef[0]), float(coef[1]), float(coef[2]))


def predict(model: CapacityModel, memory_mb: float, task_slots: float) -> float:
    phi = _PHI[model.family]
    return float(model.a * phi(float(memory_mb)) + model.b * phi(float(task_slots)) + model.c)


def loocv_rmse(d: ObservationSet, family: str) -> float:
    """Leave-one-out RMSE. A fold that cannot be fitted contributes its
    deviation from the mean of the remaining targets."""
    if len(d) < 4:
        raise ValueError("LOOCV needs at least 4 observations")
    residuals = []
    for i, held in enumerate(d):
        rest = list(d[:i]) + list(d[i + 1:])
        try:
            pred = predict(fit_family(rest, family), held.memory_mb, held.task_slots)
        except RankDeficient:
            pred = float(np.mean([o.mst for o in rest]))
        residuals.append(held.mst - pred)
    return float(np.sqrt(np.mean(np.square(residuals))))


def loocv_scores(d: ObservationSet) -> Dict[str, float]:
    return {f: loocv_rmse(d, f) for f in FAMILIES}


def best_model(d: ObservationSet) -> str:
    scores = loocv_scores(d)
    return min(FAMILIES, key=lambda f: (scores[f], FAMILIES.index(f)))


def split_by_slots(d: ObservationSet) -> Tuple[List[Observation], List[Observation]]:
    """Lower half (ceil(n/2) observations with the fewest slots) and the rest."""
    ordered = sorted(d, key=lambda o: o.task_slots)
    k = (len(ordered) + 1) // 2
    return ordered[:k], ordered[k:]


def holdout_rmse(train: ObservationSet, test: ObservationSet, family: str) -> float:
    model = fit_family(train, family)
    err = [o.mst - predict(model, o.memory_mb, o.task_slots) for o in test]
    return float(np.sqrt(np.mean(np.square(err))))


def select_model(d: ObservationSet) -> CapacityModel:
    """Pick the family that best extrapolates from the low-slot half to the
    high-slot half, then refit it on everything."""
    if len(d) < 6:
        raise ValueError("model selection needs at least 6 observations")
    train, test = split_by_slots(d)
    scores = {f: holdout_rmse(train, test, f) for f in FAMILIES}
    family = min(FAMILIES, key=lambda f: (scores[f], FAMILIES.index(f)))
    return fit_family(d, family)


def invert(
    model: CapacityModel,
    memory_mb: float,
    requested_rate: float,
    overprovision: float = DEFAULT_OVERPROVISION,
    slots_cap: int = DEFAULT_SLOTS_CAP,
) -> int:
    """Smallest slot count whose predicted capacity covers the padded rate."""
    if not requested_rate > 0:
        raise ValueError("requested_rate must be positive")
    goal = overprovision * requested_rate
    for slots in range(1, slots_cap + 1):
        if predict(model, memory_mb, slots) >= goal:
            return slots
    raise Unreachable(
        f"{model.family} model does not reach {goal:.6g} evt/s at {memory_mb} MB within {slots_cap} slots"
    )
