"""Maximum sustainable throughput estimation by fixed-rate dichotomous search."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

from capplan.core import CapPlanError, Configuration, MstResult, ResourceProfile
from capplan.simulator import (
    REDEPLOY_SECONDS,
    Deployment,
    GroundTruthSpec,
    SampleResult,
    deploy,
    sample_metrics,
    set_target_rate,
    tick,
)


class NeverSucceeded(CapPlanError):
    """No probed rate was sustained."""


@dataclass(frozen=True)
class CeParams:
    warmup_s: float = 120.0
    cooldown_s: float = 15.0
    cooldown_rate: float = 6400.0
    rampup_s: float = 60.0
    observe_s: float = 15.0
    success_threshold: float = 0.99
    sensibility: float = 0.01
    max_iterations: int = 8

    def __post_init__(self):
        if not 0 < self.success_threshold < 1:
            raise ValueError("success_threshold must lie in (0, 1)")
        if not 0 < self.sensibility < 1:
            raise ValueError("sensibility must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("warmup_s", "cooldown_s", "rampup_s", "cooldown_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.observe_s <= 0:
            raise ValueError("observe_s must be positive")


def _ticks(seconds: float, tick_seconds: float) -> int:
    return int(math.ceil(seconds / tick_seconds - 1e-9))


def run_measurement(d: Deployment, rate: float, params: CeParams) -> SampleResult:
    """Cooldown, ramp-up without sampling, then observe at ``rate``."""
    dt = d.spec.tick_seconds
    n_cool = _ticks(params.cooldown_s, dt)
    if n_cool:
        set_target_rate(d, params.cooldown_rate)
        tick(d, n_cool)
    set_target_rate(d, rate)
    n_ramp = _ticks(params.rampup_s, dt)
    if n_ramp:
        tick(d, n_ramp)
    n_obs = max(1, _ticks(params.observe_s, dt))
    tick(d, n_obs)
    return sample_metrics(d, n_obs)


def _converged(lo: float, hi: float, sensibility: float) -> bool:
    # bracket pinned to within `sensibility` of the sustained rate
    return lo > 0 and math.isfinite(hi) and hi - lo <= sensibility * lo


def estimate_mst(
    spec: GroundTruthSpec,
    config: Configuration,
    profile: ResourceProfile,
    params: CeParams = CeParams(),
    seed: int = 0,
    *,
    deployment_hook=None,
) -> MstResult:
    d = deploy(spec, config, profile, seed)
    if deployment_hook is not None:
        deployment_hook(d)

    n_warm = _ticks(params.warmup_s, spec.tick_seconds)
    if n_warm:
        set_target_rate(d, spec.max_injectable_rate)
        tick(d, n_warm)

    lo, hi = 0.0, math.inf
    target = spec.max_injectable_rate
    probes: List[Tuple[float, bool]] = []
    best: Optional[SampleResult] = None
    saturated = False
    for it in range(params.max_iterations):
        sample = run_measurement(d, target, params)
        ok = sample.achieved_ratio >= params.success_threshold
        probes.append((target, ok))
        if ok:
            lo, best = target, sample
            if it == 0:
                saturated = True
                break
        else:
            hi = target
        if _converged(lo, hi, params.sensibility):
            break
        target = (lo + hi) / 2.0

    if best is None:
        raise NeverSucceeded(
            f"no rate sustained after {len(probes)} probes (lowest {probes[-1][0]:.6g} evt/s)"
        )
    return MstResult(
        # sustained actual rate at the last accepted target
        mst=lo * best.achieved_ratio,
        achieved_ratio=best.achieved_ratio,
        ratio_stddev=best.ratio_stddev,
        metrics=best.metrics,
        iterations_used=len(probes),
        source_saturated=saturated,
        probes=tuple(probes),
        sim_seconds=REDEPLOY_SECONDS + d.sim_clock_s,
    )
