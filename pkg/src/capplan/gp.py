"""Gaussian-process surrogate on the unit square with Expected Improvement.

Squared-exponential kernel with unit signal variance on standardized
targets; hyperparameters are picked by log marginal likelihood over a
fixed grid.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.stats import norm

from capplan.core import CapPlanError

JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
NEGATIVE_VARIANCE_TOL = 1e-12


class SingularKernel(CapPlanError):
    pass


@dataclass(frozen=True)
class HyperGrid:
    lengthscales: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.5, 1.0)
    noise_variances: Tuple[float, ...] = (1e-6, 1e-4, 1e-2, 1e-1)

    def candidates(self) -> Iterable[Tuple[float, float, float]]:
        for l_m, l_p, s2 in itertools.product(self.lengthscales, self.lengthscales, self.noise_variances):
            yield l_m, l_p, s2


@dataclass(frozen=True)
class Normalizer:
    """Affine map of (memory, slots) onto [0, 1]^2; flat ranges map to 0."""

    m_min: float
    m_max: float
    p_min: float
    p_max: float

    def __call__(self, memory_mb: float, task_slots: float) -> Tuple[float, float]:
        return _unit(memory_mb, self.m_min, self.m_max), _unit(task_slots, self.p_min, self.p_max)


def _unit(v, lo, hi):
    return 0.0 if hi == lo else (v - lo) / (hi - lo)


def se_kernel(a: np.ndarray, b: np.ndarray, lengthscales: Sequence[float]) -> np.ndarray:
    ls = np.asarray(lengthscales, dtype=float)
    d = (a[:, None, :] - b[None, :, :]) / ls
    return np.exp(-0.5 * np.sum(d * d, axis=-1))


@dataclass(frozen=True)
class GpPosterior:
    x: np.ndarray
    y_std: np.ndarray
    lengthscales: Tuple[float, float]
    noise_variance: float
    jitter: float
    chol: np.ndarray
    alpha: np.ndarray
    y_mean: float
    y_scale: float
    log_marginal_likelihood: float

    def covariance(self) -> np.ndarray:
        n = len(self.x)
        return se_kernel(self.x, self.x, self.lengthscales) + (self.noise_variance + self.jitter) * np.eye(n)


def _factorize(k: np.ndarray) -> Tuple[np.ndarray, float]:
    n = len(k)
    for jitter in JITTERS:
        try:
            return np.linalg.cholesky(k + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            continue
    raise SingularKernel("covariance not positive definite after maximal jitter")


def _lml(chol: np.ndarray, alpha: np.ndarray, y: np.ndarray) -> float:
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * len(y) * math.log(2 * math.pi))


def fit(points: Sequence[Tuple[Tuple[float, float], float]], hyper_grid: HyperGrid = HyperGrid()) -> GpPosterior:
    if len(points) < 2:
        raise ValueError("need at least 2 points")
    x = np.array([p for p, _ in points], dtype=float).reshape(-1, 2)
    y = np.array([c for _, c in points], dtype=float)
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("inputs must lie in [0, 1]^2")
    y_mean = float(np.mean(y))
    y_scale = float(np.std(y))
    if not y_scale > 0:
        y_scale = 1.0
    ys = (y - y_mean) / y_scale

    best = None
    for l_m, l_p, s2 in hyper_grid.candidates():
        k = se_kernel(x, x, (l_m, l_p)) + s2 * np.eye(len(x))
        try:
            chol, jitter = _factorize(k)
        except SingularKernel:
            continue
        alpha = cho_solve((chol, True), ys)
        lml = _lml(chol, alpha, ys)
        if best is None or lml > best[0]:
            best = (lml, (l_m, l_p), s2, jitter, chol, alpha)
    if best is None:
        raise SingularKernel("no hyperparameter setting gave a factorizable covariance")
    lml, ls, s2, jitter, chol, alpha = best
    return GpPosterior(x, ys, ls, s2, jitter, chol, alpha, y_mean, y_scale, lml)


def posterior_many(gp: GpPosterior, xs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    xs = np.asarray(xs, dtype=float).reshape(-1, 2)
    ks = se_kernel(xs, gp.x, gp.lengthscales)
    mean_s = ks @ gp.alpha
    v = solve_triangular(gp.chol, ks.T, lower=True)
    var_s = 1.0 - np.sum(v * v, axis=0)
    if np.any(var_s < -NEGATIVE_VARIANCE_TOL):
        raise ArithmeticError(f"negative predictive variance {var_s.min():.3g}")
    var_s = np.maximum(var_s, 0.0)
    return gp.y_mean + gp.y_scale * mean_s, gp.y_scale**2 * var_s


def posterior_at(gp: GpPosterior, x: Tuple[float, float]) -> Tuple[float, float]:
    mean, var = posterior_many(gp, np.array([x]))
    return float(mean[0]), float(var[0])


def ei_from_moments(mu, sd, best_cost):
    """Expected Improvement below ``best_cost`` (minimization)."""
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    gain = best_cost - mu
    safe = np.where(sd > 0, sd, 1.0)
    z = gain / safe
    ei = gain * norm.cdf(z) + safe * norm.pdf(z)
    # zero spread: the improvement is deterministic
    return np.where(sd > 0, np.maximum(ei, 0.0), np.maximum(gain, 0.0))


def expected_improvement(gp: GpPosterior, x: Tuple[float, float], best_cost: float) -> float:
    if not math.isfinite(best_cost):
        raise ValueError("best_cost must be finite")
    mean, var = posterior_at(gp, x)
    return float(ei_from_moments(mean, math.sqrt(var), best_cost))


def suggest(
    gp: GpPosterior,
    grid: Sequence[Tuple[int, int]],
    best_cost: float,
    normalize: Normalizer,
) -> Tuple[int, int]:
    """Grid argmax of EI over (memory_mb, task_slots) candidates.

    Ties go to the smaller slot count, then the smaller memory.
    """
    if not grid:
        raise ValueError("empty candidate grid")
    ordered = sorted(grid, key=lambda c: (c[1], c[0]))
    xs = np.array([normalize(m, p) for m, p in ordered])
    mean, var = posterior_many(gp, xs)
    ei = ei_from_moments(mean, np.sqrt(var), best_cost)
    return ordered[int(np.argmax(ei))]


def grid_ei(gp: GpPosterior, grid, best_cost: float, normalize: Normalizer) -> List[float]:
    xs = np.array([normalize(m, p) for m, p in grid])
    mean, var = posterior_many(gp, xs)
    return [float(v) for v in ei_from_moments(mean, np.sqrt(var), best_cost)]
