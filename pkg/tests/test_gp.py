import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capplan import gp
from capplan.gp import HyperGrid, Normalizer, SingularKernel

from oracles import dense_gp


def _points(xs, ys):
    return [((float(a), float(b)), float(c)) for (a, b), c in zip(xs, ys)]


def test_dense_oracle_agreement_on_random_fits():
    rng = np.random.default_rng(123)
    for _ in range(50):
        n = int(rng.integers(2, 7))
        x = rng.random((n, 2))
        y = rng.normal(size=n) * 10 + 3
        post = gp.fit(_points(x, y))
        xs = rng.random((20, 2))
        mean, var = gp.posterior_many(post, xs)
        ref_mean, ref_var = dense_gp(x, y, post.lengthscales, post.noise_variance + post.jitter, xs)
        assert np.max(np.abs(mean - ref_mean)) <= 1e-8 * max(1.0, np.max(np.abs(ref_mean)))
        assert np.max(np.abs(var - ref_var)) <= 1e-8 * max(1.0, np.max(np.abs(ref_var)))


def test_factorization_residual():
    rng = np.random.default_rng(7)
    post = gp.fit(_points(rng.random((6, 2)), rng.random(6)))
    k = post.covariance()
    resid = np.max(np.abs(post.chol @ post.chol.T - k))
    assert resid <= 1e-8 * np.max(np.abs(k))


def test_lml_picks_the_best_grid_point():
    rng = np.random.default_rng(2)
    x, y = rng.random((5, 2)), rng.random(5)
    post = gp.fit(_points(x, y))
    ys = (y - y.mean()) / y.std()
    for l_m, l_p, s2 in HyperGrid().candidates():
        k = gp.se_kernel(x, x, (l_m, l_p)) + s2 * np.eye(5)
        sign, logdet = np.linalg.slogdet(k)
        lml = -0.5 * ys @ np.linalg.solve(k, ys) - 0.5 * logdet - 2.5 * math.log(2 * math.pi)
        assert lml <= post.log_marginal_likelihood + 1e-9


def test_interpolates_noiseless_data():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]])
    y = np.sin(3 * x[:, 0]) + x[:, 1] ** 2
    post = gp.fit(_points(x, y), HyperGrid(noise_variances=(1e-6,)))
    mean, var = gp.posterior_many(post, x)
    assert np.max(np.abs(mean - y)) <= 1e-5 * max(1.0, y.std())
    assert np.all(var <= 1e-5 * y.var())


def test_duplicate_inputs_with_different_targets():
    post = gp.fit([((0.5, 0.5), 1.0), ((0.5, 0.5), 3.0), ((0.0, 0.0), 2.0)])
    mean, _ = gp.posterior_at(post, (0.5, 0.5))
    assert post.noise_variance > 1e-6
    assert 1.0 < mean < 3.0


def test_exact_duplicates_use_jitter_without_error():
    pts = [((0.2, 0.3), 1.0)] * 3 + [((0.9, 0.9), 2.0)]
    post = gp.fit(pts, HyperGrid(lengthscales=(1.0,), noise_variances=(0.0,)))
    assert post.jitter > 0


def test_singular_kernel_when_jitter_is_exhausted(monkeypatch):
    monkeypatch.setattr(gp, "JITTERS", (0.0,))
    with pytest.raises(SingularKernel):
        gp.fit([((0.2, 0.3), 1.0)] * 3, HyperGrid(lengthscales=(1.0,), noise_variances=(0.0,)))


def test_far_away_reverts_to_prior():
    post = gp.fit([((0.0, 0.0), 1.0), ((0.05, 0.0), 3.0)], HyperGrid(lengthscales=(0.1,)))
    mean, var = gp.posterior_at(post, (1.0, 1.0))
    assert mean == pytest.approx(2.0, abs=1e-9)
    assert var == pytest.approx(post.y_scale ** 2, rel=1e-9)


def test_symmetric_midpoint():
    post = gp.fit([((0.2, 0.5), 4.0), ((0.8, 0.5), 4.0), ((0.5, 0.0), 1.0), ((0.5, 1.0), 1.0)])
    m1, _ = gp.posterior_at(post, (0.3, 0.5))
    m2, _ = gp.posterior_at(post, (0.7, 0.5))
    assert m1 == pytest.approx(m2, rel=1e-9)


def test_input_validation():
    with pytest.raises(ValueError):
        gp.fit([((0.1, 0.1), 1.0)])
    with pytest.raises(ValueError):
        gp.fit([((0.1, 1.5), 1.0), ((0.2, 0.2), 2.0)])


def test_ei_closed_form():
    assert gp.ei_from_moments(5.0, 0.0, 5.0) == 0.0
    for s in (1e-3, 0.7, 12.0):
        assert gp.ei_from_moments(5.0, s, 5.0) == pytest.approx(0.3989422804 * s, abs=1e-6)
    assert gp.ei_from_moments(4.0, 0.0, 5.0) == 1.0
    assert gp.ei_from_moments(6.0, 0.0, 5.0) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0.01, 5))
def test_ei_increases_with_spread_above_best(gap, s1, ds):
    lo = gp.ei_from_moments(1.0 + gap, s1, 1.0)
    hi = gp.ei_from_moments(1.0 + gap, s1 + ds, 1.0)
    assert hi >= lo >= 0
    if lo > 1e-300:
        assert hi > lo


def test_expected_improvement_rejects_nonfinite_best():
    post = gp.fit([((0.0, 0.0), 1.0), ((1.0, 1.0), 2.0)])
    with pytest.raises(ValueError):
        gp.expected_improvement(post, (0.5, 0.5), math.inf)


NORM = Normalizer(512, 4096, 9, 48)
GRID = [(m, p) for p in range(9, 49) for m in range(512, 4097, 512)]


def test_suggest_single_candidate():
    post = gp.fit([((0.0, 0.0), 1.0), ((1.0, 1.0), 2.0)])
    assert gp.suggest(post, [(1024, 20)], 1.0, NORM) == (1024, 20)
    with pytest.raises(ValueError):
        gp.suggest(post, [], 1.0, NORM)


def test_suggest_ties_go_to_smallest_slots_then_memory():
    post = gp.fit([((0.0, 0.0), 1.0), ((1.0, 1.0), 1.0)])
    # a best cost far below anything reachable gives zero EI everywhere
    assert gp.suggest(post, list(reversed(GRID)), -1e9, NORM) == (512, 9)


def test_suggest_is_grid_argmax():
    pts = [((0.0, 0.0), 5.0), ((0.05, 0.1), 5.2), ((0.1, 0.0), 4.9), ((1.0, 1.0), 1.0), ((0.9, 1.0), 3.0)]
    post = gp.fit(pts)
    best = min(c for _, c in pts)
    choice = gp.suggest(post, GRID, best, NORM)
    eis = gp.grid_ei(post, GRID, best, NORM)
    assert gp.expected_improvement(post, NORM(*choice), best) >= max(eis) - 1e-15


def test_fit_is_deterministic():
    pts = [((0.1, 0.2), 1.0), ((0.4, 0.9), 2.0), ((0.8, 0.3), 0.5)]
    a, b = gp.fit(pts), gp.fit(pts)
    assert gp.posterior_at(a, (0.3, 0.3)) == gp.posterior_at(b, (0.3, 0.3))


def test_normalizer_flat_range():
    n = Normalizer(512, 512, 4, 8)
    assert n(512, 6) == (0.0, 0.5)
