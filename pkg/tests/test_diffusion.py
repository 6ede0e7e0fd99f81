import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sword.diffusion import (GaussianScore, NoiseSchedule, ZeroScore, dsm_loss,
                             gaussian_analytic_score, geometric_schedule, perturb)
from sword.errors import InvalidArgument


def test_schedule_examples():
    assert np.allclose(geometric_schedule(1, 100, 3).sigmas, [1, 10, 100], rtol=1e-15)
    s = geometric_schedule(0.01, 50, 2)
    assert list(s.sigmas) == [0.01, 50.0]


def test_schedule_ratio_constant_at_1450():
    s = geometric_schedule(0.01, 50, 1450)
    ratios = s.sigmas[1:] / s.sigmas[:-1]
    assert np.allclose(ratios, ratios[0], rtol=1e-12)
    k = np.arange(1450)
    fit = np.polyval(np.polyfit(k, np.log(s.sigmas), 1), k)
    assert np.max(np.abs(np.log(s.sigmas) - fit)) <= 1e-12


def test_schedule_zero_convention_and_median():
    s = geometric_schedule(1, 100, 3)
    assert s.sigma(0) == 0.0
    assert [s.sigma(i) for i in (1, 2, 3)] == list(s.sigmas)
    assert s.median == pytest.approx(10)


@pytest.mark.parametrize("args", [(0, 1, 5), (2, 1, 5), (1, 2, 1), (1, np.inf, 5), (1, 2, 2.5)])
def test_schedule_validation(args):
    with pytest.raises(InvalidArgument):
        NoiseSchedule(*args)


def test_perturb_zero_sigma_is_exact(rng):
    x = rng.standard_normal((3, 4, 4))
    out = perturb(x, 0.0, rng)
    assert np.array_equal(out, x) and out is not x
    with pytest.raises(InvalidArgument):
        perturb(x, -1.0, rng)


def test_perturb_moments(rng):
    draws = perturb(np.zeros(100_000), 1.0, rng)
    assert abs(draws.mean()) <= 0.02
    assert 0.99 <= draws.std() <= 1.01


def test_perturb_variance_adds(rng):
    a, b = 0.6, 1.7
    twice = perturb(perturb(np.zeros(100_000), a, rng), b, rng)
    once = perturb(np.zeros(100_000), math.hypot(a, b), rng)
    target = a**2 + b**2
    # 4 standard errors of a variance estimate from 1e5 normal draws
    tol = 4 * target * math.sqrt(2 / 100_000)
    assert abs(twice.var() - target) <= tol
    assert abs(once.var() - target) <= tol


class _ExactTarget:
    """Conditional score of N(x0, sigma^2) around a single known clean stack."""

    def __init__(self, x0):
        self.x0 = x0
        self.channels = x0.shape[0]

    def __call__(self, x, sigma):
        return (self.x0 - x) / sigma**2


def test_dsm_loss_vanishes_for_exact_target(rng):
    sched = geometric_schedule(0.01, 50, 100)
    for _ in range(10):
        x0 = rng.standard_normal((2, 4, 4)) * 10
        batch = [x0] * 5
        assert dsm_loss(_ExactTarget(x0), batch, sched, rng) <= 1e-20


def test_dsm_loss_of_zero_model_counts_entries(rng):
    sched = geometric_schedule(0.01, 50, 100)
    batch = list(rng.standard_normal((10_000, 1, 4, 4)))
    loss = dsm_loss(ZeroScore(1), batch, sched, rng)
    assert loss == pytest.approx(16, rel=0.05)


@given(st.permutations(range(6)), st.integers(0, 2**32 - 1))
def test_dsm_loss_ignores_batch_order(perm, seed):
    r = np.random.default_rng(seed)
    batch = list(r.standard_normal((6, 1, 3, 3)))
    model = GaussianScore(np.zeros((1, 3, 3)), 0.5)
    sched = geometric_schedule(0.1, 10, 20)
    a = dsm_loss(model, batch, sched, np.random.default_rng(7))
    b = dsm_loss(model, [batch[i] for i in perm], sched, np.random.default_rng(7))
    assert a == b


def test_dsm_loss_checks_channels(rng):
    with pytest.raises(InvalidArgument):
        dsm_loss(ZeroScore(4), [np.zeros((3, 2, 2))], geometric_schedule(1, 2, 2), rng)
    with pytest.raises(InvalidArgument):
        dsm_loss(ZeroScore(), [], geometric_schedule(1, 2, 2), rng)


def test_analytic_score_examples():
    mu = np.full((1, 2, 2), 0.3)
    g = gaussian_analytic_score(mu, 0.7)
    assert not g(mu, 1.3).any()
    z = gaussian_analytic_score(np.zeros(1), 0.0)
    assert z(np.array([2.0]), 1.0)[0] == -2.0
    with pytest.raises(InvalidArgument):
        GaussianScore(np.zeros(2), -1.0)


@pytest.mark.parametrize("sigma", [0.05, 1.0, 20.0])
@pytest.mark.parametrize("shape", [(1, 1, 1), (3, 2, 4)])
def test_analytic_score_is_gradient_of_log_density(sigma, shape):
    r = np.random.default_rng(hash((sigma, shape)) % 2**32)
    g = GaussianScore(r.standard_normal(shape), r.uniform(0.1, 2.0, shape))
    h = 1e-4
    for _ in range(100):
        x = g.mu + r.standard_normal(shape) * math.sqrt(sigma**2 + 1)
        s = g(x, sigma)
        fd = np.empty(shape)
        for idx in np.ndindex(shape):
            e = np.zeros(shape)
            e[idx] = h
            fd[idx] = (g.log_density(x + e, sigma) - g.log_density(x - e, sigma)) / (2 * h)
        assert np.linalg.norm(fd - s) <= 1e-6 * np.linalg.norm(s)


def test_analytic_score_batched_sigma(rng):
    g = GaussianScore(np.zeros((1, 2, 2)), 1.0)
    x = rng.standard_normal((3, 1, 2, 2))
    sig = np.array([0.5, 1.0, 2.0])
    out = g(x, sig)
    for i in range(3):
        assert np.allclose(out[i], g(x[i], sig[i]))
