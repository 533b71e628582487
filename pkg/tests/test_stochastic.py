import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import assert_mean_within
from ctcm.stochastic import (
    ContinuousPoisson,
    Deterministic,
    DiscreteMixture,
    Exponential,
    PointMass,
    TruncatedNormal,
    UniformBox,
    as_perturbation,
    make_rng,
    perturbation_spec,
    sample_perturbation,
    sample_wait,
    sampled_quadrature,
    substream,
    wait_from_mean,
)


def draws(dist, size, seed=0, sampler=None):
    rng = make_rng(seed)
    sampler = sampler or (lambda d, r: d.sample(r))
    return np.array([sampler(dist, rng) for _ in range(size)])


# -- rng plumbing --------------------------------------------------------------


def test_same_seed_same_stream():
    assert np.array_equal(make_rng(5).random(10), make_rng(5).random(10))
    assert not np.array_equal(make_rng(5).random(10), make_rng(6).random(10))


def test_substreams_depend_only_on_their_key():
    a = substream(9, 3).random(5)
    for _ in range(3):
        substream(9, 1).random(100)  # unrelated use
    assert np.array_equal(a, substream(9, 3).random(5))
    assert not np.array_equal(a, substream(9, 4).random(5))
    assert not np.array_equal(substream(9, 0, 3).random(5), substream(9, 1, 3).random(5))


# -- perturbation laws ------------------------------------------------------------


def test_point_mass_is_constant():
    d = PointMass((0.5, -2.0))
    assert np.all(draws(d, 50, sampler=sample_perturbation) == [0.5, -2.0])
    assert d.support_radius == 2.0


def test_uniform_box_mean_and_support():
    d = UniformBox((1.0, 1.0), (1.0, 1.0))
    x = draws(d, 100_000, seed=1, sampler=sample_perturbation)
    assert_mean_within(x, d.mean)
    assert np.abs(x).max() <= d.support_radius
    assert d.support_radius == 2.0


@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=3).flatmap(
        lambda c: st.tuples(st.just(c), st.lists(st.floats(0, 3), min_size=len(c), max_size=len(c)))
    ),
    st.integers(0, 2**32 - 1),
)
def test_uniform_box_never_leaves_support(center_hw, seed):
    center, hw = center_hw
    d = UniformBox(tuple(center), tuple(hw))
    rng = make_rng(seed)
    for _ in range(50):
        assert np.abs(d.sample(rng)).max() <= d.support_radius


def test_discrete_mixture():
    d = DiscreteMixture((1.0, 3.0), ((0.0, 0.0), (2.0, -1.0)))
    np.testing.assert_allclose(d.mean, [1.5, -0.75])
    x = draws(d, 40_000, seed=2)
    assert_mean_within(x, d.mean)
    assert d.support_radius == 2.0
    with pytest.raises(ValueError):
        DiscreteMixture((1.0, -1.0), ((0.0,), (1.0,)))


def test_box_quadrature_is_exact_for_low_degree():
    d = UniformBox((1.0, -2.0), (0.5, 3.0))
    q = d.quadrature()
    # E[x0^2 x1^4] = (c0^2 + h0^2/3) * E[x1^4] with x1 = c1 + h1 u, u ~ U(-1, 1)
    e_x1_4 = sum(math.comb(4, j) * (-2.0) ** (4 - j) * 3.0**j * (1 / (j + 1) if j % 2 == 0 else 0) for j in range(5))
    want = (1.0 + 0.25 / 3) * e_x1_4
    assert q.integrate(lambda x: x[0] ** 2 * x[1] ** 4) == pytest.approx(want, rel=1e-12)
    np.testing.assert_allclose(q.integrate(lambda x: x), d.mean, rtol=1e-14)


def test_sampled_quadrature_averages():
    d = UniformBox((0.0,), (1.0,))
    q = sampled_quadrature(d, make_rng(0), 1000)
    assert q.integrate(lambda x: 1.0) == pytest.approx(1.0)


def test_perturbation_spec_round_trip():
    for d in (UniformBox((1.0, 2.0), (0.5, 0.5)), PointMass((3.0,)), DiscreteMixture((0.5, 0.5), ((0.0,), (1.0,)))):
        assert as_perturbation(perturbation_spec(d)) == d
    assert as_perturbation({"kind": "uniform-box", "mean": [1, 1], "half_width": 2}) == UniformBox((1, 1), (2, 2))
    with pytest.raises(ValueError):
        as_perturbation({"kind": "gaussian"})


# -- wait laws ------------------------------------------------------------------


def test_exponential_mean():
    x = draws(Exponential(1 / 20), 100_000, seed=3, sampler=sample_wait)
    assert np.all(x >= 0)
    assert_mean_within(x, 20.0)


def test_exponential_memoryless():
    x = draws(Exponential(1 / 20), 200_000, seed=4)
    s, t = 15.0, 10.0
    tail = x[x > s]
    p_cond = np.mean(tail > s + t)
    p = np.mean(x > t)
    se = math.sqrt(p_cond * (1 - p_cond) / tail.size + p * (1 - p) / x.size)
    assert abs(p_cond - p) <= 4 * se


@pytest.mark.parametrize("loc", [60.0, 20.0])
def test_truncated_normal(loc):
    d = TruncatedNormal(loc, 1.0)
    assert d.mean == pytest.approx(loc)
    x = draws(d, 100_000, seed=5)
    assert np.all(x >= 0)
    assert_mean_within(x, loc)


def test_truncated_normal_truncation_matters_near_zero():
    d = TruncatedNormal(0.0, 1.0)
    assert d.mean == pytest.approx(math.sqrt(2 / math.pi))
    x = draws(d, 50_000, seed=6)
    assert np.all(x >= 0)
    assert_mean_within(x, d.mean)


@pytest.mark.parametrize("mean", [20.0, 60.0, 5.0])
def test_continuous_poisson_rounds_to_poisson(mean):
    d = ContinuousPoisson(mean)
    x = draws(d, 100_000, seed=7)
    assert np.all(x >= 0)
    assert_mean_within(x, mean)
    k = np.rint(x).astype(int)
    # pool sparse tails so every expected cell count is at least 5
    lo, hi = int(stats.poisson.ppf(1e-3, d.lam)), int(stats.poisson.ppf(1 - 1e-3, d.lam))
    cells = np.clip(k, lo, hi)
    observed = np.bincount(cells - lo, minlength=hi - lo + 1)
    probs = stats.poisson.pmf(np.arange(lo, hi + 1), d.lam)
    probs[0] = stats.poisson.cdf(lo, d.lam)
    probs[-1] = stats.poisson.sf(hi - 1, d.lam)
    _, p = stats.chisquare(observed, probs * len(k))
    assert p > 0.01


def test_continuous_poisson_lambda_is_near_mean():
    assert ContinuousPoisson(20.0).lam == pytest.approx(20.0, abs=0.05)


def test_deterministic_wait():
    assert draws(Deterministic(3.0), 5).tolist() == [3.0] * 5


def test_wait_from_mean():
    assert wait_from_mean("exponential", 20.0) == Exponential(0.05)
    assert wait_from_mean("truncated-normal", 60.0, 2.0) == TruncatedNormal(60.0, 2.0)
    assert wait_from_mean("continuous-poisson", 20.0).mean == 20.0
    with pytest.raises(ValueError):
        wait_from_mean("weibull", 1.0)


@pytest.mark.parametrize("bad", [lambda: Exponential(0.0), lambda: TruncatedNormal(1.0, 0.0), lambda: ContinuousPoisson(0.1)])
def test_invalid_waits(bad):
    with pytest.raises(ValueError):
        bad()
