from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctcm import (
    ModelParams,
    PointMass,
    State,
    UniformBox,
    attach,
    detach,
    expect_one_step,
    flip_status,
    initial_state,
    make_rng,
    project,
    rate,
    sample_jump,
    site_selection_probs,
)
from ctcm.model import (
    CENTROID_TOL,
    QuadratureError,
    centroid_residual,
    max_norm,
    renormalize,
    select_site,
)
from ctcm.stochastic import sampled_quadrature


def state_of(psi, positions, dim=1):
    psi = np.asarray(psi, dtype=bool)
    positions = np.asarray(positions, dtype=float).reshape(len(psi), dim)
    centroid = positions[psi].mean(axis=0) if psi.any() else np.zeros(dim)
    return State(psi, positions, centroid)


def p1d(theta_a=0.05, theta_d=0.2, n=3, eta=None):
    return ModelParams(theta_a, theta_d, n, 1, eta or UniformBox((1.0,), (1.0,)))


# -- parameters and state ---------------------------------------------------


def test_params_derived_constants(box):
    p = ModelParams(0.05, 0.2, 8, 2, box)
    assert p.support_radius == 2.0
    assert p.theta_bound == pytest.approx(1.6)
    np.testing.assert_array_equal(p.eta_mean, [1.0, 1.0])


@pytest.mark.parametrize(
    "kwargs",
    [dict(theta_a=0.0), dict(theta_d=-1.0), dict(n=0), dict(n=2.5), dict(dim=3), dict(support_radius=-1.0)],
)
def test_params_reject_invalid(box, kwargs):
    base = dict(theta_a=0.05, theta_d=0.2, n=2, dim=2, eta=box)
    base.update(kwargs)
    with pytest.raises(ValueError):
        ModelParams(**base)


def test_state_is_immutable():
    s = initial_state(2, 2)
    with pytest.raises(AttributeError):
        s.psi = None
    with pytest.raises(ValueError):
        s.positions[0, 0] = 1.0


def test_state_check_detects_bad_centroid():
    s = State([True, True], [[0.0], [2.0]], [0.5])
    with pytest.raises(ValueError, match="centroid"):
        s.check()


# -- rate and site selection -------------------------------------------------


def test_rate_examples():
    s = state_of([1, 1, 0], [0, 0, 0])
    assert rate(s, p1d()) == pytest.approx(0.45)  # 0.2*2 + 0.05*1
    assert rate(state_of([1], [0]), p1d(1.0, 1.0, 1)) == 1.0
    assert rate(state_of([0], [0]), p1d(1.0, 1.0, 1)) == 1.0
    assert rate(state_of([0, 0, 0], [0, 0, 0]), p1d()) == pytest.approx(3 * 0.05)


def test_rate_dimension_mismatch(box):
    with pytest.raises(ValueError):
        rate(initial_state(3, 2), ModelParams(0.05, 0.2, 4, 2, box))


def test_site_selection_examples():
    np.testing.assert_allclose(site_selection_probs([1, 0], p1d(1.0, 1.0, 2)), [0.5, 0.5])
    got = site_selection_probs([1, 1, 0], p1d())
    want = [Fraction(4, 9), Fraction(4, 9), Fraction(1, 9)]
    np.testing.assert_allclose(got, [float(w) for w in want], rtol=1e-15)
    with pytest.raises(ValueError):
        site_selection_probs([1, 0], p1d())


@given(st.lists(st.booleans(), min_size=1, max_size=64), st.floats(1e-3, 10), st.floats(1e-3, 10))
def test_site_selection_sums_to_one(psi, ta, td):
    p = p1d(ta, td, len(psi))
    r = site_selection_probs(psi, p)
    assert np.all(r > 0)
    assert abs(r.sum() - 1.0) <= len(psi) * np.finfo(float).eps


def test_select_site_maps_uniform_to_cumulative_weights():
    p = p1d()
    psi = [True, True, False]
    assert select_site(psi, p, 0.0) == 0
    assert select_site(psi, p, 4 / 9 - 1e-9) == 0
    assert select_site(psi, p, 4 / 9 + 1e-9) == 1
    assert select_site(psi, p, 0.999999) == 2


# -- flips, detach, attach ---------------------------------------------------


def test_flip_status_examples():
    np.testing.assert_array_equal(flip_status([1, 0, 1], 1), [1, 1, 1])
    np.testing.assert_array_equal(flip_status([1, 0, 1], 0), [0, 0, 1])
    with pytest.raises(IndexError):
        flip_status([1, 0], 2)


@given(st.lists(st.booleans(), min_size=1, max_size=20), st.data())
def test_flip_is_an_involution_and_moves_count_by_one(psi, data):
    i = data.draw(st.integers(0, len(psi) - 1))
    once = flip_status(psi, i)
    np.testing.assert_array_equal(flip_status(once, i), psi)
    assert abs(int(once.sum()) - sum(psi)) == 1


def test_detach_last_site_freezes_centroid():
    s = State([False, True], [[5.0, 5.0], [2.0, -1.0]], [2.0, -1.0])
    out = detach(s, 1)
    np.testing.assert_array_equal(out.psi, [False, False])
    np.testing.assert_array_equal(out.positions, s.positions)
    np.testing.assert_array_equal(out.centroid, s.centroid)


def test_detach_moves_centroid_to_remaining_site():
    s = State([True, True], [[0.0], [2.0]], [1.0])
    out = detach(s, 0)
    np.testing.assert_array_equal(out.centroid, [2.0])
    np.testing.assert_array_equal(out.positions, s.positions)


def test_detach_and_attach_reject_wrong_status():
    s = State([True, False], [[0.0], [2.0]], [0.0])
    with pytest.raises(ValueError):
        detach(s, 1)
    with pytest.raises(ValueError):
        attach(s, 0, [1.0])
    with pytest.raises(ValueError):
        attach(s, 1, [1.0, 2.0])


def test_attach_zero_perturbation_lands_on_centroid():
    s = State([True, False], [[3.0], [9.0]], [3.0])
    out = attach(s, 1, [0.0])
    np.testing.assert_array_equal(out.positions[1], [3.0])
    np.testing.assert_array_equal(out.centroid, [3.0])


def test_attach_from_empty():
    s = State([False, False], [[0.0, 0.0], [1.0, 1.0]], [4.0, -2.0])
    out = attach(s, 0, [0.5, 0.25])
    np.testing.assert_array_equal(out.positions[0], [4.5, -1.75])
    np.testing.assert_array_equal(out.centroid, [4.5, -1.75])


coords = st.floats(-100, 100, allow_nan=False)


@st.composite
def states(draw, dim=2, max_n=10):
    n = draw(st.integers(1, max_n))
    psi = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    positions = np.array(draw(st.lists(st.lists(coords, min_size=dim, max_size=dim), min_size=n, max_size=n)))
    centroid = positions[np.array(psi)].mean(axis=0) if any(psi) else np.array(draw(st.lists(coords, min_size=dim, max_size=dim)))
    return State(psi, positions, centroid)


@given(states(), st.lists(st.tuples(st.integers(0, 1000), st.lists(st.floats(-1, 1), min_size=2, max_size=2)), max_size=40))
def test_centroid_stays_the_attached_mean(s, moves):
    for j, x in moves:
        i = j % s.n
        s = detach(s, i) if s.psi[i] else attach(s, i, x)
        assert centroid_residual(s) <= CENTROID_TOL
        if s.psi.any():
            np.testing.assert_allclose(s.centroid, s.positions[s.psi].mean(axis=0), atol=1e-9)


@given(states(), st.data())
def test_detach_never_moves_sites(s, data):
    attached = np.flatnonzero(s.psi)
    if attached.size == 0:
        return
    i = int(data.draw(st.sampled_from(attached)))
    out = detach(s, i)
    np.testing.assert_array_equal(out.positions, s.positions)


@given(states(max_n=6), st.integers(0, 2**32 - 1))
def test_sample_jump_flips_one_bit_and_respects_growth_bound(s, seed):
    eta = UniformBox((1.0, 1.0), (1.0, 1.0))
    p = ModelParams(0.05, 0.2, s.n, 2, eta)
    rng = make_rng(seed)
    for _ in range(10):
        nxt = sample_jump(s, p, rng)
        assert np.sum(nxt.psi != s.psi) == 1
        assert max_norm(nxt) <= max_norm(s) + p.support_radius + 1e-9
        s = nxt


def test_sample_jump_single_attached_site_always_detaches():
    p = p1d(n=1)
    s = initial_state(1, 1)
    rng = make_rng(0)
    for _ in range(20):
        assert not sample_jump(s, p, rng).psi[0]


def test_sample_jump_site_frequency():
    # 10**6 draws through the jitted sampler, which is draw-for-draw
    # identical to sample_jump (see test_simulator)
    from ctcm.validate import one_step_samples

    p = ModelParams(0.05, 0.2, 3, 1, UniformBox((1.0,), (1.0,)))
    s = state_of([1, 1, 0], [0.0, 1.0, 5.0])
    draws = 1_000_000
    values = one_step_samples(s, p, draws, make_rng(11))
    hits = values[:, -1].sum()  # count 3 after the jump iff site 2 attached
    sd = np.sqrt(draws * (1 / 9) * (8 / 9))
    assert abs(hits - draws / 9) <= 3 * sd


def test_renormalize_snaps_centroid():
    s = State([True, True, False], [[0.0], [2.0], [7.0]], [1.0 + 1e-12])
    out = renormalize(s)
    np.testing.assert_array_equal(out.centroid, [1.0])
    empty = State([False], [[3.0]], [1.0])
    assert renormalize(empty) is empty


def test_project():
    assert project(state_of([0, 0, 0], [0, 0, 0])) == 0
    assert project(state_of([1, 0, 1], [0, 0, 0])) == 2


# -- one-step expectation -----------------------------------------------------


def test_expect_constant_is_one(params):
    s = initial_state(8, 2)
    assert expect_one_step(lambda _: 1.0, s, params)[0] == pytest.approx(1.0, abs=1e-15)


@given(states(max_n=8))
def test_expected_centroid_drift(s):
    eta = UniformBox((1.0, -0.5), (1.0, 2.0))
    p = ModelParams(0.05, 0.2, s.n, 2, eta)
    drift = expect_one_step(lambda y: y.centroid - s.centroid, s, p)
    r = site_selection_probs(s.psi, p)
    k = s.attached_count
    want = r[~s.psi].sum() * eta.mean / (k + 1)
    np.testing.assert_allclose(drift, want, atol=1e-9 * (1 + np.abs(s.centroid).max()))


@given(st.integers(1, 12), st.data())
def test_count_indicators_match_projected_kernel(n, data):
    psi = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    s = state_of(psi, np.zeros(n), dim=1)
    p = p1d(n=n)
    k = s.attached_count
    got = expect_one_step(lambda y: np.eye(n + 1)[y.attached_count], s, p)
    c = Fraction(1, 5) * k + Fraction(1, 20) * (n - k)
    want = np.zeros(n + 1)
    if k > 0:
        want[k - 1] = float(Fraction(1, 5) * k / c)
    if k < n:
        want[k + 1] = float(Fraction(1, 20) * (n - k) / c)
    np.testing.assert_allclose(got, want, atol=1e-14)


def test_expect_one_step_point_mass_is_exact():
    eta = PointMass((2.0,))
    p = ModelParams(1.0, 1.0, 2, 1, eta)
    s = State([True, False], [[0.0], [5.0]], [0.0])
    # detach site 0 (prob 1/2): centroid frozen at 0; attach site 1: centroid 1
    assert expect_one_step(lambda y: y.centroid, s, p)[0] == 0.5


def test_expect_one_step_rejects_bad_quadrature(params):
    s = State([False] * 8, np.zeros((8, 2)), np.zeros(2))
    with pytest.raises(QuadratureError):
        expect_one_step(lambda y: np.inf, s, params)
    bad = sampled_quadrature(UniformBox((1.0,), (1.0,)), make_rng(0), 10)
    with pytest.raises(QuadratureError):
        expect_one_step(lambda y: y.centroid, s, params, bad)


def test_expect_one_step_matches_sampling():
    eta = UniformBox((1.0, 1.0), (1.0, 1.0))
    p = ModelParams(0.05, 0.2, 3, 2, eta)
    s = state_of([1, 0, 1], [[0, 0], [4, -2], [2, 2]], dim=2)
    f = lambda y: np.concatenate([y.centroid, y.positions[1], [y.attached_count == 3]])  # noqa: E731
    exact = expect_one_step(f, s, p)
    rng = make_rng(3)
    draws = np.array([f(sample_jump(s, p, rng)) for _ in range(40_000)], dtype=float)
    from conftest import assert_mean_within

    assert_mean_within(draws, exact)
