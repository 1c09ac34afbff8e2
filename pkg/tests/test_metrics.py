import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tenet.metrics import (
    UndefinedMetricError,
    hit_rate,
    intersection,
    l2_distance,
    moving_average,
    mre,
    mse,
    n_excluded,
    pearson,
)

V = [0, 1, 2, 4, 1, 0]
U = [1, 4, 2, 1, 0, 0]

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_hit_rate_relative_band():
    assert hit_rate([1.1, 2.5, 3.0], [1.0, 2.0, 3.0], 0.2) == pytest.approx(200 / 3)
    assert hit_rate([1.2], [1.0], 0.2) == 100.0  # boundary counts as a hit


def test_zero_targets_excluded():
    preds, ys = [1.0, 5.0, 2.0], [0.0, 4.0, 2.0]
    assert n_excluded(ys) == 1
    assert mre(preds, ys) == pytest.approx(0.125)
    assert hit_rate(preds, ys, 0.2) == 50.0
    with pytest.raises(UndefinedMetricError):
        mre([1.0], [0.0])
    with pytest.raises(UndefinedMetricError):
        hit_rate([1.0], [0.0], 0.3)


def test_mse_and_length_checks():
    assert mse([1, 2], [3, 2]) == 2.0
    with pytest.raises(ValueError):
        mse([1], [1, 2])
    with pytest.raises(ValueError):
        mse([], [])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, st.floats(0.1, 1e3)), min_size=1, max_size=30))
def test_hit_rate_monotone_in_p(pairs):
    p, y = map(np.array, zip(*pairs))
    rates = [hit_rate(p, y, q) for q in (0.0, 0.1, 0.2, 0.3, 1.0)]
    assert rates == sorted(rates)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=30), st.randoms())
def test_mse_permutation_invariant(pairs, rnd):
    p, y = map(np.array, zip(*pairs))
    order = list(range(len(p)))
    rnd.shuffle(order)
    assert mse(p[order], y[order]) == pytest.approx(mse(p, y), rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=2, max_size=20), st.floats(0.01, 10), st.floats(-10, 10))
def test_similarity_identities(a, alpha, beta):
    a = np.array(a)
    assert intersection(a, a) == pytest.approx(a.sum())
    assert l2_distance(a, a) == 0.0
    if np.ptp(a) > 1e-6:
        assert pearson(a, alpha * a + beta) == pytest.approx(1.0, abs=1e-9)


def test_pearson_constant_undefined():
    with pytest.raises(UndefinedMetricError):
        pearson([1, 1, 1], [1, 2, 3])


def test_moving_average_known_rows():
    np.testing.assert_allclose(moving_average(V), [0.5, 1, 7 / 3, 7 / 3, 5 / 3, 0.5])
    np.testing.assert_allclose(moving_average(U), [2.5, 7 / 3, 7 / 3, 1, 1 / 3, 0])
    np.testing.assert_array_equal(moving_average([4.0]), [4.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(-100, 100), st.integers(1, 40), st.sampled_from([1, 3, 5]))
def test_moving_average_constant_series_unchanged(c, n, w):
    np.testing.assert_allclose(moving_average(np.full(n, c), w), np.full(n, c), atol=1e-9)


def test_case_pair_metrics():
    vs, us = moving_average(V), moving_average(U)
    assert l2_distance(V, U) == pytest.approx(np.sqrt(20))
    assert intersection(V, U) == 4.0
    assert pearson(V, U) == pytest.approx(2 / 17)
    assert l2_distance(V, vs) == pytest.approx(1.9579, abs=1e-4)
    assert intersection(V, vs) == pytest.approx(19 / 3)
    assert pearson(V, vs) == pytest.approx(0.8707, abs=1e-4)
    assert l2_distance(vs, us) == pytest.approx(3.0957, abs=1e-4)
    assert intersection(vs, us) == pytest.approx(31 / 6)
    assert pearson(vs, us) == pytest.approx(0.0235, abs=1e-4)
