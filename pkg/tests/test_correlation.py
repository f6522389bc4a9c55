import datetime as dt
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from marketstates.correlation import (
    CorrelationMatrix,
    DegenerateSeriesError,
    correlation_from_array,
    epoch_stats,
    mean_offdiagonal,
    pearson_matrix,
    power_map,
)
from marketstates.timeseries import Epoch, Portfolio, ReturnSeries

D0 = dt.date(2017, 1, 1)


def portfolio_from(X, coins=None):
    T, K = X.shape
    coins = coins or [f"c{i}" for i in range(K)]
    dates = tuple(D0 + dt.timedelta(days=i) for i in range(T))
    ep = Epoch(0, dates[0], dates[-1], T)
    series = {c: ReturnSeries(c, dates, X[:, j]) for j, c in enumerate(coins)}
    return Portfolio(ep, tuple(coins), tuple(1.0 for _ in coins)), series


def brute_pearson(x, y):
    x = [Fraction(v) for v in x]
    y = [Fraction(v) for v in y]
    T = len(x)
    mx, my = sum(x) / T, sum(y) / T
    cov = sum(a * b for a, b in zip(x, y)) / T - mx * my
    vx = sum(a * a for a in x) / T - mx * mx
    vy = sum(b * b for b in y) / T - my * my
    return float(cov) / (float(vx) * float(vy)) ** 0.5


def matrix(values, q=1.0):
    K = values.shape[0]
    return CorrelationMatrix(None, tuple(f"c{i}" for i in range(K)), values, q)


def random_corr(rng, K=6, T=12):
    return correlation_from_array(rng.standard_normal((T, K)))


def test_brute_force_pair():
    x, y = [1, 2, 3, 4], [1, 3, 2, 4]
    assert brute_pearson(x, y) == pytest.approx(0.8, abs=1e-15)
    pf, s = portfolio_from(np.array([x, y], dtype=float).T)
    C = pearson_matrix(pf, s)
    assert C.values[0, 1] == pytest.approx(0.8, abs=1e-15)
    assert C.values[0, 0] == 1.0 and C.q_applied == 1.0


def test_anticorrelation():
    x = np.array([0.3, -1.2, 2.0, 0.7, -0.1])
    pf, s = portfolio_from(np.column_stack([x, -x]))
    assert pearson_matrix(pf, s).values[0, 1] == pytest.approx(-1.0, abs=1e-15)


def test_zero_variance_names_coin():
    X = np.column_stack([np.arange(5.0), np.full(5, 3.0)])
    pf, s = portfolio_from(X, ["ok", "flat"])
    with pytest.raises(DegenerateSeriesError, match="flat"):
        pearson_matrix(pf, s)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (10, 4), elements=st.floats(-3, 3)))
def test_matches_brute_force(X):
    if np.any(np.ptp(X, axis=0) < 1e-2):
        return
    C = correlation_from_array(X)
    for i in range(4):
        for j in range(4):
            if i != j:
                assert C[i, j] == pytest.approx(brute_pearson(X[:, i], X[:, j]), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    arrays(float, (15, 5), elements=st.floats(-3, 3)),
    arrays(float, 5, elements=st.floats(0.1, 10)),
    arrays(float, 5, elements=st.floats(-5, 5)),
)
def test_affine_invariance(X, a, b):
    if np.any(np.ptp(X, axis=0) < 1e-2):
        return
    np.testing.assert_allclose(correlation_from_array(X * a + b), correlation_from_array(X), atol=1e-10)


def test_structure_and_psd():
    rng = np.random.default_rng(0)
    for _ in range(20):
        C = random_corr(rng, K=8, T=30)
        assert np.array_equal(C, C.T)
        assert np.all(np.diag(C) == 1.0) and np.all(np.abs(C) <= 1.0)
        w = np.linalg.eigvalsh(C)
        assert w[0] >= -1e-8 * w[-1]


def test_singular_when_t_below_k():
    rng = np.random.default_rng(1)
    C = random_corr(rng, K=40, T=20)
    w = np.linalg.eigvalsh(C)
    assert (np.abs(w) < 1e-8).sum() >= 20


def test_power_map_values():
    C = np.array([[1.0, -0.5, 1.0], [-0.5, 1.0, -1.0], [1.0, -1.0, 1.0]])
    P = power_map(matrix(C), 1.5)
    assert P.values[0, 1] == pytest.approx(-(0.5**1.5), rel=1e-15)
    assert str(P.values[0, 1]).startswith("-0.353553")
    assert P.values[0, 2] == 1.0 and P.values[1, 2] == -1.0
    assert P.q_applied == 1.5
    assert np.array_equal(power_map(matrix(C), 1.0).values, C)


def test_power_map_rejects_nonpositive_q():
    with pytest.raises(ValueError):
        power_map(matrix(np.eye(2)), 0.0)


def test_power_map_composes():
    rng = np.random.default_rng(2)
    M = matrix(random_corr(rng))
    a, b = 1.5, 0.8
    twice = power_map(power_map(M, a), b)
    once = power_map(M, a * b)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-12)
    assert twice.q_applied == pytest.approx(a * b)
    np.testing.assert_allclose(twice.raw_magnitudes, np.abs(M.values), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 4.0), st.integers(0, 2**32 - 1))
def test_power_map_monotone_sign_symmetric(q, seed):
    C = random_corr(np.random.default_rng(seed))
    P = power_map(matrix(C), q).values
    iu = np.triu_indices_from(C, 1)
    assert np.array_equal(np.sign(P[iu]), np.sign(C[iu]))
    assert np.array_equal(P, P.T) and np.all(np.diag(P) == 1.0)
    order = np.argsort(np.abs(C[iu]), kind="stable")
    assert np.all(np.diff(np.abs(P[iu])[order]) >= 0)


def test_mean_offdiagonal_examples():
    assert mean_offdiagonal(np.eye(4)) == 0.0
    assert mean_offdiagonal(np.ones((4, 4))) == 1.0
    M = np.array([[1, 0.2, 0.4], [0.2, 1, 0.6], [0.4, 0.6, 1]])
    assert mean_offdiagonal(M) == pytest.approx(0.4, abs=1e-15)


def test_epoch_stats_uses_raw_returns():
    rng = np.random.default_rng(4)
    R = rng.normal(0.001, 0.02, (20, 3))
    pf, raw = portfolio_from(R)
    C = correlation_from_array(R)
    st_ = epoch_stats(pf, raw, matrix(C))
    assert st_.mean_return == pytest.approx(R.mean(), rel=1e-12)
    assert st_.mean_correlation == pytest.approx(C[np.triu_indices(3, 1)].mean(), rel=1e-12)
