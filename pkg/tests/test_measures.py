import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

import oracles as O
from nabc import measures as M
from nabc.errors import AllTied, CellEstimationFailure, ConstantSeries, NoExceedances, NotPositiveDefinite, OutOfRange, TooFewExceedances


def test_small_hand_values():
    assert M.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1)
    assert M.pearson([1, 2, 3], [6, 4, 2]) == pytest.approx(-1)
    assert M.pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    assert M.spearman([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    assert M.kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3)
    assert M.chatterjee([1, 2, 3, 4, 5], [1, 2, 3, 4, 5]) == pytest.approx(0.5)


def test_tau_b_with_x_tie_matches_pair_enumeration():
    x, y = [1, 1, 2], [1, 2, 3]
    assert M.kendall_tau_b(x, y) == pytest.approx(O.kendall_b(x, y), abs=1e-15)
    assert M.kendall_tau_b(x, y) == pytest.approx(stats.kendalltau(x, y).statistic)


def test_against_scipy(rng):
    x, y = rng.standard_normal((2, 40))
    y = np.round(y, 1)
    assert M.pearson(x, y) == pytest.approx(stats.pearsonr(x, y).statistic, abs=1e-13)
    assert M.spearman(x, y) == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-13)
    assert M.kendall_tau_b(x, y) == pytest.approx(stats.kendalltau(x, y).statistic, abs=1e-13)


def test_spearman_forms_agree_without_ties(rng):
    for _ in range(20):
        x, y = rng.standard_normal((2, 25))
        assert abs(M.spearman(x, y) - M.spearman_squared_differences(x, y)) < 1e-12


def test_tail_dependence_cases(rng):
    x = rng.random(20000)
    assert M.tail_dependence(x, x, 0.9) == 1
    y = rng.random(20000)
    assert M.tail_dependence(x, y, 0.9) == pytest.approx(0.1, abs=0.02)
    assert M.tail_dependence(x, -x, 0.95) == 0
    assert M.tail_dependence(x, x, 0.1, "lower") == 1
    with pytest.raises(OutOfRange):
        M.tail_dependence(x, y, 1.2)
    with pytest.raises(NoExceedances):
        M.tail_dependence(np.ones(10), np.arange(10.0), 0.5)


def test_szekely_cases(rng):
    x = rng.standard_normal(50)
    assert M.szekely_dcorr(x, x) == pytest.approx(1)
    assert M.szekely_dcorr(x, 3 - 2 * x) == pytest.approx(1)
    s = np.linspace(-1, 1, 50)
    v = M.szekely_dcorr(s, s ** 2)
    assert 0 < v < 1 and abs(M.pearson(s, s ** 2)) < 1e-12
    with pytest.raises(ConstantSeries):
        M.szekely_dcorr(np.ones(5), x[:5])


def test_double_centring_means_vanish(rng):
    A = M._double_centre(rng.standard_normal(30))
    assert np.abs(A.mean(axis=0)).max() < 1e-12 and np.abs(A.mean(axis=1)).max() < 1e-12


def test_lancaster_cases(rng):
    x = rng.standard_normal(200)
    assert M.lancaster(x, x) == pytest.approx(1)
    s = np.linspace(-1, 1, 101)
    assert M.lancaster(s, s ** 2, "linear") > 0.5
    vals = [M.lancaster(*rng.standard_normal((2, 2000))) for _ in range(100)]
    assert np.mean(vals) < 0.2


def test_chatterjee_is_directional(rng):
    x = rng.random(300)
    y = x ** 2 + 0.01 * rng.standard_normal(300)
    s = np.linspace(-1, 1, 300)
    assert M.chatterjee(s, s ** 2) != pytest.approx(M.chatterjee(s ** 2, s), abs=0.05)
    assert M.chatterjee_sym(x, y) == max(M.chatterjee(x, y), M.chatterjee(y, x))
    big = np.arange(5000.0)
    assert M.chatterjee(big, big) > 0.999


def test_improved_chatterjee_normalizations(rng):
    vals = [M.chatterjee_improved(*rng.standard_normal((2, 200)), seed=k) for k in range(40)]
    assert abs(np.mean(vals)) < 0.05
    printed = [M.chatterjee_improved(*rng.standard_normal((2, 200)), normalization="printed") for _ in range(5)]
    assert min(printed) > 0.99


def test_zhang_cases(rng):
    x = rng.standard_normal(100)
    assert M.zhang_combined(x, np.exp(x)) == 1
    s = np.linspace(-1, 1, 400)
    assert math.sqrt(2.5) * M.chatterjee(s, s ** 2) > abs(M.spearman(s, s ** 2))
    vals = [M.zhang_combined(*rng.standard_normal((2, 3000))) for _ in range(20)]
    assert np.mean(vals) < 0.1


def test_tail_kendall_cases(rng):
    x = rng.standard_normal(100)
    assert M.tail_kendall(x, x, 0.8) == 1
    assert M.tail_kendall(x, -x, 0.8) == -1
    y = x ** 2 + rng.standard_normal(100)
    assert M.tail_kendall(x, y, 0.8) != M.tail_kendall(y, x, 0.8)
    with pytest.raises(TooFewExceedances):
        M.tail_kendall(x[:10], x[:10], 0.95)


def test_tau_b_all_tied():
    with pytest.raises(AllTied):
        M.kendall_tau_b([1, 1, 1], [1, 2, 3])


def test_conversions():
    assert M.tau_from_pearson(0.2) == pytest.approx(0.1282, abs=5e-5)
    assert M.tau_from_pearson(0.6) == pytest.approx(0.4097, abs=5e-5)
    assert M.tau_from_pearson(0.0) == 0 and M.tau_from_pearson(1.0) == 1
    with pytest.raises(OutOfRange):
        M.pearson_from_tau(1.5)


@given(st.floats(-1, 1))
def test_conversion_round_trips(r):
    assert M.pearson_from_tau(M.tau_from_pearson(r)) == pytest.approx(r, abs=1e-12)
    assert M.pearson_from_spearman(M.spearman_from_pearson(r)) == pytest.approx(r, abs=1e-12)


RANK_BASED = ["spearman", "kendall", "kendall_b", "chatterjee", "chatterjee_improved"]


@pytest.mark.parametrize("kind", RANK_BASED)
def test_rank_measures_invariant_to_monotone_maps(kind, rng):
    x, y = rng.standard_normal((2, 60))
    spec = M.MeasureSpec(kind)
    assert M.bivariate(spec, x, y) == M.bivariate(spec, np.exp(x), np.exp(3 * y) + 1)


def test_tail_measures_invariant_to_monotone_maps(rng):
    x, y = rng.standard_normal((2, 60))
    assert M.tail_kendall(x, y, 0.7) == M.tail_kendall(np.exp(x), np.exp(y), 0.7)
    # type-7 quantiles interpolate, so only the strictly ordered comparisons survive exp
    a = M.tail_dependence(x, y, 0.7)
    b = M.tail_dependence(np.exp(x), np.exp(y), 0.7)
    assert a == b


def test_pairwise_matrix_convention(rng):
    X = rng.standard_normal((80, 4))
    spec = M.MeasureSpec("chatterjee", seed=3)
    R = M.pairwise_matrix(X, spec)
    assert R[2, 0] == R[0, 2] == M.chatterjee(X[:, 0], X[:, 2], M.cell_seed(3, 3, 1))
    assert np.all(np.diag(R) == 1)


def test_pairwise_matrix_permutation(rng):
    X = rng.standard_normal((100, 5))
    perm = rng.permutation(5)
    for kind in ("pearson", "kendall", "szekely"):
        spec = M.MeasureSpec(kind)
        R = M.pairwise_matrix(X, spec)
        Rp = M.pairwise_matrix(X[:, perm], spec)
        assert np.allclose(Rp, R[np.ix_(perm, perm)], atol=1e-13)


def test_pairwise_matrix_errors(rng):
    with pytest.raises(Exception):
        M.pairwise_matrix(rng.standard_normal((3, 5)), M.MeasureSpec())
    X = rng.standard_normal((20, 3))
    X[:, 1] = 1.0
    with pytest.raises(CellEstimationFailure) as ei:
        M.pairwise_matrix(X, M.MeasureSpec("szekely"))
    assert ei.value.cell in ((2, 1), (3, 2))


def test_non_pd_matrix_reported():
    # three series with pairwise tail dependence that cannot be jointly PD
    x = np.arange(20.0)
    X = np.column_stack([x, x, -x])
    with pytest.raises(NotPositiveDefinite):
        M.pairwise_matrix(X, M.MeasureSpec("pearson"))


def test_unit_measures_give_pd_matrices(rng):
    fails = 0
    for _ in range(500):
        X = rng.standard_normal((60, 4))
        for kind in ("szekely", "chatterjee_sym"):
            R = M.pairwise_matrix(X, M.MeasureSpec(kind), check_pd=False)
            fails += not np.all(np.linalg.eigvalsh(R) > 0)
    assert fails == 0


def test_independence_baseline_shrinks(rng):
    for kind in ("pearson", "kendall", "chatterjee"):
        spec = M.MeasureSpec(kind)
        def mad(n):
            vals = []
            for _ in range(50 if n == 100 else 5):
                R = M.pairwise_matrix(rng.standard_normal((n, 3)), spec, check_pd=False)
                vals.append(np.abs(R[np.tril_indices(3, -1)]).mean())
            return np.mean(vals)
        assert mad(10000) < mad(100)


def test_batch_estimates_match_loop(rng):
    P = rng.standard_normal((7, 50, 4))
    P[..., 2] = np.round(P[..., 2], 1)
    for kind in ("pearson", "spearman", "kendall", "kendall_b"):
        spec = M.MeasureSpec(kind)
        fast = M.estimate_matrices(P, spec)
        for r in range(7):
            for i in range(4):
                for j in range(i):
                    assert fast[r, i, j] == pytest.approx(M.bivariate(spec, P[r, :, j], P[r, :, i]), abs=1e-13)


def test_spec_validation():
    with pytest.raises(ValueError):
        M.MeasureSpec("tail_upper")
    with pytest.raises(ValueError):
        M.MeasureSpec("pearson", q=0.9)
    with pytest.raises(ValueError):
        M.MeasureSpec("nonsense")
    spec = M.MeasureSpec("tail_kendall", q=0.9, seed=4)
    assert M.MeasureSpec.from_dict(spec.to_dict()) == spec
