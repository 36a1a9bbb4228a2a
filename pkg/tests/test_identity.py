import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from nabc import identity as I
from nabc import matrix as mx
from nabc.errors import DomainError, InvalidK


def test_frozen_values_k1():
    # k = 1: density sin(x)/2, cdf (1 - cos x)/2
    assert I.angle_cdf(np.pi / 3, 1) == pytest.approx(0.25, abs=1e-15)
    assert I.angle_quantile(0.25, 1) == pytest.approx(np.pi / 3, abs=1e-14)
    ci = I.cell_ci(1, 0.5)
    assert ci["angle_low"] == pytest.approx(np.pi / 3) and ci["angle_high"] == pytest.approx(2 * np.pi / 3)
    assert ci["corr_low"] == pytest.approx(-0.5) and ci["corr_high"] == pytest.approx(0.5)


def test_normalising_constant():
    for k in (1, 2, 7, 40, 200):
        total = integrate.quad(lambda x: I.angle_pdf(x, k), 0, np.pi)[0]
        assert total == pytest.approx(1, abs=1e-10)
    assert I.IdentityAngleLaw(1).c_k == pytest.approx(0.5)
    assert I.IdentityAngleLaw(2).c_k == pytest.approx(2 / np.pi)


def test_cdf_symmetry_and_limits():
    for k in (1, 5, 60):
        assert I.angle_cdf(np.pi / 2, k) == pytest.approx(0.5, abs=1e-15)
        assert I.angle_cdf(0.0, k) == 0 and I.angle_cdf(np.pi, k) == 1
        x = np.linspace(0.01, 1.5, 9)
        assert np.allclose(I.angle_cdf(x, k) + I.angle_cdf(np.pi - x, k), 1, atol=1e-14)


@given(st.integers(1, 120), st.floats(0.2, np.pi - 0.2))
def test_cdf_derivative_is_pdf(k, x):
    h = 1e-5
    d = (I.angle_cdf(x + h, k) - I.angle_cdf(x - h, k)) / (2 * h)
    pdf = I.angle_pdf(x, k)
    assert abs(d - pdf) <= 1e-6 * pdf + 1e-11


@given(st.integers(1, 200), st.floats(1e-6, 1 - 1e-6))
def test_quantile_inverts_cdf(k, u):
    x = I.angle_quantile(u, k)
    assert I.angle_cdf(x, k) == pytest.approx(u, abs=1e-12)


def test_hypergeometric_form_agrees():
    x = np.linspace(0.05, np.pi - 0.05, 101)
    for k in (1, 2, 3, 10, 33, 50):
        assert np.abs(I.angle_cdf(x, k) - I.angle_cdf_hypergeometric(x, k)).max() < 1e-9


def test_k_rules():
    ctx = I.SampleSizeContext(126, 5)
    assert I.k_for_cell(ctx, 1) == 123
    assert I.k_for_cell(ctx, 2, "uniform") == 3
    assert I.k_for_cell(I.SampleSizeContext(4, 3), 1) == 1
    with pytest.raises(InvalidK):
        I.k_for_cell(I.SampleSizeContext(4, 3), 2)
    with pytest.raises(InvalidK):
        I.SampleSizeContext(5, 5)
    assert I.identity_k_vector(4, 10).tolist() == [7, 7, 6, 7, 6, 5]


def test_domain_errors():
    with pytest.raises(DomainError):
        I.angle_quantile(0.0, 3)
    with pytest.raises(DomainError):
        I.angle_quantile(1.0, 3)
    with pytest.raises(InvalidK):
        I.IdentityAngleLaw(0)


def test_ci_properties():
    assert I.cell_ci(4, 1.0)["angle_low"] == I.cell_ci(4, 1.0)["angle_high"] == np.pi / 2
    for k in (1, 9, 80):
        ci = I.cell_ci(k, 0.05)
        assert ci["angle_low"] + ci["angle_high"] == pytest.approx(np.pi)
        assert ci["corr_low"] == pytest.approx(-ci["corr_high"])


def test_pvalues_and_simultaneous_alphas():
    assert I.cell_pvalue(np.pi / 2, 10) == pytest.approx(1)
    assert I.cell_pvalue(np.pi / 3, 1) == pytest.approx(0.5)
    assert I.matrix_pvalue([0.1, 0.2]) == pytest.approx(1 - 0.9 * 0.8)
    lo, hi = I.simultaneous_alphas(0.05, 10)
    assert (1 - lo) ** 10 == pytest.approx(1 - 0.025)
    assert lo + hi == pytest.approx(1)
    assert I.simultaneous_alphas(0.05, 1)[0] == pytest.approx(0.025)


def test_simultaneous_coverage_by_simulation():
    p, n, alpha = 4, 50, 0.1
    res = I.identity_inference(np.eye(p), n, alpha)
    Rs = I.sample_identity_matrices(p, n, 20000, seed=3)
    lo = mx.lower_vector(res["matrix_ci_lower"])
    hi = mx.lower_vector(res["matrix_ci_upper"])
    th = np.array([mx.lower_vector(mx.corr_to_angles(R)) for R in Rs[:4000]])
    # coverage is exact in the angle coordinates
    a_lo, a_hi = res["simultaneous_alphas"]
    ks = I.identity_k_vector(p, n)
    ang_lo = np.array([I.angle_quantile(a_lo, int(k)) for k in ks])
    ang_hi = np.array([I.angle_quantile(a_hi, int(k)) for k in ks])
    inside = np.all((th >= ang_lo) & (th <= ang_hi), axis=1).mean()
    assert inside == pytest.approx(1 - alpha, abs=0.015)
    assert np.all(lo < hi)


def test_sampler_deterministic_and_independent_of_batching():
    a = I.sample_identity_angles(4, 30, 50, seed=9)
    b = I.sample_identity_angles(4, 30, 80, seed=9)
    assert np.array_equal(a, b[:50])


def test_sampler_matches_pearson_of_gaussian_panels(rng):
    # angles of sample Pearson matrices of i.i.d. Gaussians follow the finite-sample law
    p, n = 3, 20
    th = []
    for _ in range(3000):
        X = rng.standard_normal((n, p))
        th.append(mx.lower_vector(mx.corr_to_angles(np.corrcoef(X.T))))
    th = np.array(th)
    for c, k in enumerate(I.identity_k_vector(p, n)):
        assert stats.kstest(th[:, c], lambda x: I.angle_cdf(x, int(k))).pvalue > 0.001


def test_pd_probability():
    d = I.pd_probability(3, 200_000, seed=2)
    assert d.printed_formula == pytest.approx(0.54667, abs=1e-5)
    assert d.gamma_ratio_formula == pytest.approx(np.pi ** 2 / 16)
    assert d.monte_carlo == pytest.approx(np.pi ** 2 / 16, abs=4 * d.standard_error)
    assert I.pd_probability_printed(2) == pytest.approx(math.sqrt(math.pi) / 2)
    assert I.pd_probability_bound(25) < 2e-16


def test_identity_inference_shapes():
    R = np.eye(3)
    R[1, 0] = R[0, 1] = 0.4
    res = I.identity_inference(R, 40)
    assert res["cell_pvalues"][0] < 0.05 < res["cell_pvalues"][1]
    assert res["matrix_pvalue"] == pytest.approx(1 - np.prod(1 - res["cell_pvalues"]))
    for key in ("cell_ci_lower", "cell_ci_upper", "matrix_ci_lower", "matrix_ci_upper"):
        assert mx.is_positive_definite(res[key])
