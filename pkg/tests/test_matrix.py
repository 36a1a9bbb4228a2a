import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_corr
from nabc import matrix as mx
from nabc.errors import DegenerateSine, InvalidPermutation, NotPositiveDefinite


def test_cell_bookkeeping():
    assert mx.n_cells(5) == 10 and mx.dim_from_cells(10) == 5
    assert mx.cell_labels(4) == [(2, 1), (3, 1), (3, 2), (4, 1), (4, 2), (4, 3)]
    for k, (i, j) in enumerate(mx.cell_labels(6)):
        assert mx.cell_position(6, i, j) == k
    with pytest.raises(Exception):
        mx.dim_from_cells(7)


def test_cholesky_matches_numpy(rng):
    for p in (2, 5, 12):
        R = random_corr(rng, p)
        assert np.allclose(mx.cholesky_lower(R), np.linalg.cholesky(R), atol=1e-13)


def test_cholesky_reports_failing_pivot():
    R = np.array([[1, 0.9, 0.9], [0.9, 1, -0.9], [0.9, -0.9, 1]])
    with pytest.raises(NotPositiveDefinite) as ei:
        mx.cholesky_lower(R)
    assert ei.value.cell == (3, 3)
    assert not mx.is_positive_definite(R)


def test_identity_angles_are_right_angles():
    th = mx.corr_to_angles(np.eye(4))
    assert np.allclose(mx.lower_vector(th), np.pi / 2)
    assert np.isnan(th[0, 0]) and np.isnan(th[0, 1])


def test_two_by_two_angle():
    th = mx.corr_to_angles(np.array([[1, 0.5], [0.5, 1]]))
    assert th[1, 0] == pytest.approx(np.pi / 3)


@given(st.integers(2, 7), st.integers(0, 10_000))
def test_angle_round_trip(p, seed):
    rng = np.random.default_rng(seed)
    R = random_corr(rng, p, p + 2)
    back = mx.angles_to_corr(mx.corr_to_angles(R))
    assert np.abs(back - R).max() < 1e-10


@given(arrays(float, 10, elements=st.floats(0.05, np.pi - 0.05)))
def test_any_angles_give_pd_matrix(theta):
    R = mx.angles_to_corr(mx.angle_matrix_from_vector(theta, 5))
    assert mx.is_positive_definite(R, tol=0)
    assert np.allclose(np.diag(R), 1)
    assert np.allclose(mx.lower_vector(mx.corr_to_angles(R)), theta, atol=1e-7)


def test_batched_routines_match_single(rng):
    Rs = np.stack([random_corr(rng, 4) for _ in range(6)])
    Rs[3] = np.array([[1, .9, .9, 0], [.9, 1, -.9, 0], [.9, -.9, 1, 0], [0, 0, 0, 1]])
    theta, ok = mx.corr_to_angle_vectors(Rs)
    assert ok.tolist() == [True, True, True, False, True, True]
    for r in np.nonzero(ok)[0]:
        assert np.allclose(theta[r], mx.lower_vector(mx.corr_to_angles(Rs[r])), atol=1e-13)
    back = mx.angle_vectors_to_corr(theta[ok], 4)
    assert np.allclose(back, Rs[ok], atol=1e-12)


def test_degenerate_sine():
    B = np.array([[1, 0], [1, 0]], dtype=float)
    with pytest.raises((DegenerateSine, NotPositiveDefinite)):
        mx.corr_to_angles(B @ B.T)


def test_permute(rng):
    R = random_corr(rng, 5)
    order = [4, 2, 0, 1, 3]
    P = mx.permute(R, order)
    assert P[1, 0] == R[2, 4]
    assert np.allclose(mx.permute(P, mx.inverse_permutation(order)), R)
    with pytest.raises(InvalidPermutation):
        mx.permute(R, [0, 0, 1, 2, 3])


def test_check_dependence_matrix():
    with pytest.raises(Exception):
        mx.check_dependence_matrix(np.array([[1, 0.2], [0.3, 1]]))
    with pytest.raises(Exception):
        mx.check_dependence_matrix(np.array([[1, 1.2], [1.2, 1]]))


def test_nearest_pd_repairs():
    R = np.array([[1, .9, .9], [.9, 1, -.9], [.9, -.9, 1]])
    S = mx.nearest_pd(R)
    assert mx.is_positive_definite(S) and np.allclose(np.diag(S), 1)


def test_eigenvalues_descending(rng):
    lam = mx.eigenvalues(random_corr(rng, 6))
    assert np.all(np.diff(lam) <= 0) and lam.sum() == pytest.approx(6)
