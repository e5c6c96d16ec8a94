import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bilinear_sme.linalg import SPECTRAL_TOL, kron, spectral_radius, unvec, vec

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def mat(r, c):
    return arrays(np.float64, (r, c), elements=finite)


def test_kron_column_example():
    np.testing.assert_array_equal(kron([[2.0]], [1.0, -1.0]), [[2.0], [-2.0]])


def test_kron_identity():
    np.testing.assert_array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))


def test_kron_shape():
    assert kron(np.ones((2, 3)), np.ones((4, 5))).shape == (8, 15)


@given(mat(2, 2), mat(2, 2), mat(2, 2))
def test_vec_identity_2x2(a, b, X):
    # vec(a X b^T) == (b (x) a) vec(X), checked against explicit products
    lhs = vec(a @ X @ b.T)
    rhs = kron(b, a) @ vec(X)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * (1 + np.abs(lhs).max()))


@given(mat(3, 3), mat(3, 3), mat(3, 3))
def test_vec_identity_3x3(M, X, N):
    np.testing.assert_allclose(vec(M @ X @ N), kron(N.T, M) @ vec(X),
                               atol=1e-10 * (1 + np.abs(M @ X @ N).max()))


@given(mat(2, 3), mat(3, 2), mat(3, 2))
def test_kron_bilinear(a, b, c):
    np.testing.assert_allclose(kron(a, b + c), kron(a, b) + kron(a, c), atol=1e-12 * 400)


def test_vec_examples():
    np.testing.assert_array_equal(vec(np.array([[1.0, 3.0], [2.0, 4.0]])), [1, 2, 3, 4])
    np.testing.assert_array_equal(vec(np.zeros((2, 2))), np.zeros(4))


@given(mat(3, 3))
def test_vec_round_trip(a):
    np.testing.assert_array_equal(unvec(vec(a), 3), a)


def test_unvec_bad_length():
    with pytest.raises(ValueError):
        unvec(np.ones(5), 2)


def test_spectral_radius_diagonal():
    assert abs(spectral_radius(np.diag([0.9, 0.3])) - 0.9) <= SPECTRAL_TOL


def test_spectral_radius_zero_and_nilpotent():
    assert spectral_radius(np.zeros((3, 3))) == 0.0
    assert spectral_radius(np.array([[0.0, 1.0], [0.0, 0.0]])) == 0.0


def test_spectral_radius_rotation():
    assert abs(spectral_radius(np.array([[0.0, 1.0], [-1.0, 0.0]])) - 1.0) <= SPECTRAL_TOL


def test_spectral_radius_non_square():
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))


@given(arrays(np.float64, (4, 4), elements=st.floats(-2, 2)))
def test_spectral_radius_triangular(a):
    t = np.triu(a)
    rho = float(np.max(np.abs(np.diag(t))))
    assert abs(spectral_radius(t) - rho) <= SPECTRAL_TOL * max(1.0, rho) + 1e-12


def test_spectral_radius_matches_eigvals():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = rng.standard_normal((5, 5))
        rho = np.max(np.abs(np.linalg.eigvals(a)))
        assert abs(spectral_radius(a) - rho) <= SPECTRAL_TOL * max(1.0, rho)


def test_spectral_radius_tiny_scale():
    # the log-scale accumulation keeps very small matrices accurate
    a = 1e-200 * np.diag([3.0, 1.0])
    assert spectral_radius(a) == pytest.approx(3e-200, rel=SPECTRAL_TOL)
