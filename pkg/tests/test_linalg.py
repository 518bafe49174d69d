import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from declora import rng as rngmod
from declora.linalg import (
    NotSymmetricError,
    ShapeError,
    frobenius_norm_sq,
    gaussian_matrix,
    matmul,
    scale_add,
    symmetric_eigenvalues,
    symmetric_eigh,
)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def test_matmul_identity(rng):
    m = rng.standard_normal((2, 2))
    assert np.array_equal(matmul(np.eye(2), m), m)


def test_matmul_hand_example():
    assert matmul(np.array([[1.0, 2], [3, 4]]), np.array([[0.0], [1]])).tolist() == [[2.0], [4.0]]


def test_matmul_against_triple_loop(rng):
    a, b = rng.standard_normal((5, 3)), rng.standard_normal((3, 4))
    # inner dimension 3: BLAS and the loop add the same three terms
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=0, atol=1e-15)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(rng):
    for _ in range(20):
        p, q, r, s = rng.integers(1, 8, size=4)
        a, b, c = rng.standard_normal((p, q)), rng.standard_normal((q, r)), rng.standard_normal((r, s))
        left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        assert np.linalg.norm(left - right) <= 1e-10 * max(np.linalg.norm(left), 1e-300)


@pytest.mark.parametrize("m, expected", [(np.zeros((3, 2)), 0.0), (np.eye(3), 3.0), (np.array([[3.0, 4.0]]), 25.0)])
def test_frobenius_norm_sq(m, expected):
    assert frobenius_norm_sq(m) == expected


def test_scale_add_examples(rng):
    m = rng.standard_normal((3, 2))
    assert np.array_equal(scale_add(m, 1, m, -1), np.zeros((3, 2)))
    assert np.array_equal(scale_add(m, 1, np.zeros((3, 2)), 0), m)
    assert np.array_equal(scale_add(np.eye(2), 2, np.eye(2), 3), 5 * np.eye(2))
    with pytest.raises(ShapeError):
        scale_add(m, 1, m.T, 1)


def test_operations_do_not_mutate(rng):
    a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    a0, b0 = a.copy(), b.copy()
    matmul(a, b)
    scale_add(a, 2, b, 3)
    sym = a + a.T
    s0 = sym.copy()
    symmetric_eigh(sym)
    assert np.array_equal(a, a0) and np.array_equal(b, b0) and np.array_equal(sym, s0)


def test_gaussian_determinism():
    x = gaussian_matrix(4, 3, 0.5, rngmod.stream(1, "init"))
    y = gaussian_matrix(4, 3, 0.5, rngmod.stream(1, "init"))
    assert np.array_equal(x, y)
    assert not np.array_equal(x, gaussian_matrix(4, 3, 0.5, rngmod.stream(2, "init")))


def test_gaussian_moments():
    x = gaussian_matrix(100_000, 1, 1.0, rngmod.stream(0, "data"))
    assert -0.02 <= x.mean() <= 0.02
    assert 0.97 <= x.var() <= 1.03


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_gaussian_rejects_nonpositive_sigma(sigma):
    with pytest.raises(ValueError):
        gaussian_matrix(2, 2, sigma, rngmod.stream(0, "data"))


def test_eigenvalues_small_cases():
    np.testing.assert_allclose(symmetric_eigenvalues(np.diag([3.0, 1.0, 2.0])), [3, 2, 1])
    np.testing.assert_allclose(symmetric_eigenvalues(np.array([[0.0, 1], [1, 0]])), [1, -1], atol=1e-15)


def test_eigenvalues_ring4():
    ring = np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], dtype=float)
    q = (np.eye(4) + ring) / 3
    expected = sorted(((1 + 2 * np.cos(2 * np.pi * k / 4)) / 3 for k in range(4)), reverse=True)
    np.testing.assert_allclose(symmetric_eigenvalues(q), expected, atol=1e-14)


def test_eigen_rejects_bad_input():
    with pytest.raises(ShapeError):
        symmetric_eigenvalues(np.ones((2, 3)))
    with pytest.raises(NotSymmetricError):
        symmetric_eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.parametrize("n", [1, 2, 3, 7, 16, 41])
def test_eigh_reconstruction_and_trace(n, rng):
    m = rng.standard_normal((n, n))
    m = m + m.T
    w, v = symmetric_eigh(m)
    assert np.all(np.diff(w) <= 0)
    assert np.linalg.norm(v @ np.diag(w) @ v.T - m) <= 1e-8 * (1 + np.linalg.norm(m))
    assert abs(w.sum() - np.trace(m)) <= 1e-9 * max(1.0, abs(np.trace(m)), np.abs(w).sum())
    np.testing.assert_allclose(w, np.linalg.eigvalsh(m)[::-1], atol=1e-10 * (1 + np.abs(w).max()))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(-10, 10, allow_nan=False)))
def test_eigenvalues_match_numpy_property(m):
    m = m + m.T
    np.testing.assert_allclose(symmetric_eigenvalues(m), np.linalg.eigvalsh(m)[::-1], atol=1e-9 * (1 + np.abs(m).max()))


def test_doubly_stochastic_top_eigenvalue(rng):
    # random symmetric doubly stochastic: average of permutation-symmetrised matrices
    n = 9
    q = np.zeros((n, n))
    for _ in range(5):
        p = np.eye(n)[rng.permutation(n)]
        q += (p + p.T) / 10
    assert abs(symmetric_eigenvalues(q)[0] - 1.0) <= 1e-10
