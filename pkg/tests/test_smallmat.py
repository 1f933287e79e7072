import math

import numpy as np
import pytest

from deer.core import NumericDomainError, SingularMatrixError
from deer.smallmat import expm, matmul, phi1, solve


def naive_matmul(a, b):
    """Triple-loop oracle."""
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def taylor_expm(a, terms=30):
    """Truncated series oracle; adequate for ||a|| <= 1."""
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, terms + 1):
        term = term @ a / k
        out = out + term
    return out


class TestMatmul:
    def test_identity(self, rng):
        a = rng.normal(size=(4, 4))
        np.testing.assert_array_equal(matmul(np.eye(4), a), a)

    def test_row_swap(self):
        swap = np.array([[0.0, 1.0], [1.0, 0.0]])
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(swap, m), m[::-1])

    def test_against_triple_loop(self, rng):
        a = rng.normal(size=(8, 8))
        b = rng.normal(size=(8, 8))
        got = matmul(a, b)
        want = naive_matmul(a, b)
        assert np.max(np.abs(got - want)) / np.max(np.abs(want)) < 1e-13

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))


class TestSolve:
    def test_identity(self):
        np.testing.assert_allclose(solve(np.eye(2), np.array([3.0, -1.0])), [3.0, -1.0])

    def test_diagonal(self):
        np.testing.assert_allclose(
            solve(np.diag([2.0, 4.0]), np.array([2.0, 8.0])), [1.0, 2.0]
        )

    def test_residual_on_random_system(self, rng):
        # well-conditioned: diagonally dominated
        a = rng.normal(size=(6, 6)) + 6.0 * np.eye(6)
        b = rng.normal(size=6)
        x = solve(a, b)
        assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) < 1e-12

    def test_singular_raises(self):
        a = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularMatrixError):
            solve(a, np.array([1.0, 1.0]))

    def test_needs_pivoting(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(solve(a, np.array([5.0, 7.0])), [7.0, 5.0])


class TestExpm:
    def test_zero_matrix(self):
        np.testing.assert_array_equal(expm(np.zeros((3, 3))), np.eye(3))

    def test_diagonal(self):
        got = expm(np.diag([1.0, -1.0]))
        np.testing.assert_allclose(got, np.diag([math.e, 1.0 / math.e]), rtol=1e-13)

    def test_against_taylor_oracle(self, rng):
        a = rng.normal(size=(3, 3))
        a *= 1.0 / max(1.0, np.abs(a).sum(axis=0).max())
        got = expm(a)
        want = taylor_expm(a)
        assert np.max(np.abs(got - want)) / np.max(np.abs(want)) < 1e-12

    def test_batched_matches_loop(self, rng):
        a = rng.normal(size=(5, 4, 4))
        batched = expm(a)
        for i in range(5):
            np.testing.assert_allclose(batched[i], expm(a[i]), rtol=1e-12, atol=1e-14)

    def test_moderate_norm_accuracy(self, rng):
        # ||a||_1 up to 10 exercises the scaling/squaring path
        a = rng.normal(size=(4, 4))
        a *= 10.0 / np.abs(a).sum(axis=0).max()
        got = expm(a)
        want = expm(a / 2.0)
        np.testing.assert_allclose(got, want @ want, rtol=1e-11, atol=1e-11)

    def test_non_finite_raises(self):
        with pytest.raises(NumericDomainError):
            expm(np.array([[np.nan, 0.0], [0.0, 0.0]]))


class TestPhi1:
    def test_zero_matrix_limit(self):
        np.testing.assert_allclose(phi1(np.zeros((2, 2))), np.eye(2), atol=1e-15)

    def test_scalar_formula(self):
        got = phi1(np.diag([2.0]))
        np.testing.assert_allclose(got, [[(math.e**2 - 1.0) / 2.0]], rtol=1e-13)

    def test_nilpotent_series_terminates(self):
        # a^2 = 0, so phi1(a) = I + a/2 exactly
        a = np.array([[0.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(phi1(a), np.eye(2) + a / 2.0, atol=1e-15)

    def test_small_norm_series_branch(self, rng):
        a = rng.normal(size=(3, 3)) * 1e-3
        got = phi1(a)
        want = taylor_expm(a) - np.eye(3)
        np.testing.assert_allclose(a @ got, want, atol=1e-15)


class TestAlgebraicProperties:
    def test_expm_inverse(self, rng):
        for _ in range(20):
            a = rng.normal(size=(3, 3))
            a *= 2.0 / max(1.0, np.abs(a).sum(axis=0).max())
            prod = expm(a) @ expm(-a)
            assert np.max(np.abs(prod - np.eye(3))) < 1e-10

    def test_phi1_identity_including_singular(self, rng):
        for k in range(20):
            a = rng.normal(size=(3, 3))
            a *= 2.0 / max(1.0, np.abs(a).sum(axis=0).max())
            if k % 4 == 0:
                a[:, 0] = 0.0  # make it exactly singular
            lhs = a @ phi1(a)
            rhs = expm(a) - np.eye(3)
            assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_quadrature_weight_matches_direct_inverse_formula(self, rng):
        # delta * phi1(-G*delta) z == G^{-1} (I - exp(-G*delta)) z for
        # well-conditioned G: the two routes to the same per-step weight
        for _ in range(10):
            g = rng.normal(size=(3, 3)) + 3.0 * np.eye(3)
            z = rng.normal(size=3)
            delta = 0.37
            lhs = delta * (phi1(-g * delta) @ z)
            rhs = solve(g, (np.eye(3) - expm(-g * delta)) @ z)
            assert np.max(np.abs(lhs - rhs)) < 1e-9
