import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bregsparse.spd_core import (
    NotPositiveDefinite,
    eigh,
    matrix_exp,
    matrix_log,
    random_spd,
    spd_inverse,
    symmetrize,
    trace_product,
    try_spd,
)

from oracles import random_spd as oracle_spd


class TestSymmetrize:
    @pytest.mark.parametrize("M, expected", [
        ([[1, 2], [0, 1]], [[1, 1], [1, 1]]),
        (np.eye(3), np.eye(3)),
        ([[0, 4], [2, 0]], [[0, 3], [3, 0]]),
    ])
    def test_examples(self, M, expected):
        np.testing.assert_array_equal(symmetrize(M), expected)

    def test_result_is_exactly_symmetric_and_read_only(self):
        M = np.random.default_rng(0).standard_normal((5, 5))
        S = symmetrize(M)
        assert np.array_equal(S, S.T)
        with pytest.raises(ValueError):
            S[0, 0] = 1.0

    @pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.zeros(3), np.zeros((0, 0))])
    def test_rejects_non_square(self, bad):
        with pytest.raises(ValueError):
            symmetrize(bad)


class TestTrySpd:
    def test_identity(self):
        A = try_spd(np.eye(2))
        assert A.logdet == 0.0
        np.testing.assert_array_equal(A.chol, np.eye(2))

    def test_indefinite_reports_failing_pivot(self):
        with pytest.raises(NotPositiveDefinite) as info:
            try_spd([[1.0, 2.0], [2.0, 1.0]])
        assert info.value.index == 1

    def test_scaled_identity_logdet(self):
        assert try_spd(2 * np.eye(2)).logdet == pytest.approx(2 * np.log(2), rel=1e-15)
        assert try_spd(2 * np.eye(2)).logdet == pytest.approx(1.386294, abs=1e-6)

    def test_negative_diagonal(self):
        with pytest.raises(NotPositiveDefinite) as info:
            try_spd(np.diag([1.0, -1.0, 2.0]))
        assert info.value.index == 1

    def test_singular_rejected_by_tolerance(self):
        with pytest.raises(NotPositiveDefinite):
            try_spd(np.diag([1.0, 0.0]))
        with pytest.raises(NotPositiveDefinite):
            try_spd(np.diag([1.0, 1e-12]))

    def test_logdet_matches_cholesky_diagonal(self):
        rng = np.random.default_rng(3)
        for d in range(1, 9):
            A = try_spd(oracle_spd(d, rng))
            assert A.logdet == pytest.approx(2 * np.sum(np.log(np.diag(A.chol))), rel=1e-12)


class TestEigh:
    def test_diagonal(self):
        ed = eigh(np.diag([3.0, 1.0]))
        np.testing.assert_array_equal(ed.eigvals, [1.0, 3.0])
        np.testing.assert_allclose(np.abs(ed.eigvecs), [[0, 1], [1, 0]], atol=1e-15)

    def test_identity(self):
        np.testing.assert_allclose(eigh(np.eye(4)).eigvals, np.ones(4))

    def test_two_by_two_by_hand(self):
        ed = eigh([[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose(ed.eigvals, [1.0, 3.0], atol=1e-14)
        r = 1 / np.sqrt(2)
        # eigenvectors are determined up to sign
        np.testing.assert_allclose(np.abs(ed.eigvecs[:, 0] @ [r, -r]), 1.0, atol=1e-14)
        np.testing.assert_allclose(np.abs(ed.eigvecs[:, 1] @ [r, r]), 1.0, atol=1e-14)

    def test_random_suite_bounds(self):
        rng = np.random.default_rng(500)
        for i in range(500):
            d = 2 + i % 7
            A = oracle_spd(d, rng)
            ed = eigh(A)
            Q = ed.eigvecs
            assert np.linalg.norm(ed.reconstruct() - A) <= 1e-10 * max(1.0, np.linalg.norm(A))
            assert np.linalg.norm(Q.T @ Q - np.eye(d)) <= 1e-10
            assert np.all(np.diff(ed.eigvals) >= 0)
            assert try_spd(A).logdet == pytest.approx(np.sum(np.log(ed.eigvals)), rel=1e-9)


class TestMatrixFunctions:
    def test_log_identity_is_zero(self):
        np.testing.assert_array_equal(matrix_log(np.eye(3)), np.zeros((3, 3)))

    def test_log_diagonal(self):
        np.testing.assert_allclose(matrix_log(np.diag([np.e, np.e ** 2])), np.diag([1.0, 2.0]), atol=1e-15)

    def test_log_scaled_identity(self):
        np.testing.assert_allclose(matrix_log(4 * np.eye(2)), np.log(4) * np.eye(2), atol=1e-15)

    def test_exp_log_round_trip(self):
        rng = np.random.default_rng(11)
        for d in range(2, 7):
            A = oracle_spd(d, rng, eps=0.1)
            L = matrix_log(A)
            np.testing.assert_allclose(eigh(L).eigvals, np.log(eigh(A).eigvals), rtol=1e-9, atol=1e-12)
            assert np.linalg.norm(matrix_exp(L) - A) <= 1e-9 * np.linalg.norm(A)


class TestInverse:
    def test_identity(self):
        np.testing.assert_allclose(spd_inverse(np.eye(3)).matrix, np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(spd_inverse(np.diag([2.0, 4.0])).matrix, np.diag([0.5, 0.25]))

    def test_two_by_two_by_hand(self):
        np.testing.assert_allclose(spd_inverse([[2.0, 1.0], [1.0, 2.0]]).matrix,
                                   np.array([[2.0, -1.0], [-1.0, 2.0]]) / 3, atol=1e-15)

    def test_random_suite(self):
        rng = np.random.default_rng(21)
        for i in range(500):
            d = 2 + i % 7
            A = try_spd(oracle_spd(d, rng))
            inv = spd_inverse(A)
            assert np.linalg.norm(A.matrix @ inv.matrix - np.eye(d)) <= 1e-9 * d
            assert inv.logdet == pytest.approx(-A.logdet, abs=1e-10)
            back = spd_inverse(inv).matrix
            assert np.linalg.norm(back - A.matrix) <= 1e-8 * max(1.0, np.linalg.norm(A.matrix))


class TestTraceProduct:
    def test_examples(self):
        assert trace_product(np.eye(2), np.eye(2)) == 2.0
        assert trace_product([[1, 2], [2, 3]], np.zeros((2, 2))) == 0.0
        assert trace_product([[1, 2], [2, 3]], [[4, 0], [0, 5]]) == 19.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            trace_product(np.eye(2), np.eye(3))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_exactly_symmetric(self, d, seed):
        rng = np.random.default_rng(seed)
        A = symmetrize(rng.standard_normal((d, d)))
        B = symmetrize(rng.standard_normal((d, d)))
        assert trace_product(A, B) == trace_product(B, A)


def test_random_spd_is_seeded_and_pd():
    a, b = random_spd(4, 7), random_spd(4, 7)
    np.testing.assert_array_equal(a, b)
    try_spd(a)
