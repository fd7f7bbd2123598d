import numpy as np
import pytest

from splitmono.linalg import (BlockLayout, PowerIterationError, operator_norm,
                              solve_spd, split_symmetric_skew, symmetric_min_eig)


class TestOperatorNorm:
    def test_identity(self):
        assert operator_norm(np.eye(3)) == pytest.approx(1.0, abs=1e-10)

    def test_diagonal(self):
        assert operator_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, abs=1e-9)

    def test_skew_rotation(self):
        # singular values of [[0,1],[-1,0]] are both 1 (M^T M = I)
        M = np.array([[0.0, 1.0], [-1.0, 0.0]])
        assert operator_norm(M) == pytest.approx(1.0, abs=1e-12)

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError):
            operator_norm(np.zeros((2, 2)))

    def test_dominates_random_directions(self):
        rng = np.random.default_rng(3)
        M = rng.standard_normal((6, 9))
        sigma = operator_norm(M, tol=1e-10)
        for _ in range(100):
            x = rng.standard_normal(9)
            x /= np.linalg.norm(x)
            assert sigma >= np.linalg.norm(M @ x) - 1e-10 * sigma

    def test_matches_svd_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            M = rng.standard_normal((5, 4))
            ref = np.linalg.svd(M, compute_uv=False)[0]
            assert operator_norm(M) == pytest.approx(ref, rel=1e-9)

    def test_non_convergence_carries_estimate(self):
        M = np.diag([1.0, 0.999999])  # tiny spectral gap
        with pytest.raises(PowerIterationError) as err:
            operator_norm(M, tol=1e-15, max_iter=2)
        assert err.value.estimate > 0


class TestSymmetricMinEig:
    def test_diagonal(self):
        assert symmetric_min_eig(np.diag([2.0, 5.0])) == pytest.approx(2.0, abs=1e-9)

    def test_two_by_two(self):
        # eigenvalues of [[2,1],[1,2]] are 2 +- 1
        M = np.array([[2.0, 1.0], [1.0, 2.0]])
        assert symmetric_min_eig(M) == pytest.approx(1.0, abs=1e-9)

    def test_identity(self):
        assert symmetric_min_eig(np.eye(4)) == pytest.approx(1.0, abs=1e-10)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            symmetric_min_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rayleigh_upper_bound(self):
        rng = np.random.default_rng(7)
        G = rng.standard_normal((5, 5))
        M = (G + G.T) / 2
        lam = symmetric_min_eig(M, tol=1e-10)
        for _ in range(100):
            x = rng.standard_normal(5)
            assert lam <= (x @ M @ x) / (x @ x) + 1e-9


class TestSplitSymmetricSkew:
    def test_basic_example(self):
        P = np.array([[2.0, 1.0], [0.0, 2.0]])
        U, S = split_symmetric_skew(P)
        assert np.array_equal(U, np.array([[2.0, 0.5], [0.5, 2.0]]))
        assert np.array_equal(S, np.array([[0.0, 0.5], [-0.5, 0.0]]))

    def test_symmetric_input(self):
        P = np.array([[3.0, 1.0], [1.0, 4.0]])
        U, S = split_symmetric_skew(P)
        assert np.array_equal(U, P)
        assert not np.any(S)

    def test_skew_input(self):
        P = np.array([[0.0, 2.0], [-2.0, 0.0]])
        U, S = split_symmetric_skew(P)
        assert not np.any(U)
        assert np.array_equal(S, P)

    def test_parts_exactly_symmetric_and_skew(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            P = rng.standard_normal((7, 7))
            U, S = split_symmetric_skew(P)
            assert np.array_equal(U, U.T)
            assert np.array_equal(S, -S.T)

    def test_bitwise_reconstruction_on_representable_data(self):
        # (P_ij + P_ji)/2 is exact for integer entries, so U + S == P bitwise
        rng = np.random.default_rng(9)
        for _ in range(50):
            P = rng.integers(-50, 50, size=(6, 6)).astype(float)
            U, S = split_symmetric_skew(P)
            assert np.array_equal(U + S, P)

    def test_reconstruction_within_one_ulp_generic(self):
        eps = np.finfo(float).eps
        rng = np.random.default_rng(13)
        for _ in range(50):
            P = rng.standard_normal((6, 6))
            U, S = split_symmetric_skew(P)
            err = np.abs(U + S - P)
            assert np.all(err <= 8 * eps * np.maximum(np.abs(U) + np.abs(S), 1.0))

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            split_symmetric_skew(np.ones((2, 3)))


class TestSolveSpd:
    def test_identity(self):
        assert np.allclose(solve_spd(np.eye(2), [1.0, 2.0]), [1.0, 2.0])

    def test_diagonal(self):
        x = solve_spd(np.diag([2.0, 4.0]), [2.0, 4.0])
        assert np.allclose(x, [1.0, 1.0], atol=1e-14)

    def test_two_by_two_oracle(self):
        # inverse of [[2,.5],[.5,2]] applied to (1,0): det = 15/4
        U = np.array([[2.0, 0.5], [0.5, 2.0]])
        x = solve_spd(U, [1.0, 0.0])
        assert np.allclose(x, [8.0 / 15.0, -2.0 / 15.0], atol=1e-14)

    def test_not_positive_definite(self):
        with pytest.raises(ValueError, match="not positive definite"):
            solve_spd(np.array([[1.0, 2.0], [2.0, 1.0]]), [1.0, 1.0])

    def test_residual_on_random_spd(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            G = rng.standard_normal((8, 8))
            U = G.T @ G + np.eye(8)
            b = rng.standard_normal(8)
            x = solve_spd(U, b)
            assert np.linalg.norm(U @ x - b) <= 1e-10 * (np.linalg.norm(b) + 1.0)


class TestBlockLayout:
    def test_from_dims_and_slicing(self):
        layout = BlockLayout.from_dims([2, 3])
        assert layout.offsets == (0, 2, 5)
        assert layout.dim == 5 and layout.n_blocks == 2
        v = np.arange(5.0)
        assert np.array_equal(layout.block(v, 1), [2.0, 3.0, 4.0])
        assert np.array_equal(layout.concat(layout.split(v)), v)

    def test_invalid_offsets(self):
        with pytest.raises(ValueError):
            BlockLayout((1, 3))
        with pytest.raises(ValueError):
            BlockLayout((0, 3, 3))
        with pytest.raises(ValueError):
            BlockLayout.from_dims([2, 0])

    def test_concat_checks_total(self):
        layout = BlockLayout.from_dims([2, 2])
        with pytest.raises(ValueError):
            layout.concat([np.zeros(2), np.zeros(3)])
