"""Matrix primitives against hand values and an independent Jacobi SVD."""

import numpy as np
import pytest

from lozo.linalg import (
    LayerShape,
    ParamSet,
    frobenius_norm,
    numeric_rank,
    outer_product_scaled,
    top_singular_values,
)

from oracles import gram_rank, jacobi_singular_values


class TestFrobeniusNorm:
    def test_identity(self):
        assert frobenius_norm(np.eye(2)) == pytest.approx(np.sqrt(2), abs=1e-12)

    def test_zero(self):
        assert frobenius_norm(np.zeros((3, 4))) == 0.0

    def test_three_four_five(self):
        assert frobenius_norm(np.array([[3.0, 4.0]])) == pytest.approx(5.0, abs=1e-12)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = rng.standard_normal((5, 3))
            b = rng.standard_normal((5, 3))
            assert frobenius_norm(a + b) <= frobenius_norm(a) + frobenius_norm(b) + 1e-12


class TestOuterProductScaled:
    def test_basis_vectors(self):
        u = np.array([[1.0], [0.0]])
        v = np.array([[1.0], [0.0]])
        np.testing.assert_array_equal(outer_product_scaled(u, v, 1.0), [[1.0, 0.0], [0.0, 0.0]])

    def test_zero_scale(self):
        rng = np.random.default_rng(1)
        u, v = rng.standard_normal((4, 2)), rng.standard_normal((3, 2))
        np.testing.assert_array_equal(outer_product_scaled(u, v, 0.0), np.zeros((4, 3)))

    def test_hand_multiplication(self):
        u = np.array([[1.0], [2.0]])
        v = np.array([[3.0], [4.0]])
        np.testing.assert_allclose(outer_product_scaled(u, v, 0.5), [[1.5, 2.0], [3.0, 4.0]])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            outer_product_scaled(np.ones((2, 2)), np.ones((3, 1)), 1.0)

    def test_rank_bound_property(self):
        rng = np.random.default_rng(2)
        for r in (1, 2, 3):
            u = rng.standard_normal((6, r))
            v = rng.standard_normal((5, r))
            assert numeric_rank(outer_product_scaled(u, v, 0.7), 1e-10) <= r


class TestNumericRank:
    def test_rank_one_outer(self):
        rng = np.random.default_rng(3)
        a = np.outer(rng.standard_normal(6), rng.standard_normal(4))
        assert numeric_rank(a, 1e-10) == 1

    def test_identity_full_rank(self):
        for k in (1, 3, 7):
            assert numeric_rank(np.eye(k), 1e-10) == k

    def test_zero_matrix(self):
        assert numeric_rank(np.zeros((4, 4)), 1e-10) == 0

    def test_three_random_rank_one_terms(self):
        rng = np.random.default_rng(4)
        a = sum(np.outer(rng.standard_normal(8), rng.standard_normal(6)) for _ in range(3))
        assert numeric_rank(a, 1e-10) == 3
        assert gram_rank(a) == 3  # independent Gram-eigenvalue route agrees

    def test_rel_tol_validated(self):
        with pytest.raises(ValueError):
            numeric_rank(np.eye(2), 0.0)


class TestTopSingularValues:
    def test_diagonal(self):
        np.testing.assert_allclose(top_singular_values(np.diag([3.0, 2.0, 1.0]), 2), [3.0, 2.0], atol=1e-10)

    def test_zero_matrix(self):
        assert top_singular_values(np.zeros((3, 3)), 1) == [0.0]

    def test_matches_jacobi_oracle(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((5, 5))
        got = np.array(top_singular_values(a, 5))
        want = jacobi_singular_values(a)
        assert np.max(np.abs(got - want)) <= 1e-10 * want[0]

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            top_singular_values(np.ones((3, 2)), 3)

    def test_energy_identity(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((4, 6))
        sv = top_singular_values(a, 4)
        total = frobenius_norm(a) ** 2
        assert sum(s * s for s in sv) == pytest.approx(total, rel=1e-12)
        assert sum(s * s for s in top_singular_values(a, 2)) <= total + 1e-12


class TestParamSet:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ParamSet([np.zeros((2, 3))], [LayerShape(3, 2, 1)])

    def test_rank_validation(self):
        with pytest.raises(ValueError):
            LayerShape(2, 3, 4)
        with pytest.raises(ValueError):
            LayerShape(2, 3, 0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ParamSet([np.array([[np.nan, 0.0]])], [LayerShape(1, 2, 1)])

    def test_global_norm(self):
        x = ParamSet([np.full((2, 2), 2.0), np.full((1, 2), 1.0)], [LayerShape(2, 2, 1), LayerShape(1, 2, 1)])
        assert x.norm() == pytest.approx(np.sqrt(16.0 + 2.0), rel=1e-12)

    def test_copy_is_independent(self):
        x = ParamSet.zeros([LayerShape(2, 2, 1)])
        y = x.copy()
        y.layers[0][0, 0] = 5.0
        assert x.layers[0][0, 0] == 0.0
