import numpy as np
import pytest
from scipy import linalg

from simfex.exceptions import DataError, NumericalError
from simfex.misclass import CategoryProbs, estimate_pi_p
from simfex.stochastic_matrix import StochasticMatrix, fractional_power, naive_map_matrix

from conftest import ERROR_CELLS, error_cell


class TestStochasticMatrix:
    @pytest.mark.parametrize(
        "entries",
        [
            np.ones((2, 3)) / 3.0,
            np.array([[1.1, -0.1], [0.5, 0.5]]),
            np.array([[0.6, 0.3], [0.5, 0.5]]),
        ],
    )
    def test_invalid(self, entries):
        with pytest.raises(DataError):
            StochasticMatrix(entries)

    def test_read_only(self, pi3):
        with pytest.raises(ValueError):
            np.asarray(pi3)[0, 0] = 1.0

    def test_from_rows_rescales(self):
        matrix = StochasticMatrix.from_rows([[2.0, 2.0], [1.0, 3.0]])
        np.testing.assert_allclose(np.asarray(matrix), [[0.5, 0.5], [0.25, 0.75]])

    def test_from_rows_empty_row(self):
        with pytest.raises(NumericalError):
            StochasticMatrix.from_rows([[0.0, 0.0], [0.5, 0.5]])


class TestFractionalPower:
    def test_zero_power_is_identity(self, pi3):
        np.testing.assert_array_equal(np.asarray(fractional_power(pi3, 0).matrix), np.eye(3))

    def test_integer_power_is_product(self, pi3):
        entries = np.asarray(pi3)
        np.testing.assert_allclose(np.asarray(fractional_power(pi3, 2).matrix), entries @ entries, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(np.asarray(fractional_power(pi3, 1).matrix), entries)

    def test_square_root(self, pi3):
        result = fractional_power(pi3, 0.5)
        root = np.asarray(result.matrix)
        assert result.clip_mass == 0.0
        assert np.linalg.norm(root @ root - np.asarray(pi3)) <= 1e-6

    def test_estimated_matrix_has_real_root(self, normal_params, tertiles):
        pi, _ = estimate_pi_p(normal_params, tertiles)
        result = fractional_power(pi, 0.5)
        assert result.imag_residual <= 1e-6
        np.testing.assert_allclose(np.asarray(result.matrix).sum(axis=1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("lam,nsr,n_categories", ERROR_CELLS)
    def test_square_root_of_estimated_matrix(self, lam, nsr, n_categories):
        pi, _ = estimate_pi_p(*error_cell(lam, nsr, n_categories))
        entries = np.asarray(pi)
        result = fractional_power(pi, 0.5)
        root = np.asarray(result.matrix)
        assert result.imag_residual <= 1e-6
        principal = linalg.fractional_matrix_power(entries, 0.5).real
        assert result.clip_mass == pytest.approx(-principal[principal < 0].sum(), abs=1e-9)
        if result.clip_mass == 0:
            assert np.linalg.norm(root @ root - entries) <= 1e-6
        else:
            # principal root has negative entries, so the reported root is clipped and renormalised
            assert result.clip_mass > 0
            assert np.all(root >= 0)
            np.testing.assert_allclose(root.sum(axis=1), 1.0, atol=1e-12)
            assert np.linalg.norm(root @ root - entries) <= 0.05

    def test_composition(self, pi3):
        a = fractional_power(pi3, 0.5)
        b = fractional_power(pi3, 1.0)
        both = fractional_power(pi3, 1.5)
        assert a.clip_mass == 0.0 and both.clip_mass == 0.0
        product = np.asarray(a.matrix) @ np.asarray(b.matrix)
        assert np.linalg.norm(np.asarray(both.matrix) - product) <= 1e-8

    def test_result_is_stochastic(self, pi3):
        for eta in (0.25, 0.5, 1.5, 2.5):
            entries = np.asarray(fractional_power(pi3, eta).matrix)
            assert np.all(entries >= 0)
            np.testing.assert_allclose(entries.sum(axis=1), 1.0, atol=1e-12)

    def test_negative_power(self, pi3):
        with pytest.raises(DataError):
            fractional_power(pi3, -0.5)

    def test_periodic_matrix_has_no_real_root(self):
        swap = StochasticMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(NumericalError):
            fractional_power(swap, 0.5)


class TestNaiveMapMatrix:
    def test_identity(self):
        p = CategoryProbs(np.array([0.2, 0.5, 0.3]))
        np.testing.assert_array_equal(naive_map_matrix(StochasticMatrix.identity(3), p), np.eye(3))

    def test_two_categories(self):
        pi = StochasticMatrix(np.array([[0.8, 0.2], [0.3, 0.7]]))
        a = naive_map_matrix(pi, CategoryProbs(np.array([0.5, 0.5])))
        np.testing.assert_allclose(a, [[8.0 / 11.0, 3.0 / 11.0], [2.0 / 9.0, 7.0 / 9.0]], rtol=1e-14)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            pi = StochasticMatrix.from_rows(rng.random((4, 4)))
            probs = rng.random(4)
            a = naive_map_matrix(pi, CategoryProbs(probs / probs.sum()))
            assert np.all(a >= 0)
            np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_column_mass(self):
        pi = StochasticMatrix(np.array([[1.0, 0.0], [1.0, 0.0]]))
        with pytest.raises(NumericalError):
            naive_map_matrix(pi, CategoryProbs(np.array([0.5, 0.5])))

    def test_length_mismatch(self, pi3):
        with pytest.raises(DataError):
            naive_map_matrix(pi3, CategoryProbs(np.array([0.5, 0.5])))
