import numpy as np
import pytest
from scipy import integrate, stats

from simfex import error_model
from simfex.error_model import (
    LAMBDA_BOUNDS,
    LAMBDA_GRID_STEP,
    SIGMA2_FLOOR,
    ErrorModelParams,
    ReplicateData,
    box_cox_transform,
    density_w_given_x,
    density_x,
    estimating_equation_residuals,
    fit_error_params,
    fit_lambda,
    inverse_box_cox,
    normality_diagnostics,
    profile_loglik,
)
from simfex.exceptions import DataError, DomainError, EstimationError

from conftest import draw_replicates


class TestBoxCoxTransform:
    def test_one_maps_to_zero(self):
        for lam in (-1.5, 0.0, 0.26, 1.0, 2.0):
            assert box_cox_transform(1.0, lam) == pytest.approx(0.0, abs=1e-15)

    def test_log_at_zero(self):
        assert box_cox_transform(np.e, 0.0) == pytest.approx(1.0)

    def test_power_case(self):
        assert box_cox_transform(4.0, 0.5) == pytest.approx(2.0)

    def test_scalar_input_gives_float(self):
        assert isinstance(box_cox_transform(2.0, 1.0), float)

    def test_small_lambda_approaches_log(self):
        x = np.array([0.5, 1.0, 2.0, 10.0])
        np.testing.assert_allclose(box_cox_transform(x, 1e-8), np.log(x), atol=1e-6)

    def test_increasing(self):
        x = np.linspace(0.1, 20.0, 200)
        for lam in (-1.0, 0.0, 0.5, 1.5):
            assert np.all(np.diff(box_cox_transform(x, lam)) > 0)

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_non_positive_rejected(self, bad):
        with pytest.raises(DomainError):
            box_cox_transform(np.array([1.0, bad]), 0.5)

    def test_inverse(self):
        assert inverse_box_cox(box_cox_transform(3.7, 0.26), 0.26) == pytest.approx(3.7)


class TestFitLambda:
    def test_recovers_one_for_additive_normal(self):
        rng = np.random.default_rng(1)
        w = 1.0 + rng.normal(10.0, 3.0, 5000) + rng.normal(0.0, np.sqrt(2.0), 5000)
        w = w[w > 0]
        assert 0.85 <= fit_lambda(w).lam <= 1.15

    def test_recovers_zero_for_multiplicative(self):
        rng = np.random.default_rng(2)
        w = np.exp(rng.normal(3.0, 0.5, 5000)) * np.exp(rng.normal(0.0, 0.1, 5000))
        assert -0.15 <= fit_lambda(w).lam <= 0.15

    def test_grid_optimality(self):
        rng = np.random.default_rng(3)
        w = np.exp(rng.normal(1.0, 0.6, 500))
        fitted = fit_lambda(w)
        grid = np.arange(LAMBDA_BOUNDS[0], LAMBDA_BOUNDS[1] + LAMBDA_GRID_STEP / 2, LAMBDA_GRID_STEP)
        best_on_grid = max(profile_loglik(w, lam) for lam in grid)
        assert fitted.loglik >= best_on_grid - 1e-9
        assert fitted.loglik == pytest.approx(profile_loglik(w, fitted.lam))

    def test_loglik_continuous_at_zero(self):
        rng = np.random.default_rng(3)
        w = np.exp(rng.normal(1.0, 0.6, 500))
        at_zero = -0.5 * w.size * np.log(np.log(w).var()) - np.log(w).sum()
        assert profile_loglik(w, 0.0) == pytest.approx(at_zero, rel=1e-12)
        for tiny in (1.7763568394002505e-15, -2e-12, 1e-9):
            assert profile_loglik(w, tiny) == pytest.approx(at_zero, abs=1e-5)

    @pytest.mark.parametrize("lam", [-1.3, -0.4, 0.26, 1.0, 1.8])
    def test_loglik_agrees_with_scipy_away_from_zero(self, lam):
        rng = np.random.default_rng(4)
        w = np.exp(rng.normal(2.0, 0.4, 300))
        assert profile_loglik(w, lam) == pytest.approx(stats.boxcox_llf(lam, w), rel=1e-10)

    def test_grid_evaluation_matches_pointwise(self, monkeypatch):
        rng = np.random.default_rng(5)
        w = np.exp(rng.normal(1.5, 0.5, 800))
        grid = np.arange(LAMBDA_BOUNDS[0], LAMBDA_BOUNDS[1] + LAMBDA_GRID_STEP / 2, LAMBDA_GRID_STEP)
        pointwise = np.array([profile_loglik(w, lam) for lam in grid])
        np.testing.assert_allclose(error_model._loglik_curve(w, grid), pointwise, rtol=1e-12)
        monkeypatch.setattr(error_model, "GRID_CHUNK_CELLS", 3 * w.size + 1)
        np.testing.assert_allclose(error_model._loglik_curve(w, grid), pointwise, rtol=1e-12)

    def test_constant_input(self):
        with pytest.raises(EstimationError):
            fit_lambda(np.full(50, 3.0))

    def test_too_few_values(self):
        with pytest.raises(DataError):
            fit_lambda(np.arange(1.0, 6.0))


class TestReplicateData:
    def test_single_replicate_rejected(self):
        with pytest.raises(DataError):
            ReplicateData(np.ones((10, 1)))

    def test_non_positive_rejected(self):
        with pytest.raises(DomainError):
            ReplicateData(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_shape(self):
        data = ReplicateData(np.ones((7, 3)) + np.arange(3))
        assert (data.n_subjects, data.n_replicates) == (7, 3)
        assert data.take([0, 0, 1]).n_subjects == 3


class TestFitErrorParams:
    def test_recovery(self, rng):
        reps = ReplicateData(draw_replicates(rng, 5000))
        params = fit_error_params(None, reps, lam=1.0)
        assert params.mu_lambda_x == pytest.approx(10.0, rel=0.05)
        assert params.sigma2_lambda_x == pytest.approx(4.0, rel=0.05)
        assert params.sigma2_u == pytest.approx(2.0, rel=0.05)
        assert params.warnings == ()

    def test_estimating_equations_hold(self, rng):
        reps = ReplicateData(draw_replicates(rng, 300, r=3))
        params = fit_error_params(reps.values[:, 0], reps)
        np.testing.assert_allclose(estimating_equation_residuals(params, reps), 0.0, atol=1e-10)

    def test_signal_variance_uses_sample_variance_of_means(self, rng):
        reps = ReplicateData(draw_replicates(rng, 40, r=3))
        params = fit_error_params(None, reps, lam=1.0)
        means = reps.values.mean(axis=1)
        within = reps.values.var(axis=1, ddof=1).mean()
        assert params.sigma2_u == pytest.approx(within)
        assert params.sigma2_lambda_x == pytest.approx(means.var(ddof=1) - within / 3)

    def test_identical_replicates_have_no_error(self, rng):
        x = np.exp(rng.normal(1.0, 0.5, 200))
        params = fit_error_params(x, np.column_stack([x, x]))
        assert params.sigma2_u == 0.0

    def test_negative_signal_variance_is_floored(self):
        values = np.tile([[10.0, 12.0], [12.0, 10.0]], (20, 1))
        params = fit_error_params(None, ReplicateData(values), lam=1.0)
        assert params.sigma2_lambda_x == SIGMA2_FLOOR
        assert len(params.warnings) == 1

    def test_lambda_estimated_from_primary(self, rng):
        reps = ReplicateData(np.exp(rng.normal(2.0, 0.5, (400, 2))))
        primary = np.exp(rng.normal(2.0, 0.5, 2000))
        assert fit_error_params(primary, reps).lam == pytest.approx(fit_lambda(primary).lam)

    def test_more_subjects_do_not_hurt(self):
        errors = {250: [], 1000: []}
        for seed in range(50):
            rng = np.random.default_rng(seed)
            for n0 in errors:
                params = fit_error_params(None, ReplicateData(draw_replicates(rng, n0)), lam=1.0)
                errors[n0].append(abs(params.sigma2_lambda_x - 4.0))
        assert np.median(errors[1000]) <= np.median(errors[250])


class TestDensities:
    def test_density_x_integrates_to_one(self):
        params = ErrorModelParams(lam=0.5, mu_lambda_x=4.0, sigma2_lambda_x=1.0, sigma2_u=1.0)
        total, _ = integrate.quad(lambda x: density_x(x, params), 1e-12, np.inf, limit=200)
        assert total == pytest.approx(1.0, abs=1e-4)

    def test_density_w_given_x_integrates_to_one(self, normal_params):
        total, _ = integrate.quad(lambda w: density_w_given_x(w, 11.0, normal_params), 1e-9, np.inf, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_density_matches_lognormal(self):
        params = ErrorModelParams(lam=0.0, mu_lambda_x=1.0, sigma2_lambda_x=0.25, sigma2_u=0.1)
        x = np.array([0.5, 2.0, 5.0])
        expected = np.exp(-((np.log(x) - 1.0) ** 2) / 0.5) / (x * 0.5 * np.sqrt(2 * np.pi))
        np.testing.assert_allclose(density_x(x, params), expected, rtol=1e-12)

    def test_degenerate_error_has_no_density(self):
        params = ErrorModelParams(lam=1.0, mu_lambda_x=10.0, sigma2_lambda_x=4.0, sigma2_u=0.0)
        with pytest.raises(DataError):
            density_w_given_x(10.0, 10.0, params)


class TestNormalityDiagnostics:
    def test_transformed_lognormal_is_symmetric(self, rng):
        w = np.exp(rng.normal(2.0, 0.5, 20000))
        result = normality_diagnostics(w, 0.0)
        assert result["skewness_w"] > 1.0
        assert abs(result["skewness_transformed"]) < 0.1
        assert result["kurtosis_transformed"] == pytest.approx(3.0, abs=0.2)

    def test_replicate_difference(self, rng):
        reps = ReplicateData(draw_replicates(rng, 2000))
        result = normality_diagnostics(reps.values[:, 0], 1.0, reps)
        assert abs(result["diff_mean"]) < 0.2
        assert 0.0 <= result["diff_t_pvalue"] <= 1.0
