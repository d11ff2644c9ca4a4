import math

import numpy as np
import pytest
from scipy.integrate import quad

import spectral
from errors import UnsupportedStatisticError, UsageError
from gpd import (ExceedanceSet, GpdParams, gpd_cdf, gpd_log_density, gpd_log_posterior, gpd_quantile,
                 gpd_sample, jeffreys_log_prior)
from mcmc import McmcConfig, PosteriorDraws
from spectral import SpectralModelSpec, angular_log_likelihood, angular_sample, normalize_angular
from streams import make_rng
from surprise import (BLOCK_SIZE, JeffreysPrior, PValueEstimate, TestStatisticSpec, UniformBoxPrior,
                      discrepancy, order_statistic_log_density, partial_posterior_log_target,
                      partial_posterior_pvalue, posterior_predictive_pvalue, prior_predictive_pvalue,
                      resolve_model, _predictive_count, _statistics)
from sweep import SweepConfig, fit_threshold

U0 = 20.0
NEGLOGLIK = TestStatisticSpec()
MAXIMUM = TestStatisticSpec('maximum')


def as_draws(natural_rows):
    """PosteriorDraws holding (xi, log sigma) rows for the given (xi, sigma) pairs."""
    rows = np.array([[xi, math.log(sigma)] for xi, sigma in natural_rows])
    return PosteriorDraws(draws=rows, acceptance_rate=1.0, ess=np.ones(2), seed=0, n_burn=0, n_keep=len(rows))


def hand_quantile(q, xi, sigma):
    return U0 + sigma / xi * ((1 - q) ** (-xi) - 1)


def hand_neg_log_lik(y, xi, sigma):
    return -sum(-math.log(sigma) - (1 + 1 / xi) * math.log(1 + xi * (v - U0) / sigma) for v in y)


def hand_pvalue(theta, y_obs, statistic, seed):
    """Double loop over draws and replicate values, one replicate stream per block of draws."""
    count = 0
    for start in range(0, len(theta), BLOCK_SIZE):
        rows = theta[start:start + BLOCK_SIZE]
        uniforms = make_rng(seed, 0, start // BLOCK_SIZE).random((len(rows), len(y_obs)))
        for (xi, sigma), u_row in zip(rows, uniforms):
            replicate = [hand_quantile(q, xi, sigma) for q in u_row]
            if statistic(replicate, xi, sigma) >= statistic(list(y_obs), xi, sigma):
                count += 1
    return count / len(theta)


@pytest.fixture
def tiny():
    y_obs = ExceedanceSet([21.3, 24.9, 37.0], U0)
    theta = [(0.2, 8.0), (0.35, 5.0)]
    return y_obs, theta


class TestStatisticSpecs:
    def test_order_index(self):
        assert MAXIMUM.order_index(12) == 12
        assert TestStatisticSpec('empirical_quantile', quantile_index=3).order_index(12) == 3
        assert TestStatisticSpec('empirical_quantile', quantile_fraction=0.9).order_index(10) == 9
        assert TestStatisticSpec('empirical_quantile', quantile_fraction=0.9).order_index(11) == 10

    def test_validation(self):
        with pytest.raises(UsageError):
            TestStatisticSpec('median')
        with pytest.raises(UsageError):
            TestStatisticSpec('empirical_quantile')
        with pytest.raises(UsageError):
            TestStatisticSpec('maximum', quantile_index=3)
        with pytest.raises(UsageError):
            TestStatisticSpec('empirical_quantile', quantile_index=5).order_index(4)

    def test_labels(self):
        assert NEGLOGLIK.label() == 'negloglik'
        assert TestStatisticSpec('empirical_quantile', quantile_fraction=0.9).label() == 'quantile:0.9'

    def test_estimate_from_counts(self):
        est = PValueEstimate.from_counts(3, 4, 10)
        assert est.p == 0.75
        assert est.mc_se == pytest.approx(math.sqrt(0.75 * 0.25 / 4))
        assert est.extremeness == 0.25


class TestOracles:
    def test_posterior_predictive_tiny_case(self, tiny):
        y_obs, theta = tiny
        est = posterior_predictive_pvalue(as_draws(theta), y_obs, NEGLOGLIK, 'gpd', 77)
        assert est.p == hand_pvalue(theta, y_obs.values, hand_neg_log_lik, 77)
        assert est.n_rep == 2 and est.n_obs == 3

    def test_partial_posterior_tiny_case(self, tiny):
        y_obs, theta = tiny
        est = partial_posterior_pvalue(as_draws(theta), y_obs, MAXIMUM, 78)
        assert est.p == hand_pvalue(theta, y_obs.values, lambda y, xi, sigma: max(y), 78)

    def test_prior_predictive_tiny_case(self, tiny):
        y_obs, _ = tiny
        prior = UniformBoxPrior(0.1, 0.4, 4.0, 10.0)
        prior_rng = make_rng(79, 1)
        xi = prior_rng.uniform(0.1, 0.4, 2)
        sigma = prior_rng.uniform(4.0, 10.0, 2)
        est = prior_predictive_pvalue(prior, y_obs, NEGLOGLIK, 'gpd', 79, n_draws=2)
        assert est.p == hand_pvalue(list(zip(xi, sigma)), y_obs.values, hand_neg_log_lik, 79)

    def test_blocks_use_their_own_streams(self):
        y_obs = ExceedanceSet(np.linspace(20.5, 45.0, 4), U0)
        theta = [(0.1 + 0.3 * k / 700, 6.0 + k / 100) for k in range(700)]
        est = posterior_predictive_pvalue(as_draws(theta), y_obs, MAXIMUM, 'gpd', 5)
        assert est.p == hand_pvalue(theta, y_obs.values, lambda y, xi, sigma: max(y), 5)

    def test_point_mass_prior_matches_posterior(self, tiny):
        y_obs, _ = tiny
        point = UniformBoxPrior(0.25, 0.25, 1.0, 1.0)
        draws = as_draws([(0.25, 1.0)] * 40)
        prior_est = prior_predictive_pvalue(point, y_obs, NEGLOGLIK, 'gpd', 11, n_draws=40)
        post_est = posterior_predictive_pvalue(draws, y_obs, NEGLOGLIK, 'gpd', 11)
        assert prior_est.p == post_est.p

    def test_order_statistics_agree(self, tiny):
        y_obs, theta = tiny
        draws = as_draws(theta * 50)
        by_max = posterior_predictive_pvalue(draws, y_obs, MAXIMUM, 'gpd', 3).p
        by_index = posterior_predictive_pvalue(
            draws, y_obs, TestStatisticSpec('empirical_quantile', quantile_index=3), 'gpd', 3).p
        by_fraction = posterior_predictive_pvalue(
            draws, y_obs, TestStatisticSpec('empirical_quantile', quantile_fraction=1.0), 'gpd', 3).p
        assert by_max == by_index == by_fraction

    def test_generator_and_seed_are_both_accepted(self, tiny):
        y_obs, theta = tiny
        a = posterior_predictive_pvalue(as_draws(theta * 20), y_obs, MAXIMUM, 'gpd', make_rng(4))
        b = posterior_predictive_pvalue(as_draws(theta * 20), y_obs, MAXIMUM, 'gpd', make_rng(4))
        assert a.p == b.p


class TestPosteriorPredictive:
    def test_maximum_beyond_endpoint(self):
        y_obs = ExceedanceSet([21.0, 25.0, 1000.0], U0)
        draws = as_draws([(-0.2, 5.0)] * 300)
        assert posterior_predictive_pvalue(draws, y_obs, MAXIMUM, 'gpd', 1).p == 0.0

    def test_off_support_observation_is_maximally_surprising(self):
        y_obs = ExceedanceSet([21.0, 25.0, 1000.0], U0)
        draws = as_draws([(-0.2, 5.0)] * 300)
        assert posterior_predictive_pvalue(draws, y_obs, NEGLOGLIK, 'gpd', 1).p == 0.0

    def test_quantile_statistic_needs_gpd(self):
        w = angular_sample(50, SpectralModelSpec.logistic(0.5), make_rng(1))
        draws = PosteriorDraws(np.zeros((10, 1)), 1.0, np.ones(1), 0, 0, 10)
        with pytest.raises(UsageError):
            posterior_predictive_pvalue(draws, w, MAXIMUM, 'logistic', 1)

    def test_angular_model(self):
        w = angular_sample(40, SpectralModelSpec.logistic(0.5), make_rng(1))
        draws = PosteriorDraws(np.zeros((20, 1)), 1.0, np.ones(1), 0, 0, 20)
        est = posterior_predictive_pvalue(draws, w, NEGLOGLIK, 'logistic', 1)
        assert 0.0 <= est.p <= 1.0 and est.n_obs == 40

    def test_gpd_model_needs_exceedances(self):
        with pytest.raises(UsageError):
            posterior_predictive_pvalue(as_draws([(0.2, 8.0)]), np.array([21.0]), MAXIMUM, 'gpd', 1)



class TestInvariance:
    def test_reciprocal_likelihood_gives_the_same_p(self):
        y_obs = ExceedanceSet(gpd_sample(25, GpdParams(0.2, 8.0, U0), make_rng(14)), U0)
        draws = as_draws([(0.15 + 0.01 * k, 6.0 + 0.1 * k) for k in range(40)])
        model = resolve_model('gpd', y_obs)
        theta = model.natural(draws.draws)

        def reciprocal_density(stat, m, rows, samples):
            return np.exp(_statistics(stat, m, rows, samples))

        direct = _predictive_count(theta, y_obs, NEGLOGLIK, model, 5)
        assert _predictive_count(theta, y_obs, NEGLOGLIK, model, 5, statistic=reciprocal_density) == direct
        assert posterior_predictive_pvalue(draws, y_obs, NEGLOGLIK, 'gpd', 5).p == direct / 40

    def test_rescaled_angular_density_changes_nothing(self, monkeypatch):
        spec = SpectralModelSpec.bilogistic(0.4, 0.7)
        w = angular_sample(40, spec, make_rng(3))
        draws = PosteriorDraws(np.array([[0.0, 0.0], [-0.4, 0.8], [0.3, -0.2]] * 10), 1.0, np.ones(2), 0, 0, 30)
        base_ll = angular_log_likelihood(spec, w)
        base_p = posterior_predictive_pvalue(draws, w, NEGLOGLIK, 'bilogistic', 8).p

        original = spectral._log_h_logodds
        spectral._tabulate.cache_clear()
        try:
            with monkeypatch.context() as m:
                m.setattr(spectral, '_log_h_logodds', lambda ell, a, b: original(ell, a, b) + math.log(3.7))
                assert normalize_angular(spec) == pytest.approx(3.7 * 2.0, rel=1e-6)
                assert angular_log_likelihood(spec, w) == pytest.approx(base_ll, rel=1e-10, abs=1e-9)
                assert posterior_predictive_pvalue(draws, w, NEGLOGLIK, 'bilogistic', 8).p == base_p
        finally:
            spectral._tabulate.cache_clear()

class TestDiscrepancy:
    def test_monotone_in_likelihood(self):
        theta = GpdParams(0.2, 8.0, U0)
        near = ExceedanceSet([20.5, 21.0], U0)
        far = ExceedanceSet([60.0, 90.0], U0)
        assert discrepancy(near, theta, 'gpd') < discrepancy(far, theta, 'gpd')

    def test_off_support(self):
        assert discrepancy(ExceedanceSet([25.0, 200.0], U0), GpdParams(-0.1, 10.0, U0), 'gpd') == math.inf

    def test_decomposition(self):
        theta = GpdParams(0.2, 8.0, U0)
        y = ExceedanceSet(gpd_quantile(np.linspace(0.05, 0.95, 30), theta), U0)
        expected = -(gpd_log_posterior(theta, y) - jeffreys_log_prior(theta))
        assert discrepancy(y, theta, 'gpd') == pytest.approx(expected, abs=1e-9)


class TestOrderStatisticDensity:
    def test_single_draw_is_the_density(self):
        p = GpdParams(0.2, 8.0, U0)
        assert order_statistic_log_density(27.0, 1, 1, p) == pytest.approx(gpd_log_density(27.0, p))

    def test_maximum_reduction(self):
        p = GpdParams(0.2, 8.0, U0)
        t, n = 45.0, 30
        expected = math.log(n) + gpd_log_density(t, p) + (n - 1) * math.log(gpd_cdf(t, p))
        assert order_statistic_log_density(t, n, n, p) == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize('j,n', [(5, 10), (450, 500)])
    def test_integrates_to_one(self, j, n):
        p = GpdParams(0.2, 8.0, U0)
        centre = j / (n + 1)
        spread = math.sqrt(centre * (1 - centre) / (n + 2))
        low = gpd_quantile(max(centre - 8 * spread, 0.0), p)
        high = gpd_quantile(min(centre + 8 * spread, 0.999999), p)
        total, _ = quad(lambda t: math.exp(order_statistic_log_density(t, j, n, p)), low, high,
                        points=[gpd_quantile(centre, p)], limit=200)
        assert total == pytest.approx(1.0, abs=1e-4)

    def test_off_support(self):
        p = GpdParams(-0.5 + 1e-3, 4.0, U0)
        assert order_statistic_log_density(10.0, 2, 3, p) == -math.inf

    def test_index_range(self):
        with pytest.raises(UsageError):
            order_statistic_log_density(25.0, 4, 3, GpdParams(0.2, 8.0, U0))


class TestPartialPosterior:
    def test_single_observation_reduces_to_prior(self):
        y = ExceedanceSet([27.0], U0)
        theta = GpdParams(0.3, 5.0, U0)
        assert partial_posterior_log_target(theta, y, MAXIMUM) == pytest.approx(jeffreys_log_prior(theta))

    def test_finite_on_support(self, tiny):
        y_obs, _ = tiny
        assert np.isfinite(partial_posterior_log_target((0.2, 8.0), y_obs, MAXIMUM))
        assert partial_posterior_log_target((-0.4, 2.0), y_obs, MAXIMUM) == -math.inf

    def test_unsupported_statistic(self, tiny):
        y_obs, theta = tiny
        with pytest.raises(UnsupportedStatisticError):
            partial_posterior_log_target((0.2, 8.0), y_obs, NEGLOGLIK)
        with pytest.raises(UnsupportedStatisticError):
            partial_posterior_pvalue(as_draws(theta), y_obs, NEGLOGLIK, 1)


class TestPriorPredictive:
    def test_improper_prior(self, tiny):
        y_obs, _ = tiny
        with pytest.raises(UnsupportedStatisticError):
            prior_predictive_pvalue(JeffreysPrior(), y_obs, NEGLOGLIK, 'gpd', 1)

    def test_proper_box(self, tiny):
        y_obs, _ = tiny
        est = prior_predictive_pvalue(UniformBoxPrior(-0.2, 0.5, 1.0, 20.0), y_obs, MAXIMUM, 'gpd', 1,
                                      n_draws=500)
        assert 0.0 <= est.p <= 1.0 and est.n_rep == 500


@pytest.mark.slow
def test_calibration_over_replicate_datasets():
    """Mean posterior predictive p over datasets drawn from the model is near 0.5."""
    truth = GpdParams(0.2, 8.0, U0)
    cfg = SweepConfig(thresholds=[U0], mcmc=McmcConfig(n_keep=2000, n_burn=500), min_exceedances=5,
                      progress=False)
    partial_cfg = SweepConfig(thresholds=[U0], stat=MAXIMUM, pvalue_kind='partial',
                              mcmc=McmcConfig(n_keep=2000, n_burn=500), min_exceedances=5, progress=False)
    full, partial = [], []
    for k in range(30):
        y = gpd_sample(500, truth, make_rng(500, k))
        full.append(fit_threshold(y, U0, cfg, 2 * k, 1000 + k).pvalue.p)
        partial.append(fit_threshold(y, U0, partial_cfg, 2 * k + 1, 2000 + k).pvalue.p)
    assert 0.40 <= np.mean(full) <= 0.60
    assert 0.35 <= np.mean(partial) <= 0.65
