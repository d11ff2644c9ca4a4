"""
Measures of surprise: predictive p-values for a fitted tail model.

Three estimators share one replicate loop:

    posterior_predictive_pvalue  replicates drawn under the full posterior
    partial_posterior_pvalue     under the posterior with the statistic's own
                                 information divided out of the likelihood
    prior_predictive_pvalue      under a proper prior

Replicates are simulated in fixed-size blocks of posterior draws. Block b
uses its own stream make_rng(seed, REPLICATE_STREAM, b), so a p-value does
not depend on how blocks are scheduled.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

import gpd
import spectral
from errors import UnsupportedStatisticError, UsageError
from streams import derive_seed, make_rng

STAT_KINDS = ('neg_log_likelihood', 'maximum', 'empirical_quantile')

BLOCK_SIZE = 512
REPLICATE_STREAM = 0
PRIOR_STREAM = 1


@dataclass
class TestStatisticSpec:
    """Test statistic T. Quantile statistics take an index j or a fraction of n."""
    __test__ = False

    kind: str = 'neg_log_likelihood'
    quantile_index: object = None
    quantile_fraction: object = None

    def __post_init__(self):
        if self.kind not in STAT_KINDS:
            raise UsageError(f"unknown statistic '{self.kind}', expected one of {STAT_KINDS}")
        has_quantile = self.quantile_index is not None or self.quantile_fraction is not None
        if (self.kind == 'empirical_quantile') != has_quantile:
            raise UsageError("a quantile index or fraction is given exactly when kind is empirical_quantile")
        if self.quantile_index is not None and self.quantile_fraction is not None:
            raise UsageError("give either quantile_index or quantile_fraction, not both")
        if self.quantile_index is not None and int(self.quantile_index) < 1:
            raise UsageError(f"quantile_index must be >= 1, got {self.quantile_index}")
        if self.quantile_fraction is not None and not 0 < self.quantile_fraction <= 1:
            raise UsageError(f"quantile_fraction must lie in (0, 1], got {self.quantile_fraction}")

    @property
    def has_density(self):
        """True when T is an order statistic (its sampling density is known)."""
        return self.kind != 'neg_log_likelihood'

    def order_index(self, n):
        """1-based order-statistic index j for a sample of size n."""
        if self.kind == 'maximum':
            return n
        if self.kind != 'empirical_quantile':
            raise UsageError("only order statistics have an index")
        if self.quantile_index is not None:
            j = int(self.quantile_index)
            if j > n:
                raise UsageError(f"quantile index {j} exceeds the sample size {n}")
            return j
        return min(max(int(math.ceil(self.quantile_fraction * n - 1e-9)), 1), n)

    def label(self):
        if self.kind == 'empirical_quantile':
            if self.quantile_index is not None:
                return f"quantile:{self.quantile_index}"
            return f"quantile:{self.quantile_fraction:g}"
        return {'neg_log_likelihood': 'negloglik', 'maximum': 'max'}[self.kind]

    def to_dict(self):
        return {'kind': self.kind, 'quantile_index': self.quantile_index,
                'quantile_fraction': self.quantile_fraction}


@dataclass
class PValueEstimate:
    """Monte Carlo p-value: the share of replicates with T(y_rep) >= T(y_obs)."""
    p: float
    mc_se: float
    n_rep: int
    n_obs: int
    tail_note: str = 'upper tail, ties counted (T_rep >= T_obs)'

    @classmethod
    def from_counts(cls, n_ge, n_rep, n_obs):
        p = n_ge / n_rep
        return cls(float(p), float(math.sqrt(p * (1.0 - p) / n_rep)), int(n_rep), int(n_obs))

    @property
    def extremeness(self):
        """min(p, 1 - p): small in either tail."""
        return min(self.p, 1.0 - self.p)

    def to_dict(self):
        return {'p': self.p, 'mc_se': self.mc_se, 'n_rep': self.n_rep, 'n_obs': self.n_obs,
                'extremeness': self.extremeness, 'tail_note': self.tail_note}


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

class GpdTailModel:
    """GPD exceedances above a fixed threshold. theta rows are (xi, sigma)."""
    name = 'gpd'

    def __init__(self, threshold):
        self.threshold = float(threshold)

    def natural(self, draws):
        z = np.atleast_2d(draws)
        return np.column_stack([z[:, 0], np.exp(z[:, 1])])

    def log_likelihood(self, theta, data):
        theta = np.atleast_2d(theta)
        return gpd.log_likelihood(data, theta[:, :1], theta[:, 1:2], self.threshold)

    def simulate(self, theta, n, rng):
        theta = np.atleast_2d(theta)
        u = rng.random((theta.shape[0], n))
        return gpd.quantile(u, theta[:, :1], theta[:, 1:2], self.threshold)


class AngularModel:
    """Normalised angular density; theta rows are natural SpectralModelSpec parameters."""

    def __init__(self, family, d=2):
        if family not in spectral.FAMILIES:
            raise UsageError(f"unknown angular family '{family}'")
        self.name = family
        self.family = family
        self.d = int(d)

    def natural(self, draws):
        return np.array([spectral.from_unconstrained(z, self.family, self.d)[0]
                         for z in np.atleast_2d(draws)])

    def spec(self, row):
        return spectral.SpectralModelSpec(self.family, row, d=self.d)

    def log_likelihood(self, theta, data):
        theta = np.atleast_2d(theta)
        data = np.asarray(data, dtype=float)
        if data.ndim == 2:
            data = np.broadcast_to(data, (theta.shape[0],) + data.shape)
        return np.array([spectral.angular_log_likelihood(self.spec(row), data[i])
                         for i, row in enumerate(theta)])

    def simulate(self, theta, n, rng):
        theta = np.atleast_2d(theta)
        return np.stack([spectral.angular_sample(n, self.spec(row), rng) for row in theta])


def resolve_model(model, y_obs):
    """Model object for a tag: 'gpd' needs an ExceedanceSet, a family name needs an (n, d) array."""
    if isinstance(model, (GpdTailModel, AngularModel)):
        return model
    if model == 'gpd':
        if not isinstance(y_obs, gpd.ExceedanceSet):
            raise UsageError("the gpd model needs an ExceedanceSet of observations")
        return GpdTailModel(y_obs.threshold)
    if model in spectral.FAMILIES:
        return AngularModel(model, np.atleast_2d(y_obs).shape[1])
    raise UsageError(f"unknown model '{model}'")


def _observed(y_obs):
    if isinstance(y_obs, gpd.ExceedanceSet):
        return y_obs.values
    return np.asarray(y_obs, dtype=float)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def discrepancy(y, theta, model):
    """-log f(y | theta); +inf when y is off the support."""
    model = resolve_model(model, y)
    if isinstance(theta, gpd.GpdParams):
        theta = (theta.xi, theta.sigma)
    elif isinstance(theta, spectral.SpectralModelSpec):
        theta = theta.params
    ll = float(model.log_likelihood(np.asarray(theta, dtype=float), _observed(y))[0])
    return -ll if np.isfinite(ll) else math.inf


def _order_statistic(samples, j):
    return np.partition(samples, j - 1, axis=-1)[..., j - 1]


def _statistics(stat, model, theta, samples):
    """T for each row of `samples` (a 2-D block) or for one observed sample against every theta row."""
    if stat.kind == 'neg_log_likelihood':
        ll = model.log_likelihood(theta, samples)
        return np.where(np.isfinite(ll), -ll, np.inf)
    if not isinstance(model, GpdTailModel):
        raise UsageError(f"the {stat.kind} statistic needs the univariate GPD model")
    n = samples.shape[-1]
    return _order_statistic(samples, stat.order_index(n))


def _base_seed(rng):
    if isinstance(rng, np.random.Generator):
        return derive_seed(rng)
    if rng is None:
        raise UsageError("an explicit seed or Generator is required")
    return int(rng)


def _predictive_count(theta, y_obs, stat, model, base_seed, statistic=None):
    """Number of rows i with T(y_rep_i, theta_i) >= T(y_obs, theta_i)."""
    observed = _observed(y_obs)
    n_obs = observed.shape[0]
    statistic = statistic or _statistics
    n_ge = 0
    for block, start in enumerate(range(0, theta.shape[0], BLOCK_SIZE)):
        rows = theta[start:start + BLOCK_SIZE]
        rng = make_rng(base_seed, REPLICATE_STREAM, block)
        replicates = model.simulate(rows, n_obs, rng)
        t_rep = statistic(stat, model, rows, replicates)
        t_obs = statistic(stat, model, rows, observed)
        n_ge += int(np.count_nonzero(t_rep >= t_obs))
    return n_ge


def _check_inputs(theta, y_obs):
    if theta.shape[0] == 0:
        raise UsageError("no parameter draws")
    if _observed(y_obs).shape[0] == 0:
        raise UsageError("no observations")


def posterior_predictive_pvalue(draws, y_obs, stat, model, rng):
    """
    p = share of posterior draws theta_i whose replicate y_i ~ f(. | theta_i)
    has T(y_i, theta_i) >= T(y_obs, theta_i). One replicate per draw.
    """
    model = resolve_model(model, y_obs)
    theta = model.natural(draws.draws)
    _check_inputs(theta, y_obs)
    n_ge = _predictive_count(theta, y_obs, stat, model, _base_seed(rng))
    return PValueEstimate.from_counts(n_ge, theta.shape[0], _observed(y_obs).shape[0])


def order_statistic_log_density(t, j, n, p):
    """Log density of the j-th smallest of n GPD draws; -inf off the support."""
    if not 1 <= j <= n:
        raise UsageError(f"need 1 <= j <= n, got j={j}, n={n}")
    p.check()
    return _scalar(_order_statistic_log_density(t, j, n, p.xi, p.sigma, p.u))


def _order_statistic_log_density(t, j, n, xi, sigma, u):
    log_f = gpd.log_density(t, xi, sigma, u)
    cdf = gpd.cdf(t, xi, sigma, u)
    surv = np.exp(gpd.log_sf(t, xi, sigma, u))
    comb = gammaln(n + 1) - gammaln(j) - gammaln(n - j + 1)
    with np.errstate(divide='ignore', invalid='ignore'):
        out = comb + log_f + xlogy(j - 1, cdf) + xlogy(n - j, surv)
    return np.where(np.isfinite(log_f), out, -np.inf)


def _scalar(arr):
    arr = np.asarray(arr)
    return float(arr) if arr.ndim == 0 else arr


def _partial_statistic(stat, y_obs):
    if not stat.has_density:
        raise UnsupportedStatisticError(
            "the partial posterior needs a statistic with a known sampling density "
            "(maximum or empirical_quantile); use the posterior predictive p-value for neg_log_likelihood")
    j = stat.order_index(y_obs.count)
    return j, float(y_obs.values[j - 1])


def partial_posterior_log_target(theta, y_obs, stat):
    """log pi(theta | y_obs) - log f(t_obs | theta) for theta = GpdParams or (xi, sigma)."""
    j, t_obs = _partial_statistic(stat, y_obs)
    if not isinstance(theta, gpd.GpdParams):
        theta = gpd.GpdParams(float(theta[0]), float(theta[1]), y_obs.threshold)
    if not theta.sigma > 0:
        return -math.inf
    lp = gpd.gpd_log_posterior(theta, y_obs)
    if not np.isfinite(lp):
        return -math.inf
    log_t = float(_order_statistic_log_density(t_obs, j, y_obs.count, theta.xi, theta.sigma, theta.u))
    return lp - log_t


def partial_posterior_unconstrained_log_target(z, y_obs, stat):
    """partial_posterior_log_target on (xi, log sigma) with the log-Jacobian."""
    eta = float(z[1])
    if eta > 700:
        return -math.inf
    return partial_posterior_log_target((float(z[0]), math.exp(eta)), y_obs, stat) + eta


def partial_posterior_pvalue(partial_draws, y_obs, stat, rng):
    """
    p = share of partial-posterior draws whose simulated j-th order statistic
    (from a full replicate of size n) is >= t_obs.
    """
    _partial_statistic(stat, y_obs)
    model = GpdTailModel(y_obs.threshold)
    theta = model.natural(partial_draws.draws)
    _check_inputs(theta, y_obs)
    n_ge = _predictive_count(theta, y_obs, stat, model, _base_seed(rng))
    return PValueEstimate.from_counts(n_ge, theta.shape[0], y_obs.count)


# ---------------------------------------------------------------------------
# Prior predictive
# ---------------------------------------------------------------------------

class JeffreysPrior:
    """The improper default prior; it cannot generate prior-predictive replicates."""
    proper = False

    def sample(self, n, rng):
        raise UnsupportedStatisticError("the Jeffreys prior is improper and cannot be sampled")


@dataclass
class UniformBoxPrior:
    """Proper uniform prior on xi in [xi_low, xi_high], sigma in [sigma_low, sigma_high]."""
    xi_low: float
    xi_high: float
    sigma_low: float
    sigma_high: float
    proper = True

    def __post_init__(self):
        if self.xi_low > self.xi_high or self.sigma_low > self.sigma_high or self.sigma_low <= 0:
            raise UsageError("prior box bounds must be ordered with sigma_low > 0")

    def sample(self, n, rng):
        xi = rng.uniform(self.xi_low, self.xi_high, n)
        sigma = rng.uniform(self.sigma_low, self.sigma_high, n)
        return np.column_stack([xi, sigma])


def prior_predictive_pvalue(prior, y_obs, stat, model, rng, n_draws=9000):
    """As posterior_predictive_pvalue with theta drawn from a proper prior."""
    if prior is None or isinstance(prior, str) or not getattr(prior, 'proper', False):
        raise UnsupportedStatisticError("the prior predictive p-value needs a proper prior sampler")
    model = resolve_model(model, y_obs)
    base_seed = _base_seed(rng)
    theta = np.atleast_2d(prior.sample(int(n_draws), make_rng(base_seed, PRIOR_STREAM)))
    _check_inputs(theta, y_obs)
    n_ge = _predictive_count(theta, y_obs, stat, model, base_seed)
    return PValueEstimate.from_counts(n_ge, theta.shape[0], _observed(y_obs).shape[0])
