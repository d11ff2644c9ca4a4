"""
Generalized Pareto tail model.

Density, distribution, quantile and sampling for exceedances of a threshold
u, the Jeffreys prior for (xi, sigma), the posterior target used by the MCMC
sampler, and a maximum-likelihood fit used by the goodness-of-fit comparators.

The array functions (`cdf`, `log_density`, `quantile`, `log_prior`) broadcast
over y and over the parameters, so a (draws x 1) column of shapes against a
(draws x n) block of replicates evaluates every replicate in one call.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from errors import FitFailureError, ParameterDomainError, UsageError
from streams import make_rng

XI_TOL = 1e-8

# MLE restart box (xi range; sigma as multiples of the data sd)
MLE_XI_RANGE = (-0.45, 2.0)
MLE_SIGMA_RANGE = (0.1, 10.0)
MLE_RESTARTS = 5
MLE_RESTART_SEED = 20130101
# the likelihood is irregular below -0.5 (and unbounded below -1)
MLE_XI_FLOOR = -0.5


@dataclass
class GpdParams:
    """Shape xi, scale sigma and threshold u of the Pareto tail."""
    xi: float
    sigma: float
    u: float = 0.0

    @property
    def upper_endpoint(self):
        if self.xi < 0:
            return self.u - self.sigma / self.xi
        return math.inf

    def check(self):
        if not (self.sigma > 0) or not np.isfinite(self.sigma):
            raise ParameterDomainError(f"sigma must be > 0, got {self.sigma}")
        if not np.isfinite(self.xi):
            raise ParameterDomainError(f"xi must be finite, got {self.xi}")
        return self


@dataclass
class ExceedanceSet:
    """Observations strictly above a threshold, sorted ascending."""
    values: np.ndarray
    threshold: float

    def __post_init__(self):
        values = np.sort(np.asarray(self.values, dtype=float).ravel())
        if values.size and not np.all(values > self.threshold):
            raise UsageError("every exceedance must be strictly above the threshold")
        self.values = values
        self.threshold = float(self.threshold)

    @property
    def count(self):
        return int(self.values.size)

    def __len__(self):
        return self.count


def exceedances(y_all, threshold):
    """Exceedance set of `y_all` over `threshold` (values equal to it are excluded)."""
    y_all = np.asarray(y_all, dtype=float).ravel()
    return ExceedanceSet(y_all[y_all > threshold], threshold)


# ---------------------------------------------------------------------------
# Array-level formulas
# ---------------------------------------------------------------------------

def _split_xi(xi):
    xi = np.asarray(xi, dtype=float)
    small = np.abs(xi) < XI_TOL
    xi_safe = np.where(small, 1.0, xi)
    return xi, small, xi_safe


def cdf(y, xi, sigma, u=0.0):
    """Distribution function; clamps to 0 below u and 1 above a finite endpoint."""
    xi, small, xi_safe = _split_xi(xi)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        z = np.maximum((np.asarray(y, dtype=float) - u) / sigma, 0.0)
        t = xi_safe * z
        general = -np.expm1(-np.log1p(t) / xi_safe)
        general = np.where(t <= -1.0, 1.0, general)
        limit = -np.expm1(-z)
        out = np.where(small, limit, general)
    return out


def log_density(y, xi, sigma, u=0.0):
    """Log density; -inf off the support."""
    xi, small, xi_safe = _split_xi(xi)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        z = (np.asarray(y, dtype=float) - u) / sigma
        t = xi_safe * z
        general = -np.log(sigma) - (1.0 + 1.0 / xi_safe) * np.log1p(t)
        general = np.where(t <= -1.0, -np.inf, general)
        limit = -np.log(sigma) - z
        out = np.where(small, limit, general)
        out = np.where(z < 0, -np.inf, out)
    return out


def log_sf(y, xi, sigma, u=0.0):
    """Log survival function log(1 - F); 0 below u and -inf above a finite endpoint."""
    xi, small, xi_safe = _split_xi(xi)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        z = np.maximum((np.asarray(y, dtype=float) - u) / sigma, 0.0)
        t = xi_safe * z
        general = -np.log1p(t) / xi_safe
        general = np.where(t <= -1.0, -np.inf, general)
        out = np.where(small, -z, general)
    return out


def quantile(q, xi, sigma, u=0.0):
    """Inverse of `cdf` for q in [0, 1)."""
    xi, small, xi_safe = _split_xi(xi)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        log_tail = np.log1p(-q)
        general = u + sigma / xi_safe * np.expm1(-xi_safe * log_tail)
        limit = u - sigma * log_tail
        out = np.where(small, limit, general)
    return out


def log_prior(xi, sigma):
    """Jeffreys prior sigma^-1 (1+xi)^-1 (1+2 xi)^-1/2 on xi > -0.5, sigma > 0."""
    xi = np.asarray(xi, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    ok = (xi > -0.5) & (sigma > 0)
    with np.errstate(divide='ignore', invalid='ignore'):
        val = -np.log(sigma) - np.log1p(xi) - 0.5 * np.log1p(2.0 * xi)
    return np.where(ok, val, -np.inf)


def log_likelihood(values, xi, sigma, u):
    """Sum of log densities along the last axis."""
    return np.sum(log_density(values, xi, sigma, u), axis=-1)


# ---------------------------------------------------------------------------
# Parameter-object API
# ---------------------------------------------------------------------------

def gpd_cdf(y, p):
    p.check()
    return _scalar(cdf(y, p.xi, p.sigma, p.u))


def gpd_log_density(y, p):
    p.check()
    return _scalar(log_density(y, p.xi, p.sigma, p.u))


def gpd_quantile(q, p):
    p.check()
    q_arr = np.asarray(q, dtype=float)
    if np.any(q_arr < 0) or np.any(q_arr >= 1) or np.any(np.isnan(q_arr)):
        raise ParameterDomainError("quantile level must lie in [0, 1)")
    return _scalar(quantile(q_arr, p.xi, p.sigma, p.u))


def gpd_sample(n, p, rng):
    """n draws by inverse-CDF sampling from the stream `rng`."""
    if n < 0:
        raise UsageError(f"sample size must be >= 0, got {n}")
    p.check()
    return quantile(rng.random(int(n)), p.xi, p.sigma, p.u)


def jeffreys_log_prior(p):
    return float(log_prior(p.xi, p.sigma))


def gpd_log_posterior(p, data):
    """Unnormalised log posterior under the Jeffreys prior."""
    if not math.isclose(p.u, data.threshold, rel_tol=1e-12, abs_tol=1e-12):
        raise UsageError(f"parameter threshold {p.u} does not match data threshold {data.threshold}")
    lp = jeffreys_log_prior(p)
    if not np.isfinite(lp):
        return -math.inf
    ll = float(log_likelihood(data.values, p.xi, p.sigma, p.u))
    if not np.isfinite(ll):
        return -math.inf
    return ll + lp


def gpd_unconstrained_log_posterior(z, data):
    """Log posterior on (xi, log sigma), log-Jacobian included."""
    xi, eta = float(z[0]), float(z[1])
    sigma = math.exp(eta) if eta < 700 else math.inf
    if not np.isfinite(sigma) or sigma <= 0:
        return -math.inf
    return gpd_log_posterior(GpdParams(xi, sigma, data.threshold), data) + eta


def to_unconstrained(p):
    return np.array([p.xi, math.log(p.sigma)])


def from_unconstrained(z, u):
    return GpdParams(float(z[0]), float(math.exp(z[1])), u)


# ---------------------------------------------------------------------------
# Point estimates
# ---------------------------------------------------------------------------

def pwm_estimate(data):
    """Probability-weighted-moments estimate, with the (0.1, sd) fallback."""
    x = data.values - data.threshold
    n = x.size
    sd = float(np.std(x, ddof=1)) if n > 1 else 1.0
    fallback = GpdParams(0.1, sd if sd > 0 else 1.0, data.threshold)
    if n < 2:
        return fallback
    plotting = (np.arange(1, n + 1) - 0.35) / n
    a0 = float(np.mean(x))
    a1 = float(np.mean((1.0 - plotting) * x))
    denom = a0 - 2.0 * a1
    if not np.isfinite(denom) or denom <= 0:
        return fallback
    xi = -(a0 / denom - 2.0)
    sigma = 2.0 * a0 * a1 / denom
    if not (sigma > 0) or not np.isfinite(xi):
        return fallback
    return GpdParams(float(xi), float(sigma), data.threshold)


def _negative_log_likelihood(z, x):
    xi, eta = z
    if xi <= MLE_XI_FLOOR or eta > 700:
        return np.inf
    val = -float(log_likelihood(x, xi, math.exp(eta), 0.0))
    return val if np.isfinite(val) else np.inf


def gpd_mle(data, n_restarts=MLE_RESTARTS, init=None):
    """
    Maximum-likelihood (xi, sigma) with u fixed at the data threshold.

    Nelder-Mead on (xi, log sigma) from the PWM estimate, an optional caller
    start, and `n_restarts` random starts drawn from a fixed stream.
    """
    if data.count < 5:
        raise UsageError(f"MLE needs at least 5 exceedances, got {data.count}")
    x = data.values - data.threshold
    sd = float(np.std(x, ddof=1))
    if not (sd > 0):
        raise FitFailureError("constant data: the GPD likelihood has no maximum",
                              diagnostics={'n': data.count, 'sd': sd})

    starts = []
    if init is not None:
        starts.append((init.xi, math.log(init.sigma)))
    pwm = pwm_estimate(data)
    starts.append((pwm.xi, math.log(pwm.sigma)))
    rng = make_rng(MLE_RESTART_SEED)
    for _ in range(n_restarts):
        xi0 = rng.uniform(*MLE_XI_RANGE)
        log_sigma0 = rng.uniform(math.log(MLE_SIGMA_RANGE[0] * sd), math.log(MLE_SIGMA_RANGE[1] * sd))
        starts.append((xi0, log_sigma0))

    best = None
    tried = []
    for z0 in starts:
        if not np.isfinite(_negative_log_likelihood(z0, x)):
            # a start beyond the endpoint for xi < 0: pull xi up until feasible
            z0 = (max(z0[0], 0.0), z0[1])
        res = minimize(_negative_log_likelihood, np.array(z0), args=(x,), method='Nelder-Mead',
                       options={'xatol': 1e-9, 'fatol': 1e-11, 'maxiter': 4000, 'maxfev': 8000})
        tried.append({'start': [float(v) for v in z0], 'nll': float(res.fun), 'success': bool(res.success)})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res

    if best is None:
        raise FitFailureError("no restart reached a finite likelihood", diagnostics={'starts': tried})
    return GpdParams(float(best.x[0]), float(math.exp(best.x[1])), data.threshold)


def _scalar(arr):
    arr = np.asarray(arr)
    return float(arr) if arr.ndim == 0 else arr
