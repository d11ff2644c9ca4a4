"""
Multivariate extremes: margins, pseudo-polar coordinates and angular densities.

Data are moved to unit Frechet margins by empirical ranks, split into a
radial part r (mean of the coordinates) and an angular part w on the unit
simplex, and the angular part is modelled by one of three families:

    logistic           h(w | phi),          d = 2
    bilogistic         h(w | alpha, beta),  d = 2
    dirichlet_mixture  sum_i lambda_i Dir(w | mu_i),  any d >= 2

The two parametric families are evaluated on the log-odds scale
l = log(w1 / (1 - w1)), where the bilogistic root gamma is found by bisection
in logit space and the density integrand h(w) w (1 - w) decays exponentially
in both tails. The same log-odds grid gives the normalising constant and the
tabulated CDF used for inverse-CDF sampling.
"""

import functools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import expit, gammaln, logit, logsumexp
from scipy.stats import rankdata

from errors import DegenerateMarginError, NumericalError, ParameterDomainError, UsageError
from mcmc import run_chain

FAMILIES = ('logistic', 'bilogistic', 'dirichlet_mixture')

W_CLIP = 1e-10
SIMPLEX_TOL = 1e-12

# logit-space bisection for the bilogistic root
GAMMA_LOGIT_TOL = 4e-12
GAMMA_MAX_ITER = 200

# log-odds tabulation
TAIL_DECAY = 36.0
MAX_LOGODDS = 600.0
NORMALIZER_RTOL = 1e-8
CDF_TOL = 1e-6
MAX_REFINEMENTS = 10
TABULATION_CACHE_SIZE = 2048

# Dirichlet shape prior: log-uniform on (0.1, 100)
SHAPE_PRIOR = (0.1, 100.0)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass
class PolarDataset:
    """Radial parts r (n,) and simplex points w (n, d)."""
    r: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float).ravel()
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        if self.w.shape[0] != self.r.size:
            raise UsageError(f"r has {self.r.size} rows but w has {self.w.shape[0]}")
        if self.w.shape[1] < 2:
            raise UsageError("angular components need d >= 2 columns")
        if np.any(self.r <= 0):
            raise ParameterDomainError("radial components must be positive")
        if np.any(self.w < 0) or np.any(np.abs(self.w.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise ParameterDomainError("every w row must be nonnegative and sum to 1")

    @property
    def d(self):
        return self.w.shape[1]

    def __len__(self):
        return self.r.size

    def angles_above(self, threshold):
        """Angular components of the points with r > threshold."""
        return self.w[self.r > threshold]

    def count_above(self, threshold):
        return int(np.count_nonzero(self.r > threshold))


@dataclass
class SpectralModelSpec:
    """
    One angular model.

    `params` is a flat vector: (phi,) for logistic, (alpha, beta) for
    bilogistic, and (lambda_1..lambda_I, mu_1 (d values), ..., mu_I) for a
    Dirichlet mixture.
    """
    family: str
    params: np.ndarray
    d: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UsageError(f"unknown spectral family '{self.family}', expected one of {FAMILIES}")
        self.params = np.asarray(self.params, dtype=float).ravel()
        self.d = int(self.d)
        if self.d < 2:
            raise UsageError("angular models need d >= 2")
        if self.family != 'dirichlet_mixture' and self.d != 2:
            raise UsageError(f"the {self.family} model is bivariate only")
        expected = {'logistic': 1, 'bilogistic': 2}.get(self.family)
        if expected is not None and self.params.size != expected:
            raise UsageError(f"{self.family} takes {expected} parameter(s), got {self.params.size}")
        if self.family == 'dirichlet_mixture' and (self.params.size == 0 or self.params.size % (1 + self.d)):
            raise UsageError(f"a {self.d}-dimensional Dirichlet mixture needs I*(1+d) parameters")

    @classmethod
    def logistic(cls, phi):
        return cls('logistic', [phi])

    @classmethod
    def bilogistic(cls, alpha, beta):
        return cls('bilogistic', [alpha, beta])

    @classmethod
    def dirichlet_mixture(cls, weights, shapes):
        shapes = np.atleast_2d(np.asarray(shapes, dtype=float))
        weights = np.asarray(weights, dtype=float).ravel()
        if shapes.shape[0] != weights.size:
            raise UsageError("one shape vector per mixture weight is required")
        return cls('dirichlet_mixture', np.concatenate([weights, shapes.ravel()]), d=shapes.shape[1])

    @property
    def n_components(self):
        if self.family != 'dirichlet_mixture':
            return 1
        return self.params.size // (1 + self.d)

    @property
    def weights(self):
        return self.params[:self.n_components]

    @property
    def shapes(self):
        return self.params[self.n_components:].reshape(self.n_components, self.d)

    @property
    def alpha_beta(self):
        if self.family == 'logistic':
            return float(self.params[0]), float(self.params[0])
        if self.family == 'bilogistic':
            return float(self.params[0]), float(self.params[1])
        raise UsageError("alpha/beta are defined for the logistic and bilogistic families only")

    def in_domain(self):
        if not np.all(np.isfinite(self.params)):
            return False
        if self.family != 'dirichlet_mixture':
            return bool(np.all((self.params > 0) & (self.params < 1)))
        lam = self.weights
        return bool(np.all(lam > 0) and abs(lam.sum() - 1.0) < 1e-9 and np.all(self.shapes > 0))

    def check(self):
        if not self.in_domain():
            raise ParameterDomainError(f"{self.family} parameters outside their domain: {self.params.tolist()}")
        return self

    def to_dict(self):
        out = {'family': self.family, 'd': self.d}
        if self.family == 'dirichlet_mixture':
            out['weights'] = self.weights.tolist()
            out['shapes'] = self.shapes.tolist()
        elif self.family == 'logistic':
            out['phi'] = float(self.params[0])
        else:
            out['alpha'], out['beta'] = self.alpha_beta
        return out


# ---------------------------------------------------------------------------
# Margins and coordinates
# ---------------------------------------------------------------------------

def frechet_transform(data):
    """
    Empirical unit Frechet margins: z = -1 / log(rank / (n + 1)), average ranks for ties.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise UsageError(f"the rank transform needs n >= 2 rows, got {n}")
    if np.any(~np.isfinite(x)):
        raise UsageError("missing or non-finite values: drop incomplete rows before transforming")
    for j in range(x.shape[1]):
        if np.ptp(x[:, j]) == 0:
            raise DegenerateMarginError(f"column {j} is constant", column=j)
    ranks = rankdata(x, method='average', axis=0)
    return -1.0 / np.log(ranks / (n + 1.0))


def to_pseudo_polar(z):
    """r = mean of the coordinates, w = z / sum(z)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if np.any(~(z > 0)):
        raise ParameterDomainError("pseudo-polar coordinates need strictly positive entries")
    total = z.sum(axis=1)
    return PolarDataset(total / z.shape[1], z / total[:, None])


def reconstruct(polar):
    """Inverse of to_pseudo_polar: z = d * r * w."""
    return polar.d * polar.r[:, None] * polar.w


# ---------------------------------------------------------------------------
# Parametric angular densities on the log-odds scale
# ---------------------------------------------------------------------------

def _softplus(x):
    return np.logaddexp(0.0, x)


def _solve_logit_gamma(ell, alpha, beta):
    """
    Logit of the bilogistic root gamma at log-odds `ell`.

    Root of F(t) = c - beta*softplus(t) + alpha*softplus(-t), c = log((1-alpha)/(1-beta)) - ell.
    F is strictly decreasing with slope at most -min(alpha, beta), which bounds the bracket.
    """
    ell = np.asarray(ell, dtype=float)
    c = math.log((1.0 - alpha) / (1.0 - beta)) - ell
    if alpha == beta:
        return c / alpha

    f0 = c + (alpha - beta) * math.log(2.0)
    bound = np.abs(f0) / min(alpha, beta) + 1.0
    lo, hi = -bound, bound.copy()
    for _ in range(GAMMA_MAX_ITER):
        if np.all(hi - lo <= GAMMA_LOGIT_TOL):
            break
        mid = 0.5 * (lo + hi)
        positive = c - beta * _softplus(mid) + alpha * _softplus(-mid) > 0
        lo = np.where(positive, mid, lo)
        hi = np.where(positive, hi, mid)
    else:
        if np.any(hi - lo > GAMMA_LOGIT_TOL):
            raise NumericalError(f"bilogistic root bisection did not converge (alpha={alpha}, beta={beta})")
    return 0.5 * (lo + hi)


def _log_h_logodds(ell, alpha, beta):
    """log h(w | alpha, beta) with w given by its log-odds."""
    t = _solve_logit_gamma(ell, alpha, beta)
    log_gamma = -_softplus(-t)
    log_one_minus_gamma = -_softplus(t)
    log_w = -_softplus(-ell)
    log_one_minus_w = -_softplus(ell)
    mix = alpha * expit(-t) + beta * expit(t)
    return (math.log1p(-alpha) + log_one_minus_gamma + (1.0 - alpha) * log_gamma
            - log_one_minus_w - 2.0 * log_w - np.log(mix))


def _log_g_logodds(ell, alpha, beta):
    """log of the log-odds integrand h(w) w (1 - w)."""
    return _log_h_logodds(ell, alpha, beta) - _softplus(-ell) - _softplus(ell)


def _check_unit(name, value):
    arr = np.asarray(value, dtype=float)
    if np.any(~((arr > 0) & (arr < 1))):
        raise ParameterDomainError(f"{name} must lie in (0, 1), got {value}")


def _scalar(arr):
    arr = np.asarray(arr)
    return float(arr) if arr.ndim == 0 else arr


def bilogistic_gamma(w, alpha, beta):
    """Root gamma in (0, 1) of (1-alpha)(1-w)(1-gamma)^beta = (1-beta) w gamma^alpha."""
    _check_unit('w', w)
    _check_unit('alpha', alpha)
    _check_unit('beta', beta)
    ell = logit(np.asarray(w, dtype=float))
    return _scalar(expit(_solve_logit_gamma(ell, float(alpha), float(beta))))


def bilogistic_log_density(w, alpha, beta):
    """Log of the (unnormalised) bilogistic angular density at w1 = w."""
    _check_unit('w', w)
    _check_unit('alpha', alpha)
    _check_unit('beta', beta)
    ell = logit(np.clip(np.asarray(w, dtype=float), W_CLIP, 1.0 - W_CLIP))
    return _scalar(_log_h_logodds(ell, float(alpha), float(beta)))


def logistic_log_density(w, phi):
    """The symmetric logistic model, i.e. bilogistic with alpha = beta = phi."""
    return bilogistic_log_density(w, phi, phi)


def dirichlet_mixture_log_density(w, spec):
    """Log mixture density; -inf at a boundary point. Accepts one point or an (n, d) array."""
    if spec.family != 'dirichlet_mixture':
        raise UsageError(f"expected a dirichlet_mixture spec, got {spec.family}")
    spec.check()
    points = np.atleast_2d(np.asarray(w, dtype=float))
    if points.shape[1] != spec.d:
        raise UsageError(f"points have {points.shape[1]} coordinates, model has d={spec.d}")
    out = _dirichlet_mixture_log_density(points, spec.weights, spec.shapes)
    return float(out[0]) if np.ndim(w) == 1 else out


def _dirichlet_mixture_log_density(points, weights, shapes):
    boundary = np.any(points <= 0, axis=1)
    with np.errstate(divide='ignore', invalid='ignore'):
        log_w = np.log(np.where(points > 0, points, 1.0))
        log_norm = gammaln(shapes.sum(axis=1)) - gammaln(shapes).sum(axis=1)
        components = log_w @ (shapes - 1.0).T + log_norm + np.log(weights)
    out = logsumexp(components, axis=1)
    return np.where(boundary, -np.inf, out)


# ---------------------------------------------------------------------------
# Normalisation and tabulated CDF
# ---------------------------------------------------------------------------

@dataclass
class AngularTabulation:
    """Log-odds grid with integrand values, CDF and exponential tail rates."""
    ell: np.ndarray
    g: np.ndarray
    cdf: np.ndarray
    normalizer: float
    rate_left: float
    rate_right: float


def _integrate_grid(ell, g, rate_left, rate_right):
    inner = cumulative_trapezoid(g, ell, initial=0.0)
    left_tail = g[0] / rate_left
    total = left_tail + inner[-1] + g[-1] / rate_right
    return total, (left_tail + inner) / total


@functools.lru_cache(maxsize=TABULATION_CACHE_SIZE)
def _tabulate(alpha, beta):
    rate_left = (1.0 - beta) / beta
    rate_right = (1.0 - alpha) / alpha
    lo = -min(TAIL_DECAY / rate_left, MAX_LOGODDS)
    hi = min(TAIL_DECAY / rate_right, MAX_LOGODDS)
    n = int(math.ceil((hi - lo) / (min(alpha, beta) / 8.0))) + 1

    previous = None
    for _ in range(MAX_REFINEMENTS):
        ell = np.linspace(lo, hi, n)
        g = np.exp(_log_g_logodds(ell, alpha, beta))
        total, cdf = _integrate_grid(ell, g, rate_left, rate_right)
        if not np.isfinite(total) or total <= 0:
            raise NumericalError(f"angular normaliser is not finite (alpha={alpha}, beta={beta})")
        if previous is not None:
            prev_total, prev_cdf = previous
            # the previous grid is every other point of this one
            if (abs(total - prev_total) <= NORMALIZER_RTOL * total
                    and np.max(np.abs(cdf[::2] - prev_cdf)) <= CDF_TOL):
                return AngularTabulation(ell, g, cdf, float(total), rate_left, rate_right)
        previous = (total, cdf)
        n = 2 * (n - 1) + 1
    raise NumericalError(f"angular normaliser did not reach tolerance (alpha={alpha}, beta={beta})")


def angular_tabulation(spec):
    alpha, beta = spec.check().alpha_beta
    return _tabulate(alpha, beta)


def normalize_angular(spec):
    """Normalising constant of h; exactly 1 for a Dirichlet mixture."""
    if spec.family == 'dirichlet_mixture':
        spec.check()
        return 1.0
    return angular_tabulation(spec).normalizer


def _sample_logodds(tab, u):
    first, last = tab.cdf[0], tab.cdf[-1]
    with np.errstate(divide='ignore'):
        left = tab.ell[0] + np.log(u / first) / tab.rate_left
        right = tab.ell[-1] - np.log((1.0 - u) / (1.0 - last)) / tab.rate_right
    middle = np.interp(u, tab.cdf, tab.ell)
    return np.where(u < first, left, np.where(u > last, right, middle))


def angular_sample(n, spec, rng):
    """
    n simplex points (n, d) from the normalised angular density.

    Consumes n uniforms first, then (Dirichlet mixture only) one Gamma
    variate per coordinate.
    """
    if n < 0:
        raise UsageError(f"sample size must be >= 0, got {n}")
    spec.check()
    n = int(n)
    u = rng.random(n)
    if spec.family == 'dirichlet_mixture':
        edges = np.cumsum(spec.weights)
        component = np.minimum(np.searchsorted(edges, u * edges[-1], side='right'), spec.n_components - 1)
        gammas = rng.standard_gamma(spec.shapes[component])
        return gammas / gammas.sum(axis=1, keepdims=True)
    w1 = expit(_sample_logodds(angular_tabulation(spec), u))
    return np.column_stack([w1, 1.0 - w1])


def spectral_moment(spec, margin):
    """Mean of coordinate `margin` under the normalised angular density."""
    if not 0 <= margin < spec.d:
        raise UsageError(f"margin must be in [0, {spec.d}), got {margin}")
    if spec.family == 'dirichlet_mixture':
        spec.check()
        shapes = spec.shapes
        return float(np.sum(spec.weights * shapes[:, margin] / shapes.sum(axis=1)))
    tab = angular_tabulation(spec)
    w1 = expit(tab.ell)
    inner = trapezoid(w1 * tab.g, tab.ell)
    tails = tab.g[0] * w1[0] / (tab.rate_left + 1.0) + tab.g[-1] / tab.rate_right
    first = (inner + tails) / tab.normalizer
    if not np.isfinite(first):
        raise NumericalError("spectral moment quadrature failed")
    return float(first) if margin == 0 else float(1.0 - first)


def moment_constraint_gap(spec):
    """Largest |E[w_k] - 1/d| over margins; 0 for a valid spectral measure."""
    return max(abs(spectral_moment(spec, k) - 1.0 / spec.d) for k in range(spec.d))


def dependence_summary(alpha, beta):
    """Asymmetry and overall strength of a bilogistic fit (smaller strength: stronger dependence)."""
    return {
        'asymmetry': 0.5 * (1.0 / alpha - 1.0 / beta),
        'strength': 0.5 * (1.0 / alpha + 1.0 / beta),
    }


# ---------------------------------------------------------------------------
# Likelihood and posterior
# ---------------------------------------------------------------------------

def _as_angles(w_data, d=None):
    w = np.asarray(w_data, dtype=float)
    if w.ndim == 1:
        w = np.column_stack([w, 1.0 - w])
    if d is not None and w.shape[1] != d:
        raise UsageError(f"angular data have {w.shape[1]} columns, model has d={d}")
    return np.clip(w, W_CLIP, 1.0 - W_CLIP)


def angular_log_likelihood(spec, w_data):
    """Sum of log(h(w) / normaliser) over interior-clipped data; -inf off-domain."""
    if not spec.in_domain():
        return -math.inf
    w = _as_angles(w_data, spec.d)
    if spec.family == 'dirichlet_mixture':
        return float(np.sum(_dirichlet_mixture_log_density(w, spec.weights, spec.shapes)))
    alpha, beta = spec.alpha_beta
    ell = np.log(w[:, 0]) - np.log(w[:, 1])
    log_h = _log_h_logodds(ell, alpha, beta)
    return float(np.sum(log_h) - w.shape[0] * math.log(normalize_angular(spec)))


def _spec_from_vector(params, family, d):
    try:
        return SpectralModelSpec(family, params, d=d)
    except UsageError:
        return None


def angular_log_prior(spec):
    """Uniform on (0,1) per dependence parameter; uniform simplex weights and log-uniform shapes."""
    if not spec.in_domain():
        return -math.inf
    if spec.family != 'dirichlet_mixture':
        return 0.0
    shapes = spec.shapes
    low, high = SHAPE_PRIOR
    if np.any(shapes <= low) or np.any(shapes >= high):
        return -math.inf
    n_comp = spec.n_components
    return float(gammaln(n_comp) - np.sum(np.log(shapes)) - shapes.size * math.log(math.log(high / low)))


def spectral_log_posterior(params, w_data, family):
    """Unnormalised log posterior of natural-scale parameters; -inf off-domain."""
    w = np.asarray(w_data, dtype=float)
    d = 2 if w.ndim == 1 else w.shape[1]
    spec = _spec_from_vector(params, family, d)
    if spec is None:
        return -math.inf
    lp = angular_log_prior(spec)
    if not np.isfinite(lp):
        return -math.inf
    ll = angular_log_likelihood(spec, w)
    return ll + lp if np.isfinite(ll) else -math.inf


# ---------------------------------------------------------------------------
# Unconstrained parameterisation for the sampler
# ---------------------------------------------------------------------------

def from_unconstrained(z, family, d=2):
    """
    Natural parameters and log-Jacobian for an unconstrained vector.

    logistic/bilogistic: logit of each parameter. Dirichlet mixture:
    additive log-ratio of the weights (last weight as reference) followed by
    the log of each shape.
    """
    z = np.asarray(z, dtype=float).ravel()
    if family in ('logistic', 'bilogistic'):
        params = expit(z)
        log_jac = float(np.sum(-_softplus(-z) - _softplus(z)))
        return params, log_jac
    n_comp = (z.size + 1) // (1 + d)
    ratios = np.append(z[:n_comp - 1], 0.0)
    log_weights = ratios - logsumexp(ratios)
    shapes = np.exp(z[n_comp - 1:])
    params = np.concatenate([np.exp(log_weights), shapes])
    log_jac = float(np.sum(log_weights) + np.sum(z[n_comp - 1:]))
    return params, log_jac


def to_unconstrained(spec):
    if spec.family != 'dirichlet_mixture':
        return logit(spec.params)
    log_weights = np.log(spec.weights)
    return np.concatenate([log_weights[:-1] - log_weights[-1], np.log(spec.shapes).ravel()])


def spectral_unconstrained_log_posterior(z, w_data, family, d=2):
    params, log_jac = from_unconstrained(z, family, d)
    if not np.all(np.isfinite(params)):
        return -math.inf
    lp = spectral_log_posterior(params, w_data, family)
    return lp + log_jac if np.isfinite(lp) else -math.inf


def prior_mean_spec(family, d=2, n_components=2):
    """Chain start: the prior centre, with Dirichlet components spread over the simplex."""
    if family == 'logistic':
        return SpectralModelSpec.logistic(0.5)
    if family == 'bilogistic':
        return SpectralModelSpec.bilogistic(0.5, 0.5)
    centre = math.sqrt(SHAPE_PRIOR[0] * SHAPE_PRIOR[1])
    shapes = np.full((n_components, d), centre)
    for i in range(n_components):
        if n_components > 1:
            shapes[i] *= np.exp(-0.5 / (d - 1))
            shapes[i, i % d] = centre * math.exp(0.5)
    return SpectralModelSpec.dirichlet_mixture(np.full(n_components, 1.0 / n_components), shapes)


def fit_angular_posterior(w_data, family, cfg, n_components=2):
    """Run the sampler on the angular posterior; draws are on the unconstrained scale."""
    w = _as_angles(w_data)
    d = w.shape[1]
    start = prior_mean_spec(family, d, n_components)
    if cfg.initial_scale is None:
        cfg = replace(cfg, initial_scale=1.0 / math.sqrt(max(w.shape[0], 1)))

    def target(z):
        return spectral_unconstrained_log_posterior(z, w, family, d)

    return run_chain(target, to_unconstrained(start), cfg)


def draws_to_specs(draws, family, d=2):
    """Natural-scale SpectralModelSpec for every kept draw."""
    return [SpectralModelSpec(family, from_unconstrained(z, family, d)[0], d=d) for z in draws.draws]


def posterior_mean_spec(draws, family, d=2):
    params = np.mean([from_unconstrained(z, family, d)[0] for z in draws.draws], axis=0)
    if family == 'dirichlet_mixture':
        n_comp = params.size // (1 + d)
        params[:n_comp] /= params[:n_comp].sum()
    return SpectralModelSpec(family, params, d=d)


def mixture_responsibilities(w_data, spec):
    """(n, I) posterior component probabilities of each point."""
    w = _as_angles(w_data, spec.d)
    shapes = spec.shapes
    log_w = np.log(w)
    log_norm = gammaln(shapes.sum(axis=1)) - gammaln(shapes).sum(axis=1)
    comp = log_w @ (shapes - 1.0).T + log_norm + np.log(spec.weights)
    return np.exp(comp - logsumexp(comp, axis=1, keepdims=True))


def largest_nonempty_mixture_size(w_data, cfg, max_components=4):
    """
    Largest I such that every component of the fitted I-component mixture
    is the most probable component of at least one observation.
    """
    w = _as_angles(w_data)
    d = w.shape[1]
    for n_comp in range(max_components, 0, -1):
        draws = fit_angular_posterior(w, 'dirichlet_mixture', cfg, n_components=n_comp)
        spec = posterior_mean_spec(draws, 'dirichlet_mixture', d)
        assigned = np.argmax(mixture_responsibilities(w, spec), axis=1)
        if np.unique(assigned).size == n_comp:
            return n_comp
    return 1
