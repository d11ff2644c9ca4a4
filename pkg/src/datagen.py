"""
Seeded simulation designs with a known threshold.

Univariate designs mix a non-extreme body with a GPD tail above u = 20.
Bivariate designs draw GPD radial parts and switch the angular law from a
non-extreme to an extreme component along a linear ramp between r_a and r_b,
so the true radial threshold is r_b.

Stream layout (fixed, so golden datasets stay stable): one selection uniform
per observation first, then each component's draws in component order.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import gamma as gamma_dist

from errors import DesignError, ParameterDomainError, UsageError
from gpd import GpdParams, gpd_sample
from spectral import PolarDataset, SpectralModelSpec, angular_sample
from streams import as_generator

MIN_ACCEPTANCE = 1e-4


@dataclass
class MixtureComponent:
    """kind is 'uniform' (low, high), 'gpd' (xi, sigma, u) or 'truncated_gamma' (shape, scale, upper)."""
    kind: str
    weight: float
    params: tuple

    def __post_init__(self):
        if self.kind not in ('uniform', 'gpd', 'truncated_gamma'):
            raise UsageError(f"unknown mixture component '{self.kind}'")
        if not self.weight > 0:
            raise UsageError(f"component weights must be positive, got {self.weight}")


@dataclass
class UnivariateDesign:
    id: str
    n: int
    components: list
    true_threshold: float = 20.0
    gamma_parameterization: str = 'scale'

    def __post_init__(self):
        if self.n < 1:
            raise UsageError(f"design size must be >= 1, got {self.n}")
        if self.gamma_parameterization not in ('scale', 'rate'):
            raise UsageError("gamma_parameterization must be 'scale' or 'rate'")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-9:
            raise UsageError(f"component weights must sum to 1, got {total}")

    def with_size(self, n):
        return UnivariateDesign(self.id, n, self.components, self.true_threshold, self.gamma_parameterization)

    def to_dict(self):
        return {
            'id': self.id,
            'n': self.n,
            'true_threshold': self.true_threshold,
            'gamma_parameterization': self.gamma_parameterization,
            'components': [{'kind': c.kind, 'weight': c.weight, 'params': list(c.params)}
                           for c in self.components],
        }


@dataclass
class BivariateDesign:
    id: str
    non_extreme: SpectralModelSpec
    extreme: SpectralModelSpec
    r_a: float
    r_b: float
    n: int = 3000
    radial: GpdParams = field(default_factory=lambda: GpdParams(0.4, 10.0, 0.0))

    def __post_init__(self):
        if not self.r_a < self.r_b:
            raise ParameterDomainError(f"need r_a < r_b, got ({self.r_a}, {self.r_b})")

    @property
    def true_threshold(self):
        return self.r_b

    def with_size(self, n):
        return BivariateDesign(self.id, self.non_extreme, self.extreme, self.r_a, self.r_b, n, self.radial)

    def to_dict(self):
        return {
            'id': self.id,
            'n': self.n,
            'true_threshold': self.true_threshold,
            'r_a': self.r_a,
            'r_b': self.r_b,
            'radial': {'xi': self.radial.xi, 'sigma': self.radial.sigma, 'u': self.radial.u},
            'non_extreme': self.non_extreme.to_dict(),
            'extreme': self.extreme.to_dict(),
        }


UNIVARIATE_DESIGNS = {
    'uni1': UnivariateDesign('uni1', 500, [
        MixtureComponent('uniform', 0.3, (0.0, 20.0)),
        MixtureComponent('gpd', 0.7, (0.2, 8.0, 20.0)),
    ]),
    'uni2': UnivariateDesign('uni2', 1000, [
        MixtureComponent('uniform', 0.3, (0.0, 20.0)),
        MixtureComponent('gpd', 0.7, (-0.1, 10.0, 20.0)),
    ]),
    'uni3': UnivariateDesign('uni3', 2400, [
        MixtureComponent('truncated_gamma', 0.7, (3.0, 8.0, 20.0)),
        MixtureComponent('gpd', 0.3, (0.4, 6.0974, 20.0)),
    ]),
}

BIVARIATE_DESIGNS = {
    'logistic': BivariateDesign(
        'logistic',
        non_extreme=SpectralModelSpec.logistic(0.55),
        extreme=SpectralModelSpec.logistic(0.3),
        r_a=21.0, r_b=22.0,
    ),
    'dirichlet': BivariateDesign(
        'dirichlet',
        non_extreme=SpectralModelSpec.dirichlet_mixture([0.25, 0.75], [[1.0, 9.0], [9.0, 1.0]]),
        extreme=SpectralModelSpec.dirichlet_mixture([0.25, 0.75], [[4.0, 6.0], [7.0, 3.0]]),
        r_a=5.0, r_b=8.0,
    ),
}


def get_design(name):
    if name in UNIVARIATE_DESIGNS:
        return UNIVARIATE_DESIGNS[name]
    if name in BIVARIATE_DESIGNS:
        return BIVARIATE_DESIGNS[name]
    known = sorted(UNIVARIATE_DESIGNS) + sorted(BIVARIATE_DESIGNS)
    raise UsageError(f"unknown design '{name}', expected one of {known}")


def gen_truncated_gamma(shape, scale, upper, n, seed):
    """n Gamma(shape, scale) draws conditioned on x <= upper, by rejection."""
    if not (shape > 0 and scale > 0 and upper > 0):
        raise ParameterDomainError("shape, scale and upper must be positive")
    rng = as_generator(seed)
    accept = float(gamma_dist.cdf(upper, shape, scale=scale))
    if accept < MIN_ACCEPTANCE:
        raise DesignError(f"truncated gamma acceptance probability {accept:.2e} is below {MIN_ACCEPTANCE}")

    out = np.empty(int(n))
    filled = 0
    while filled < n:
        batch = int(np.ceil((n - filled) / accept * 1.1)) + 8
        draws = rng.gamma(shape, scale, batch)
        kept = draws[draws <= upper][:n - filled]
        out[filled:filled + kept.size] = kept
        filled += kept.size
    return out


def _sample_component(component, k, rng, gamma_parameterization):
    if component.kind == 'uniform':
        low, high = component.params
        return low + (high - low) * rng.random(k)
    if component.kind == 'gpd':
        return gpd_sample(k, GpdParams(*component.params), rng)
    shape, scale_or_rate, upper = component.params
    scale = scale_or_rate if gamma_parameterization == 'scale' else 1.0 / scale_or_rate
    return gen_truncated_gamma(shape, scale, upper, k, rng)


def gen_univariate(design, seed):
    """n draws from the design's mixture."""
    rng = as_generator(seed)
    weights = np.array([c.weight for c in design.components])
    edges = np.cumsum(weights) / weights.sum()
    selected = np.minimum(np.searchsorted(edges, rng.random(design.n), side='right'), len(weights) - 1)

    y = np.empty(design.n)
    for index, component in enumerate(design.components):
        mask = selected == index
        y[mask] = _sample_component(component, int(mask.sum()), rng, design.gamma_parameterization)
    return y


def mixing_p(r, r_a, r_b):
    """Probability of the non-extreme angular component: 1 up to r_a, linear to 0 at r_b."""
    if not r_a < r_b:
        raise ParameterDomainError(f"need r_a < r_b, got ({r_a}, {r_b})")
    out = np.clip((np.asarray(r, dtype=float) - r_b) / (r_a - r_b), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def gen_bivariate(design, seed):
    """Radial GPD draws with the angular law switching between components across (r_a, r_b)."""
    rng = as_generator(seed)
    r = gpd_sample(design.n, design.radial, rng)
    non_extreme = rng.random(design.n) < mixing_p(r, design.r_a, design.r_b)

    w = np.empty((design.n, 2))
    w[non_extreme] = angular_sample(int(non_extreme.sum()), design.non_extreme, rng)
    w[~non_extreme] = angular_sample(int((~non_extreme).sum()), design.extreme, rng)
    # r = 0 has probability zero but would break the polar invariants
    r = np.maximum(r, np.finfo(float).tiny)
    return PolarDataset(r, w)
