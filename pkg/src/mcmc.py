"""
Adaptive random-walk Metropolis.

One sampler serves every posterior in the project: the GPD posterior, the
partial posterior, and the angular (spectral) posteriors. Targets are
supplied as plain callables on an unconstrained parameter vector; the model
modules own the transforms and their log-Jacobians.

Step scales are adapted per coordinate during burn-in only and frozen for the
kept phase, so the kept draws form a time-homogeneous Markov chain. Each
coordinate's scale is a shared Robbins-Monro log multiplier (driven toward the
target acceptance rate) times that coordinate's running standard deviation,
so coordinates on very different scales get proportionate steps.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from errors import InitializationError, UsageError
from streams import make_rng

LOW_ACCEPTANCE = 0.01
ADAPT_EXPONENT = 0.6
# burn-in iterations spent on the global multiplier before variances are tracked
VARIANCE_WARMUP_FRACTION = 0.1
VARIANCE_FLOOR = 1e-12


@dataclass
class McmcConfig:
    """Sampler settings. Defaults are 9000 kept draws after 1000 burn-in."""
    n_keep: int = 9000
    n_burn: int = 1000
    initial_scale: object = None
    adapt: bool = True
    target_acceptance: object = None
    seed: int = 0

    def __post_init__(self):
        if self.n_keep < 100:
            raise UsageError(f"n_keep must be >= 100, got {self.n_keep}")
        if self.n_burn < 0:
            raise UsageError(f"n_burn must be >= 0, got {self.n_burn}")
        if self.initial_scale is not None:
            scales = np.atleast_1d(np.asarray(self.initial_scale, dtype=float))
            if np.any(~(scales > 0)):
                raise UsageError("initial scales must be positive")

    def scales_for(self, dim):
        if self.initial_scale is None:
            return np.full(dim, 0.1)
        scales = np.atleast_1d(np.asarray(self.initial_scale, dtype=float))
        if scales.size == 1:
            return np.full(dim, float(scales[0]))
        if scales.size != dim:
            raise UsageError(f"initial_scale has {scales.size} entries for a {dim}-dimensional target")
        return scales.copy()

    def acceptance_for(self, dim):
        if self.target_acceptance is not None:
            return float(self.target_acceptance)
        return 0.44 if dim == 1 else 0.234

    def with_seed(self, seed):
        return McmcConfig(self.n_keep, self.n_burn, self.initial_scale, self.adapt,
                          self.target_acceptance, int(seed))

    def to_dict(self):
        scale = None if self.initial_scale is None else np.atleast_1d(self.initial_scale).tolist()
        return {'n_keep': self.n_keep, 'n_burn': self.n_burn, 'initial_scale': scale,
                'adapt': self.adapt, 'target_acceptance': self.target_acceptance, 'seed': self.seed}


@dataclass
class PosteriorDraws:
    """Kept draws of one chain plus its diagnostics."""
    draws: np.ndarray
    acceptance_rate: float
    ess: np.ndarray
    seed: int
    n_burn: int
    n_keep: int
    log_target: np.ndarray = None
    scale_at_burn_end: np.ndarray = None
    final_scale: np.ndarray = None
    flags: list = field(default_factory=list)

    def __len__(self):
        return self.draws.shape[0]

    @property
    def dim(self):
        return self.draws.shape[1]

    def mean(self):
        return self.draws.mean(axis=0)

    def summary(self):
        return {
            'acceptance_rate': float(self.acceptance_rate),
            'ess': [float(v) for v in self.ess],
            'n_keep': int(self.n_keep),
            'n_burn': int(self.n_burn),
            'seed': int(self.seed),
            'flags': list(self.flags),
        }


def run_chain(log_target, init, cfg):
    """
    Run one chain of adaptive random-walk Metropolis.

    Args:
        log_target: callable(vector) -> float, -inf outside the support
        init: starting vector (log_target(init) must be finite)
        cfg: McmcConfig

    Returns:
        PosteriorDraws with cfg.n_keep draws after cfg.n_burn burn-in.
    """
    x = np.array(init, dtype=float, copy=True).ravel()
    dim = x.size
    lp = float(log_target(x))
    if not np.isfinite(lp):
        raise InitializationError(f"log target is not finite at the initial point {x.tolist()}")

    rng = make_rng(cfg.seed)
    total = cfg.n_burn + cfg.n_keep
    steps = rng.standard_normal((total, dim))
    log_u = np.log(rng.random(total))

    base = cfg.scales_for(dim)
    log_lambda = 0.0
    running_mean = x.copy()
    running_var = base ** 2
    warmup = int(cfg.n_burn * VARIANCE_WARMUP_FRACTION)
    scale = base.copy()
    target = cfg.acceptance_for(dim)
    draws = np.empty((cfg.n_keep, dim))
    kept_lp = np.empty(cfg.n_keep)
    accepted_kept = 0
    accepted_burn = 0
    scale_at_burn_end = scale.copy()

    for t in range(total):
        proposal = x + scale * steps[t]
        lp_prop = float(log_target(proposal))
        log_ratio = lp_prop - lp if np.isfinite(lp_prop) else -math.inf
        accept = log_u[t] < log_ratio
        if accept:
            x, lp = proposal, lp_prop

        if t < cfg.n_burn:
            accepted_burn += accept
            if cfg.adapt:
                gain = 1.0 / (t + 1) ** ADAPT_EXPONENT
                log_lambda += gain * (math.exp(min(0.0, log_ratio)) - target)
                if t >= warmup:
                    delta = x - running_mean
                    running_mean = running_mean + gain * delta
                    running_var = np.maximum(running_var + gain * (delta ** 2 - running_var), VARIANCE_FLOOR)
                scale = math.exp(log_lambda) * np.sqrt(running_var)
            if t == cfg.n_burn - 1:
                scale_at_burn_end = scale.copy()
        else:
            k = t - cfg.n_burn
            draws[k] = x
            kept_lp[k] = lp
            accepted_kept += accept

    acceptance = accepted_kept / cfg.n_keep
    flags = []
    if acceptance < LOW_ACCEPTANCE:
        flags.append('low_acceptance')
        warnings.warn(f"MCMC acceptance rate {acceptance:.4f} is below {LOW_ACCEPTANCE}", RuntimeWarning)
    ess = np.array([effective_sample_size(draws[:, j]) for j in range(dim)])
    if np.any(ess == 0):
        flags.append('degenerate_chain')

    return PosteriorDraws(
        draws=draws,
        acceptance_rate=float(acceptance),
        ess=ess,
        seed=int(cfg.seed),
        n_burn=int(cfg.n_burn),
        n_keep=int(cfg.n_keep),
        log_target=kept_lp,
        scale_at_burn_end=scale_at_burn_end,
        final_scale=scale,
        flags=flags,
    )


def effective_sample_size(chain):
    """
    Effective sample size by Geyer's initial monotone sequence estimator.

    Returns 0 for a constant chain and clamps the estimate to the chain length.
    """
    x = np.asarray(chain, dtype=float).ravel()
    n = x.size
    if n < 100:
        raise UsageError(f"ESS needs a chain of length >= 100, got {n}")
    if np.ptp(x) == 0:
        return 0.0

    centred = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centred, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n] / n
    rho = acov / acov[0]

    n_pairs = n // 2
    pairs = rho[0:2 * n_pairs:2] + rho[1:2 * n_pairs:2]
    nonpositive = np.flatnonzero(pairs <= 0)
    if nonpositive.size:
        pairs = pairs[:nonpositive[0]]
    if pairs.size == 0:
        return float(n)
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    if tau <= 0:
        return float(n)
    return float(min(n / tau, n))
