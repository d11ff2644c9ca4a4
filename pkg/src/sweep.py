"""
Threshold sweeps.

For each candidate threshold (largest first) fit the tail posterior, compute
a measure of surprise, and collect the results into a SurpriseCurve. The
multivariate sweep also evaluates every fit at all higher thresholds, which
gives one line of p-values per fitted threshold.

Every threshold gets its own seeds from (seed, threshold index), and
multivariate evaluations from (seed, fit index, evaluation index), so results
do not depend on the worker count or on completion order.
"""

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from tqdm import tqdm

import gpd
import spectral
import surprise
from datagen import BivariateDesign, gen_bivariate, gen_univariate
from errors import EmptySweepError, InitializationError, NumericalError, UsageError
from mcmc import McmcConfig, run_chain
from streams import child_seeds

PVALUE_KINDS = ('posterior', 'partial')
MODELS = ('gpd',) + spectral.FAMILIES


@dataclass
class SweepConfig:
    """One sweep. `thresholds` must be strictly descending."""
    thresholds: np.ndarray
    stat: surprise.TestStatisticSpec = field(default_factory=surprise.TestStatisticSpec)
    pvalue_kind: str = 'posterior'
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    model: str = 'gpd'
    n_components: object = 2
    min_exceedances: int = 30
    seed: int = 0
    workers: int = 1
    progress: bool = True

    def __post_init__(self):
        self.thresholds = np.atleast_1d(np.asarray(self.thresholds, dtype=float))
        if self.thresholds.size == 0:
            raise UsageError("at least one threshold is required")
        if np.any(np.diff(self.thresholds) >= 0):
            raise UsageError("thresholds must be strictly descending")
        if self.pvalue_kind not in PVALUE_KINDS:
            raise UsageError(f"pvalue_kind must be one of {PVALUE_KINDS}, got '{self.pvalue_kind}'")
        if self.model not in MODELS:
            raise UsageError(f"model must be one of {MODELS}, got '{self.model}'")
        if self.pvalue_kind == 'partial':
            if self.model != 'gpd':
                raise UsageError("partial posterior p-values are available for the GPD model only")
            if not self.stat.has_density:
                raise UsageError("partial posterior p-values need the max or quantile statistic")
        if self.model != 'gpd' and self.stat.kind != 'neg_log_likelihood':
            raise UsageError("angular models support the neg_log_likelihood statistic only")
        if self.n_components != 'auto' and int(self.n_components) < 1:
            raise UsageError(f"n_components must be >= 1 or 'auto', got {self.n_components}")
        if self.min_exceedances < 1:
            raise UsageError("min_exceedances must be >= 1")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")

    @property
    def kind(self):
        return 'univariate' if self.model == 'gpd' else 'multivariate'

    def to_dict(self):
        return {
            'thresholds': self.thresholds.tolist(),
            'stat': self.stat.to_dict(),
            'pvalue_kind': self.pvalue_kind,
            'mcmc': self.mcmc.to_dict(),
            'model': self.model,
            'n_components': self.n_components,
            'min_exceedances': self.min_exceedances,
            'seed': self.seed,
        }


@dataclass
class SurpriseEntry:
    fit_threshold: float
    eval_threshold: float
    n_exc: int
    pvalue: object = None
    posterior: dict = field(default_factory=dict)
    status: str = 'ok'
    reason: str = ''

    @property
    def ok(self):
        return self.status == 'ok'

    def to_dict(self):
        return {
            'fit_threshold': self.fit_threshold,
            'eval_threshold': self.eval_threshold,
            'n_exc': self.n_exc,
            'status': self.status,
            'reason': self.reason,
            'pvalue': self.pvalue.to_dict() if self.pvalue is not None else None,
            'posterior': self.posterior,
        }


@dataclass
class SurpriseCurve:
    entries: list
    kind: str

    def valid(self):
        return [e for e in self.entries if e.ok]

    def lines(self):
        """Entries grouped by fit threshold, in schedule order."""
        grouped = {}
        for entry in self.entries:
            grouped.setdefault(entry.fit_threshold, []).append(entry)
        return grouped

    def to_dict(self):
        return {'kind': self.kind, 'entries': [e.to_dict() for e in self.entries]}


@dataclass
class Recommendation:
    threshold: object
    note: str
    reference: object = None

    def to_dict(self):
        return {'threshold': self.threshold, 'note': self.note, 'reference': self.reference}


def equally_spaced_thresholds(low, high, step):
    """Descending schedule high, high - step, ..., low (inclusive where it lands on the grid)."""
    if not step > 0 or not high >= low:
        raise UsageError(f"need low <= high and step > 0, got {low}:{high}:{step}")
    count = int(math.floor((high - low) / step + 1e-9)) + 1
    return np.round(high - step * np.arange(count), 12)


# ---------------------------------------------------------------------------
# Univariate
# ---------------------------------------------------------------------------

def _gpd_start(data, log_target):
    """PWM start, or the (0.1, sd) fallback when the PWM point is off the target's support."""
    candidates = [gpd.pwm_estimate(data)]
    sd = float(np.std(data.values - data.threshold, ddof=1)) if data.count > 1 else 1.0
    candidates.append(gpd.GpdParams(0.1, sd if sd > 0 else 1.0, data.threshold))
    for p in candidates:
        z = gpd.to_unconstrained(p)
        if np.isfinite(log_target(z)):
            return z
    return gpd.to_unconstrained(candidates[-1])


def gpd_posterior_summary(draws):
    xi = draws.draws[:, 0]
    sigma = np.exp(draws.draws[:, 1])
    summary = draws.summary()
    summary['mean'] = {'xi': float(xi.mean()), 'sigma': float(sigma.mean())}
    summary['sd'] = {'xi': float(xi.std(ddof=1)), 'sigma': float(sigma.std(ddof=1))}
    return summary


def fit_threshold(y_all, threshold, cfg, chain_seed, pvalue_seed):
    """Fit and p-value at one threshold; returns a SurpriseEntry (skipped on failure)."""
    data = gpd.exceedances(y_all, threshold)
    entry = SurpriseEntry(float(threshold), float(threshold), data.count)
    if data.count < cfg.min_exceedances:
        entry.status = 'skipped'
        entry.reason = f"{data.count} exceedances < min_exceedances={cfg.min_exceedances}"
        return entry

    if cfg.pvalue_kind == 'partial':
        def target(z):
            return surprise.partial_posterior_unconstrained_log_target(z, data, cfg.stat)
    else:
        def target(z):
            return gpd.gpd_unconstrained_log_posterior(z, data)

    mcmc_cfg = cfg.mcmc.with_seed(chain_seed)
    if mcmc_cfg.initial_scale is None:
        mcmc_cfg = replace(mcmc_cfg, initial_scale=1.0 / math.sqrt(data.count))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', RuntimeWarning)
            draws = run_chain(target, _gpd_start(data, target), mcmc_cfg)
        if cfg.pvalue_kind == 'partial':
            estimate = surprise.partial_posterior_pvalue(draws, data, cfg.stat, pvalue_seed)
        else:
            estimate = surprise.posterior_predictive_pvalue(draws, data, cfg.stat, 'gpd', pvalue_seed)
    except (InitializationError, NumericalError, UsageError) as exc:
        entry.status = 'skipped'
        entry.reason = f"{type(exc).__name__}: {exc}"
        return entry

    entry.pvalue = estimate
    entry.posterior = gpd_posterior_summary(draws)
    return entry


def _univariate_task(args):
    y_all, threshold, cfg, index = args
    chain_seed, pvalue_seed = child_seeds(cfg.seed, index)
    return fit_threshold(y_all, threshold, cfg, chain_seed, pvalue_seed)


def _run_tasks(worker, tasks, workers, progress, desc):
    """Results of worker(task) in task order, serially or across processes."""
    bar = tqdm(total=len(tasks), desc=desc, disable=not progress)
    results = []
    if workers <= 1:
        for task in tasks:
            results.append(worker(task))
            bar.update(1)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(worker, tasks):
                results.append(result)
                bar.update(1)
    bar.close()
    return results


def _require_some(entries):
    if not any(e.ok for e in entries):
        reasons = sorted({e.reason for e in entries})
        raise EmptySweepError(f"every threshold was skipped ({'; '.join(reasons)})")


def univariate_sweep(y_all, cfg):
    """GPD fit and surprise p-value at each threshold, largest first."""
    if cfg.model != 'gpd':
        raise UsageError("univariate_sweep needs model='gpd'")
    y_all = np.asarray(y_all, dtype=float).ravel()
    tasks = [(y_all, float(v), cfg, i) for i, v in enumerate(cfg.thresholds)]
    entries = _run_tasks(_univariate_task, tasks, cfg.workers, cfg.progress, "Thresholds")
    _require_some(entries)
    return SurpriseCurve(entries, 'univariate')


# ---------------------------------------------------------------------------
# Multivariate
# ---------------------------------------------------------------------------

def angular_posterior_summary(draws, family, d, n_components):
    summary = draws.summary()
    mean_spec = spectral.posterior_mean_spec(draws, family, d)
    summary['mean'] = mean_spec.to_dict()
    summary['n_components'] = n_components
    if family != 'dirichlet_mixture':
        alpha, beta = mean_spec.alpha_beta
        summary['dependence'] = spectral.dependence_summary(alpha, beta)
    return summary


def _multivariate_task(args):
    polar, cfg, index = args
    thresholds = cfg.thresholds
    v_fit = float(thresholds[index])
    w_fit = polar.angles_above(v_fit)
    d = polar.d
    if w_fit.shape[0] < cfg.min_exceedances:
        return [SurpriseEntry(v_fit, v_fit, int(w_fit.shape[0]), status='skipped',
                              reason=f"{w_fit.shape[0]} exceedances < min_exceedances={cfg.min_exceedances}")]

    chain_seed, select_seed = child_seeds(cfg.seed, index)
    mcmc_cfg = cfg.mcmc.with_seed(chain_seed)
    n_components = cfg.n_components
    try:
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', RuntimeWarning)
            if cfg.model == 'dirichlet_mixture' and n_components == 'auto':
                n_components = spectral.largest_nonempty_mixture_size(w_fit, cfg.mcmc.with_seed(select_seed))
            draws = spectral.fit_angular_posterior(w_fit, cfg.model, mcmc_cfg, n_components=int(n_components))
    except (InitializationError, NumericalError) as exc:
        return [SurpriseEntry(v_fit, v_fit, int(w_fit.shape[0]), status='skipped',
                              reason=f"{type(exc).__name__}: {exc}")]

    posterior = angular_posterior_summary(draws, cfg.model, d, int(n_components))
    model = surprise.AngularModel(cfg.model, d)
    line = []
    # the anchor v_fit first, then every higher threshold
    for j in range(index, -1, -1):
        v_eval = float(thresholds[j])
        w_eval = polar.angles_above(v_eval)
        entry = SurpriseEntry(v_fit, v_eval, int(w_eval.shape[0]), posterior=posterior)
        if w_eval.shape[0] < cfg.min_exceedances:
            entry.status = 'skipped'
            entry.reason = f"{w_eval.shape[0]} exceedances < min_exceedances={cfg.min_exceedances}"
        else:
            pvalue_seed = child_seeds(cfg.seed, index, j)[0]
            try:
                entry.pvalue = surprise.posterior_predictive_pvalue(draws, w_eval, cfg.stat, model, pvalue_seed)
            except NumericalError as exc:
                entry.status = 'skipped'
                entry.reason = f"NumericalError: {exc}"
        line.append(entry)
    return line


def multivariate_sweep(polar, cfg):
    """One line of p-values per fitted threshold, anchored at the fit threshold."""
    if cfg.model == 'gpd':
        raise UsageError("multivariate_sweep needs a spectral model")
    tasks = [(polar, cfg, i) for i in range(cfg.thresholds.size)]
    lines = _run_tasks(_multivariate_task, tasks, cfg.workers, cfg.progress, "Fit thresholds")
    entries = [entry for line in lines for entry in line]
    anchors = [line[0] for line in lines]
    _require_some(anchors)
    return SurpriseCurve(entries, 'multivariate')


# ---------------------------------------------------------------------------
# Recommendation
# ---------------------------------------------------------------------------

def _unsuitable(reference, delta):
    return reference < delta or reference > 1.0 - delta


def recommend_threshold(curve, delta=0.15, window=3):
    """
    Lowest threshold from which the surprise curve stays level.

    Univariate: the reference is the median p over the `window` highest
    valid thresholds; the recommendation is the smallest threshold of the
    run, starting from the top, whose p-values all lie within delta of it.
    Multivariate: a line qualifies when its range is below 2*delta and its
    level (median p) is within delta of the level of the line anchored at
    the highest threshold; the smallest qualifying anchor is returned,
    whether or not the lines between it and the top qualify (`window` is
    not used). A reference level below delta or above 1 - delta means the
    model does not fit at any threshold, and no threshold is returned.
    """
    if not 0 < delta < 0.5 or window < 1:
        raise UsageError("need 0 < delta < 0.5 and window >= 1")
    if curve.kind == 'univariate':
        return _recommend_univariate(curve, delta, window)
    if curve.kind == 'multivariate':
        return _recommend_multivariate(curve, delta, window)
    raise UsageError(f"unknown curve kind '{curve.kind}'")


def _recommend_univariate(curve, delta, window):
    if any(e.fit_threshold != e.eval_threshold for e in curve.entries):
        raise UsageError("a univariate curve has one entry per fitted threshold")
    valid = sorted(curve.valid(), key=lambda e: -e.fit_threshold)
    if len(valid) < window + 2:
        raise UsageError(f"need at least {window + 2} valid entries, got {len(valid)}")
    p = np.array([e.pvalue.p for e in valid])
    reference = float(np.median(p[:window]))
    if _unsuitable(reference, delta):
        return Recommendation(None, f"p-values level off at {reference:.3f}: the model looks unsuitable "
                                    "at every threshold", reference)
    chosen = None
    for entry, value in zip(valid, p):
        if abs(value - reference) > delta:
            break
        chosen = entry.fit_threshold
    if chosen is None:
        return Recommendation(None, "the highest threshold already departs from the reference level", reference)
    return Recommendation(chosen, f"p stays within {delta} of {reference:.3f} from this threshold upward",
                          reference)


def _recommend_multivariate(curve, delta, window):
    lines = []
    for v_fit, entries in curve.lines().items():
        if not entries or entries[0].eval_threshold != v_fit:
            raise UsageError("each multivariate line must start at its fit threshold")
        values = [e.pvalue.p for e in entries if e.ok]
        if entries[0].ok and values:
            lines.append((v_fit, np.array(values)))
    if len(lines) < 2:
        raise UsageError(f"need at least 2 fitted lines, got {len(lines)}")
    lines.sort(key=lambda item: -item[0])
    levels = np.array([float(np.median(values)) for _, values in lines])
    reference = float(levels[0])
    if _unsuitable(reference, delta):
        return Recommendation(None, f"lines level off at {reference:.3f}: the model looks unsuitable "
                                    "at every threshold", reference)
    qualifying = [v_fit for (v_fit, values), level in zip(lines, levels)
                  if np.ptp(values) < 2 * delta and abs(level - reference) <= delta]
    if not qualifying:
        return Recommendation(None, "no fitted line is level around the highest anchor's level", reference)
    return Recommendation(min(qualifying), f"line is level within {delta} of the top anchor's level {reference:.3f}",
                          reference)


# ---------------------------------------------------------------------------
# Replicate study
# ---------------------------------------------------------------------------

def _quartile_rows(thresholds, pvalues):
    rows = []
    for k, u in enumerate(thresholds):
        column = pvalues[:, k]
        column = column[~np.isnan(column)]
        if column.size == 0:
            rows.append({'threshold': float(u), 'n': 0, 'mean': np.nan, 'q25': np.nan,
                         'median': np.nan, 'q75': np.nan})
            continue
        q25, median, q75 = np.quantile(column, [0.25, 0.5, 0.75])
        rows.append({'threshold': float(u), 'n': int(column.size), 'mean': float(column.mean()),
                     'q25': float(q25), 'median': float(median), 'q75': float(q75)})
    return rows


@dataclass
class ReplicateStudy:
    """
    p-values (n_replicates x thresholds); NaN where a threshold was skipped.

    For a multivariate design `pvalues` holds each anchor's p at its own
    threshold, and `anchors` maps every fitted threshold to a sub-study whose
    columns are the evaluation thresholds from that anchor upward.
    """
    thresholds: np.ndarray
    pvalues: np.ndarray
    design: str
    recommendations: list = field(default_factory=list)
    anchor: float = None
    anchors: dict = field(default_factory=dict)

    @property
    def kind(self):
        return 'multivariate' if self.anchors else 'univariate'

    def summary_rows(self):
        return _quartile_rows(self.thresholds, self.pvalues)

    def line_rows(self):
        """Quartile rows of every anchored line, tagged with the anchor."""
        rows = []
        for v_fit, study in self.anchors.items():
            rows += [{'anchor': v_fit, **row} for row in study.summary_rows()]
        return rows


def replicate_study(design, n_replicates, cfg, delta=0.15, window=3):
    """
    Regenerate the design n_replicates times and sweep each copy.

    A BivariateDesign needs a spectral model in cfg and is swept with
    multivariate_sweep; a UnivariateDesign needs the gpd model.
    """
    if n_replicates < 1:
        raise UsageError(f"n_replicates must be >= 1, got {n_replicates}")
    multivariate = isinstance(design, BivariateDesign)
    if multivariate != (cfg.kind == 'multivariate'):
        needed = 'a spectral model' if multivariate else "model='gpd'"
        raise UsageError(f"design '{design.id}' needs {needed}, got '{cfg.model}'")

    thresholds = cfg.thresholds
    column = {float(v): k for k, v in enumerate(thresholds)}
    pvalues = np.full((n_replicates, thresholds.size), np.nan)
    lines = {float(v): np.full((n_replicates, k + 1), np.nan) for k, v in enumerate(thresholds)} if multivariate else {}
    recommendations = []
    inner = replace(cfg, progress=False)
    for k in tqdm(range(n_replicates), desc="Replicates", disable=not cfg.progress):
        data_seed, sweep_seed = child_seeds(cfg.seed, k)
        try:
            if multivariate:
                curve = multivariate_sweep(gen_bivariate(design, data_seed), replace(inner, seed=sweep_seed))
            else:
                curve = univariate_sweep(gen_univariate(design, data_seed), replace(inner, seed=sweep_seed))
        except EmptySweepError:
            recommendations.append(None)
            continue
        for entry in curve.valid():
            fit, at = column[entry.fit_threshold], column[entry.eval_threshold]
            if fit == at:
                pvalues[k, fit] = entry.pvalue.p
            if multivariate:
                # line columns run upward from the anchor
                lines[entry.fit_threshold][k, fit - at] = entry.pvalue.p
        try:
            recommendations.append(recommend_threshold(curve, delta, window).threshold)
        except UsageError:
            recommendations.append(None)

    anchors = {}
    for k, (v_fit, values) in enumerate(lines.items()):
        anchors[v_fit] = ReplicateStudy(thresholds[:k + 1][::-1].copy(), values, design.id, anchor=v_fit)
    return ReplicateStudy(thresholds.copy(), pvalues, design.id, recommendations, anchors=anchors)
