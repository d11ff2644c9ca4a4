"""
Classical threshold-selection comparators.

Mean residual life (mean excess) diagnostics and Cramer-von Mises /
Anderson-Darling goodness-of-fit tests of the fitted GPD, with p-values from
a refit parametric bootstrap.
"""

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from tqdm import tqdm

from errors import BootstrapError, FitFailureError, UsageError
from gpd import ExceedanceSet, cdf, exceedances, gpd_mle, gpd_sample
from streams import child_seeds, make_rng

PROB_CLIP = 1e-12
REJECTION_LEVEL = 0.05
MAX_REFIT_FAILURES = 0.10
SELECTION_RULES = ('sequential', 'max_p')


@dataclass
class MrlPoint:
    u: float
    mean_excess: float
    ci_low: float
    ci_high: float
    n_exc: int
    status: str = 'ok'

    def to_dict(self):
        return {'u': self.u, 'mean_excess': self.mean_excess, 'ci_low': self.ci_low,
                'ci_high': self.ci_high, 'n_exc': self.n_exc, 'status': self.status}


def mean_residual_life(y, thresholds):
    """
    Mean excess with a normal 95% interval at each threshold.

    Thresholds with fewer than 2 exceedances come back with status 'skipped'
    and NaN values.
    """
    y = np.asarray(y, dtype=float).ravel()
    points = []
    for u in np.asarray(thresholds, dtype=float):
        excess = y[y > u] - u
        n_exc = excess.size
        if n_exc < 2:
            points.append(MrlPoint(float(u), np.nan, np.nan, np.nan, int(n_exc), 'skipped'))
            continue
        mean = float(excess.mean())
        half = 1.96 * float(excess.std(ddof=1)) / np.sqrt(n_exc)
        points.append(MrlPoint(float(u), mean, mean - half, mean + half, int(n_exc)))
    return points


def mrl_threshold_select(points, min_points=3):
    """
    Lowest threshold from which a weighted straight-line fit of the mean
    excess stays inside every 95% interval at or above it.
    """
    valid = sorted((p for p in points if p.status == 'ok'), key=lambda p: p.u)
    for start in range(len(valid) - min_points + 1):
        tail = valid[start:]
        u = np.array([p.u for p in tail])
        me = np.array([p.mean_excess for p in tail])
        half = np.array([p.ci_high - p.mean_excess for p in tail])
        weights = 1.0 / np.maximum(half, 1e-12)
        slope, intercept = np.polyfit(u, me, 1, w=weights)
        fitted = slope * u + intercept
        lows = np.array([p.ci_low for p in tail])
        highs = np.array([p.ci_high for p in tail])
        if np.all((fitted >= lows) & (fitted <= highs)):
            return tail[0].u
    return None


class GofStatistics(NamedTuple):
    w2: float
    a2: float
    # some fitted probabilities hit PROB_CLIP
    clipped: bool = False


def gof_statistics(y, p):
    """Cramer-von Mises W^2 and Anderson-Darling A^2 of the sample against the GPD p."""
    z = np.sort(cdf(y.values, p.xi, p.sigma, p.u))
    clipped = np.clip(z, PROB_CLIP, 1.0 - PROB_CLIP)
    was_clipped = bool(np.any(clipped != z))
    if was_clipped:
        warnings.warn("GPD probabilities clipped to [1e-12, 1 - 1e-12] for the GoF statistics", RuntimeWarning)
    n = clipped.size
    i = np.arange(1, n + 1)
    w2 = np.sum((clipped - (2 * i - 1) / (2.0 * n)) ** 2) + 1.0 / (12.0 * n)
    a2 = -n - np.sum((2 * i - 1) * (np.log(clipped) + np.log1p(-clipped[::-1]))) / n
    return GofStatistics(float(w2), float(a2), was_clipped)


def bootstrap_gof_pvalue(y, n_boot=500, seed=0, progress=False):
    """
    Refit parametric bootstrap p-values (pW2, pA2).

    Each replicate b is simulated from the MLE fit with its own stream
    (seed, b), refitted, and its statistics compared with the observed ones.
    """
    if n_boot < 1:
        raise UsageError(f"n_boot must be >= 1, got {n_boot}")
    fit = gpd_mle(y)
    observed = gof_statistics(y, fit)

    boot_w2, boot_a2 = [], []
    failures = 0
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', RuntimeWarning)
        for b in tqdm(range(n_boot), desc="Bootstrap", disable=not progress):
            sample = gpd_sample(y.count, fit, make_rng(seed, b))
            try:
                boot = ExceedanceSet(sample[sample > fit.u], fit.u)
                refit = gpd_mle(boot, n_restarts=0, init=fit)
            except (FitFailureError, UsageError):
                failures += 1
                continue
            stats = gof_statistics(boot, refit)
            boot_w2.append(stats.w2)
            boot_a2.append(stats.a2)

    if failures > MAX_REFIT_FAILURES * n_boot:
        raise BootstrapError(f"{failures} of {n_boot} bootstrap refits failed")
    boot_w2 = np.array(boot_w2)
    boot_a2 = np.array(boot_a2)
    return float(np.mean(boot_w2 >= observed.w2)), float(np.mean(boot_a2 >= observed.a2))


@dataclass
class ClassicalSelection:
    """Selected thresholds per statistic plus the per-threshold table."""
    u_w2: object
    u_a2: object
    rows: list
    rule: str
    note: str = ''

    def to_dict(self):
        return {'u_w2': self.u_w2, 'u_a2': self.u_a2, 'rule': self.rule, 'note': self.note, 'rows': self.rows}


def select_from_pvalues(thresholds, pvalues, level=REJECTION_LEVEL, rule='max_p'):
    """
    Threshold chosen from per-threshold p-values (NaN marks a skipped threshold).

    max_p: the threshold with the largest p among those not rejecting (lowest on ties).
    sequential: the lowest threshold above which no test rejects at `level`.
    """
    if rule not in SELECTION_RULES:
        raise UsageError(f"unknown selection rule '{rule}', expected one of {SELECTION_RULES}")
    order = np.argsort(thresholds)
    u = np.asarray(thresholds, dtype=float)[order]
    p = np.asarray(pvalues, dtype=float)[order]
    valid = ~np.isnan(p)
    u, p = u[valid], p[valid]
    if u.size == 0:
        return None
    if rule == 'max_p':
        ok = p >= level
        if not np.any(ok):
            return None
        best = np.max(p[ok])
        return float(u[ok][p[ok] == best][0])
    selected = None
    for k in range(u.size - 1, -1, -1):
        if p[k] < level:
            break
        selected = float(u[k])
    return selected


def classical_threshold_select(y_all, thresholds, seed=0, n_boot=500, level=REJECTION_LEVEL,
                               rule='max_p', min_exceedances=30, progress=True):
    """Fit, bootstrap and select per statistic over a grid of thresholds."""
    y_all = np.asarray(y_all, dtype=float).ravel()
    thresholds = np.asarray(thresholds, dtype=float)
    rows = []
    for index, u in enumerate(tqdm(thresholds, desc="Thresholds", disable=not progress)):
        data = exceedances(y_all, u)
        row = {'u': float(u), 'n_exc': data.count, 'xi': np.nan, 'sigma': np.nan, 'w2': np.nan,
               'a2': np.nan, 'p_w2': np.nan, 'p_a2': np.nan, 'clipped': False, 'status': 'ok'}
        if data.count < max(min_exceedances, 5):
            row['status'] = f"skipped: {data.count} exceedances < {max(min_exceedances, 5)}"
            rows.append(row)
            continue
        try:
            fit = gpd_mle(data)
            stats = gof_statistics(data, fit)
            p_w2, p_a2 = bootstrap_gof_pvalue(data, n_boot, child_seeds(seed, index)[0])
        except (FitFailureError, BootstrapError) as exc:
            row['status'] = f"skipped: {exc}"
            rows.append(row)
            continue
        row.update(xi=fit.xi, sigma=fit.sigma, w2=stats.w2, a2=stats.a2, p_w2=p_w2, p_a2=p_a2,
                   clipped=stats.clipped)
        rows.append(row)

    u = [r['u'] for r in rows]
    u_w2 = select_from_pvalues(u, [r['p_w2'] for r in rows], level, rule)
    u_a2 = select_from_pvalues(u, [r['p_a2'] for r in rows], level, rule)
    note = ''
    if u_w2 is None or u_a2 is None:
        note = f"every fitted threshold rejects the GPD at the {level:g} level for at least one statistic"
    return ClassicalSelection(u_w2, u_a2, rows, rule, note)
