"""
Result files: CSV tables, JSON documents and SVG diagnostic plots.

CSV files start with '#' comment lines carrying the run configuration as
JSON, followed by a header row. Floats are written in shortest round-trip
form so a read-back reproduces every value exactly. SVG output is
byte-deterministic (fixed hash salt, no date metadata).
"""

import io
import json
import math
import re
from pathlib import Path

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from errors import DataParseError

SCHEMA_VERSION = 1

plt.rcParams['svg.hashsalt'] = 'threshold-surprise'
SVG_METADATA = {'Date': None}


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _split_comments(text):
    """Leading '#' lines and the remaining text."""
    lines = text.splitlines(keepends=True)
    count = 0
    while count < len(lines) and lines[count].startswith('#'):
        count += 1
    return [line.rstrip('\n') for line in lines[:count]], ''.join(lines[count:])


def _parse_meta(lines):
    meta = {}
    for line in lines:
        key, sep, value = line[1:].strip().partition(':')
        if not sep:
            continue
        try:
            meta[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            meta[key.strip()] = value.strip()
    return meta


def read_csv_table(path, drop_incomplete=False):
    """
    Numeric table from a CSV with a header row.

    Returns (DataFrame, meta) where meta holds the parsed '# key: value'
    comment lines. Raises DataParseError with the file line number for
    malformed rows, non-numeric cells, and (unless drop_incomplete) missing
    values.
    """
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        comments, body = _split_comments(f.read())
    offset = len(comments)
    try:
        df = pd.read_csv(io.StringIO(body), skipinitialspace=True, float_precision='round_trip')
    except pd.errors.EmptyDataError:
        raise DataParseError(f"{path}: no header row", line=offset + 1)
    except pd.errors.ParserError as exc:
        match = re.search(r'line (\d+)', str(exc))
        line = offset + int(match.group(1)) if match else None
        raise DataParseError(f"{path}: {exc}", line=line)

    if df.shape[1] == 0:
        raise DataParseError(f"{path}: no columns", line=offset + 1)

    numeric = df.apply(pd.to_numeric, errors='coerce')
    bad = numeric.isna() & df.notna()
    if bad.to_numpy().any():
        row = int(np.flatnonzero(bad.any(axis=1).to_numpy())[0])
        column = df.columns[int(np.flatnonzero(bad.iloc[row].to_numpy())[0])]
        raise DataParseError(f"{path}: non-numeric value {df.iloc[row][column]!r} in column '{column}'",
                             line=offset + 2 + row)

    missing = numeric.isna().any(axis=1).to_numpy()
    if missing.any():
        if not drop_incomplete:
            row = int(np.flatnonzero(missing)[0])
            raise DataParseError(f"{path}: missing value (use --drop-incomplete-rows to drop such rows)",
                                 line=offset + 2 + row)
        numeric = numeric[~missing].reset_index(drop=True)
    return numeric.astype(float), _parse_meta(comments)


def write_csv_table(df, path, meta=None):
    """Write df with '# key: json' header lines for each meta item."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        for key, value in (meta or {}).items():
            f.write(f"# {key}: {json.dumps(clean_json(value), sort_keys=True)}\n")
        df.to_csv(f, index=False, lineterminator='\n')
    return path


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def clean_json(obj):
    """Plain-Python copy of obj with NaN/inf as None and numpy types unwrapped."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, payload):
    """Write a results document with its schema version."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {'schema_version': SCHEMA_VERSION}
    document.update(payload)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(clean_json(document), f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def curve_table(curve):
    """One row per (fit_threshold, eval_threshold)."""
    rows = []
    for e in curve.entries:
        pv = e.pvalue
        ess = e.posterior.get('ess', [])
        rows.append({
            'fit_threshold': e.fit_threshold,
            'eval_threshold': e.eval_threshold,
            'n_exc': e.n_exc,
            'status': e.status,
            'p': pv.p if pv else np.nan,
            'mc_se': pv.mc_se if pv else np.nan,
            'n_rep': pv.n_rep if pv else 0,
            'acceptance_rate': e.posterior.get('acceptance_rate', np.nan),
            'min_ess': min(ess) if ess else np.nan,
            'reason': e.reason,
        })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Plots
# ---------------------------------------------------------------------------

def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata=SVG_METADATA)
    plt.close(fig)
    return path


def plot_sweep(curve, recommendation, path, title='Threshold surprise'):
    """p-value versus threshold (univariate) or one line per anchor (multivariate)."""
    fig, ax = plt.subplots(figsize=(8, 5))
    chosen = recommendation.threshold if recommendation is not None else None

    if curve.kind == 'univariate':
        valid = sorted(curve.valid(), key=lambda e: e.fit_threshold)
        u = [e.fit_threshold for e in valid]
        p = [e.pvalue.p for e in valid]
        se = [2 * e.pvalue.mc_se for e in valid]
        ax.errorbar(u, p, yerr=se, fmt='k-o', markersize=4, capsize=2, label='p-value')
    else:
        for v_fit, entries in sorted(curve.lines().items()):
            ok = [e for e in entries if e.ok]
            if not ok or not entries[0].ok:
                continue
            colour = 'black' if chosen is None or v_fit >= chosen else 'grey'
            ax.plot([e.eval_threshold for e in ok], [e.pvalue.p for e in ok], '-', color=colour, linewidth=1)
            ax.plot([v_fit], [entries[0].pvalue.p], 'o', color=colour, markersize=4)

    ax.axhline(0.5, color='black', linestyle='--', linewidth=0.8)
    if chosen is not None:
        ax.axvline(chosen, color='red', linestyle=':', linewidth=1, label=f'recommended {chosen:g}')
        ax.legend()
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel('Threshold')
    ax.set_ylabel('p-value')
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_mrl(points, path, selected=None):
    """Mean excess with its 95% band."""
    valid = [p for p in points if p.status == 'ok']
    u = np.array([p.u for p in valid])
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.fill_between(u, [p.ci_low for p in valid], [p.ci_high for p in valid], color='grey', alpha=0.3,
                    label='95% interval')
    ax.plot(u, [p.mean_excess for p in valid], 'k-', label='Mean excess')
    if selected is not None:
        ax.axvline(selected, color='red', linestyle=':', linewidth=1, label=f'selected {selected:g}')
    ax.set_xlabel('Threshold')
    ax.set_ylabel('Mean excess')
    ax.set_title('Mean Residual Life')
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_replicates(study, path):
    """Box plot of p-values per threshold across replicate datasets."""
    fig, ax = plt.subplots(figsize=(10, 5))
    columns = []
    for k in range(study.thresholds.size):
        column = study.pvalues[:, k]
        columns.append(column[~np.isnan(column)])
    labels = [f"{u:g}" for u in study.thresholds]
    ax.boxplot(columns)
    ax.set_xticks(range(1, len(labels) + 1), labels)
    ax.axhline(0.5, color='black', linestyle='--', linewidth=0.8)
    if study.anchor is None:
        ax.set_xlabel('Threshold')
        ax.set_title(f'Dataset-induced variability ({study.design})')
    else:
        ax.set_xlabel('Evaluation threshold')
        ax.set_title(f'Dataset-induced variability ({study.design}, fitted at r = {study.anchor:g})')
    ax.set_ylabel('p-value')
    ax.grid(True, alpha=0.3)
    return _save(fig, path)
