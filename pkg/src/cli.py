#!/usr/bin/env python3
"""
Threshold selection by measures of surprise.

Commands:
    simulate    write a seeded design dataset
    sweep       surprise p-values over a threshold schedule
    transform   unit Frechet margins and pseudo-polar coordinates
    classical   mean residual life and W^2 / A^2 goodness-of-fit selection
    replicates  dataset-induced variability of a sweep over a design

Every command writes run_config.json next to its outputs; passing that file
back with --config reproduces the run (explicit flags still win).
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

import classical
import datagen
import report
import spectral
import sweep
from errors import EXIT_USAGE, SurpriseError, UsageError, exit_code_for
from mcmc import McmcConfig
from surprise import TestStatisticSpec

# run_config keys that do not change results and stay out of embedded metadata
NON_RESULT_KEYS = ('workers', 'no_progress', 'output_dir', 'config')


# ---------------------------------------------------------------------------
# Argument parsing helpers
# ---------------------------------------------------------------------------

def parse_thresholds(text):
    """'30', 'min:max:step' or 'a,b,c' -> strictly descending array."""
    text = str(text).strip()
    try:
        if ':' in text:
            low, high, step = (float(part) for part in text.split(':'))
            return sweep.equally_spaced_thresholds(low, high, step)
        values = sorted({float(part) for part in text.split(',') if part.strip()}, reverse=True)
    except ValueError:
        raise UsageError(f"cannot parse thresholds '{text}'")
    if not values:
        raise UsageError("no thresholds given")
    return np.array(values)


def parse_stat(text):
    """negloglik | max | quantile:J | quantile:F (F a fraction in (0, 1])."""
    text = str(text).strip()
    if text == 'negloglik':
        return TestStatisticSpec('neg_log_likelihood')
    if text == 'max':
        return TestStatisticSpec('maximum')
    if text.startswith('quantile:'):
        value = text.split(':', 1)[1]
        try:
            if '.' in value:
                return TestStatisticSpec('empirical_quantile', quantile_fraction=float(value))
            return TestStatisticSpec('empirical_quantile', quantile_index=int(value))
        except ValueError:
            pass
    raise UsageError(f"cannot parse statistic '{text}' (negloglik, max, quantile:J or quantile:0.9)")


def parse_model(text):
    """(model, n_components): gpd | logistic | bilogistic | dirichlet[:I|:auto]."""
    text = str(text).strip()
    if text in ('gpd', 'logistic', 'bilogistic'):
        return text, 2
    if text == 'dirichlet':
        return 'dirichlet_mixture', 2
    if text.startswith('dirichlet:'):
        value = text.split(':', 1)[1]
        if value == 'auto':
            return 'dirichlet_mixture', 'auto'
        try:
            return 'dirichlet_mixture', int(value)
        except ValueError:
            pass
    raise UsageError(f"cannot parse model '{text}' (gpd, logistic, bilogistic, dirichlet:I or dirichlet:auto)")


def _add_common(parser, needs_input=True):
    if needs_input:
        parser.add_argument('--input', type=str, default=None, help='Input CSV (header row required)')
    parser.add_argument('--output-dir', type=str, default='results', help='Directory for outputs')
    parser.add_argument('--seed', type=int, default=0, help='Random seed')
    parser.add_argument('--workers', type=int, default=1, help='Parallel worker processes')
    parser.add_argument('--config', type=str, default=None, help='JSON file of flag values (e.g. run_config.json)')


def _add_sweep_flags(parser):
    parser.add_argument('--thresholds', type=str, default=None,
                        help="Single value, min:max:step, or a comma list")
    parser.add_argument('--stat', type=str, default='negloglik', help='negloglik | max | quantile:J | quantile:0.9')
    parser.add_argument('--pvalue', type=str, default='posterior', choices=['posterior', 'partial'])
    parser.add_argument('--mcmc-keep', type=int, default=9000, help='Kept MCMC draws per threshold')
    parser.add_argument('--mcmc-burn', type=int, default=1000, help='Burn-in iterations per threshold')
    parser.add_argument('--min-exceedances', type=int, default=30)
    parser.add_argument('--delta', type=float, default=0.15, help='Recommendation tolerance')
    parser.add_argument('--window', type=int, default=3, help='Top thresholds defining the reference level')
    parser.add_argument('--no-progress', action='store_true', help='Hide progress bars')


def build_parser():
    parser = argparse.ArgumentParser(description='Threshold selection by measures of surprise')
    subparsers = parser.add_subparsers(dest='command', required=True)

    p = subparsers.add_parser('simulate', help='Write a seeded design dataset')
    _add_common(p, needs_input=False)
    p.add_argument('--design', type=str, default='uni1',
                   choices=sorted(datagen.UNIVARIATE_DESIGNS) + sorted(datagen.BIVARIATE_DESIGNS))
    p.add_argument('--n', type=int, default=None, help='Override the design size')
    p.add_argument('--gamma-parameterization', type=str, default='scale', choices=['scale', 'rate'])
    p.set_defaults(func=cmd_simulate)

    p = subparsers.add_parser('sweep', help='Surprise p-values over a threshold schedule')
    _add_common(p)
    _add_sweep_flags(p)
    p.add_argument('--model', type=str, default='gpd', help='gpd | logistic | bilogistic | dirichlet:I | dirichlet:auto')
    p.add_argument('--polar', action='store_true', help='Input columns are r, w1[, w2, ...] already')
    p.add_argument('--drop-incomplete-rows', action='store_true', help='Drop rows with missing values')
    p.set_defaults(func=cmd_sweep)

    p = subparsers.add_parser('transform', help='Frechet margins and pseudo-polar coordinates')
    _add_common(p)
    p.add_argument('--what', type=str, default='both', choices=['frechet', 'polar', 'both'])
    p.add_argument('--drop-incomplete-rows', action='store_true', help='Drop rows with missing values')
    p.set_defaults(func=cmd_transform)

    p = subparsers.add_parser('classical', help='MRL and goodness-of-fit threshold selection')
    _add_common(p)
    p.add_argument('--thresholds', type=str, default=None, help="Single value, min:max:step, or a comma list")
    p.add_argument('--n-boot', type=int, default=500, help='Bootstrap replicates per threshold')
    p.add_argument('--rule', type=str, default='max_p', choices=list(classical.SELECTION_RULES))
    p.add_argument('--level', type=float, default=classical.REJECTION_LEVEL)
    p.add_argument('--min-exceedances', type=int, default=30)
    p.add_argument('--no-progress', action='store_true', help='Hide progress bars')
    p.set_defaults(func=cmd_classical)

    p = subparsers.add_parser('replicates', help='Dataset-induced variability over a simulation design')
    _add_common(p, needs_input=False)
    _add_sweep_flags(p)
    p.add_argument('--design', type=str, default='uni1',
                   choices=sorted(datagen.UNIVARIATE_DESIGNS) + sorted(datagen.BIVARIATE_DESIGNS))
    p.add_argument('--model', type=str, default=None,
                   help='gpd for univariate designs; defaults to the design family for bivariate ones')
    p.add_argument('--n-replicates', type=int, default=30)
    p.set_defaults(func=cmd_replicates)

    return parser, subparsers.choices


def parse_args(argv=None):
    """Parse flags, apply --config values as defaults, and parse again so explicit flags win."""
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config, 'r', encoding='utf-8') as f:
            values = json.load(f)
        values = values.get('run_config', values)
        sub = commands[args.command]
        known = {action.dest for action in sub._actions}
        unknown = sorted(set(values) - known - {'command', 'schema_version'})
        if unknown:
            print(f"⚠️  Ignoring unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**{k: v for k, v in values.items() if k in known and k != 'config'})
        args = parser.parse_args(argv)
    return args


def run_config(args):
    return {k: v for k, v in sorted(vars(args).items()) if k != 'func'}


def result_meta(args):
    return {k: v for k, v in run_config(args).items() if k not in NON_RESULT_KEYS}


def _output_dir(args):
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / 'run_config.json', {'run_config': run_config(args)})
    return out


def _require(args, name):
    if getattr(args, name) in (None, ''):
        raise UsageError(f"--{name.replace('_', '-')} is required")
    return getattr(args, name)


def _banner(title):
    print("=" * 60)
    print(title)
    print("=" * 60)


def _sweep_config(args, model='gpd', n_components=2):
    mcmc = McmcConfig(n_keep=args.mcmc_keep, n_burn=args.mcmc_burn, seed=args.seed)
    return sweep.SweepConfig(
        thresholds=parse_thresholds(_require(args, 'thresholds')),
        stat=parse_stat(args.stat),
        pvalue_kind=args.pvalue,
        mcmc=mcmc,
        model=model,
        n_components=n_components,
        min_exceedances=args.min_exceedances,
        seed=args.seed,
        workers=args.workers,
        progress=not args.no_progress,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    design = datagen.get_design(args.design)
    if args.n is not None:
        design = design.with_size(args.n)
    out = _output_dir(args)
    _banner(f"Simulating design {design.id} (seed {args.seed})")

    if isinstance(design, datagen.UnivariateDesign):
        design = replace(design, gamma_parameterization=args.gamma_parameterization)
        table = pd.DataFrame({'y': datagen.gen_univariate(design, args.seed)})
    else:
        polar = datagen.gen_bivariate(design, args.seed)
        table = pd.DataFrame({'r': polar.r, 'w1': polar.w[:, 0]})

    stem = f"{design.id}_seed{args.seed}"
    csv_path = report.write_csv_table(table, out / f"{stem}.csv", {'config': result_meta(args)})
    meta = {'design': design.to_dict(), 'seed': args.seed, 'true_threshold': design.true_threshold,
            'rows': len(table), 'columns': list(table.columns)}
    meta_path = report.write_json(out / f"{stem}.json", meta)
    print(f"✓ {len(table)} rows, true threshold {design.true_threshold:g}")
    print(f"Saved dataset to {csv_path}")
    print(f"Saved metadata to {meta_path}")
    return 0


def _load_polar(table, polar_input):
    values = table.to_numpy()
    if polar_input:
        if values.shape[1] < 2:
            raise UsageError("polar input needs columns r, w1[, w2, ...]")
        w = values[:, 1:]
        if w.shape[1] == 1:
            w = np.column_stack([w[:, 0], 1.0 - w[:, 0]])
        return spectral.PolarDataset(values[:, 0], w)
    if values.shape[1] < 2:
        raise UsageError("a multivariate sweep needs d >= 2 columns (or --polar)")
    return spectral.to_pseudo_polar(spectral.frechet_transform(values))


def cmd_sweep(args):
    model, n_components = parse_model(args.model)
    cfg = _sweep_config(args, model, n_components)
    table, _ = report.read_csv_table(_require(args, 'input'), drop_incomplete=args.drop_incomplete_rows)
    out = _output_dir(args)

    _banner(f"Threshold sweep: model={args.model}, stat={cfg.stat.label()}, p-value={cfg.pvalue_kind}")
    print(f"Input: {args.input} ({len(table)} rows)")
    print(f"Thresholds: {len(cfg.thresholds)} from {cfg.thresholds[0]:g} down to {cfg.thresholds[-1]:g}")

    if model == 'gpd':
        if table.shape[1] != 1:
            raise UsageError(f"the gpd model needs a single-column input, got {table.shape[1]} columns")
        curve = sweep.univariate_sweep(table.iloc[:, 0].to_numpy(), cfg)
    else:
        curve = sweep.multivariate_sweep(_load_polar(table, args.polar), cfg)

    try:
        recommendation = sweep.recommend_threshold(curve, args.delta, args.window)
    except UsageError as exc:
        recommendation = sweep.Recommendation(None, f"no recommendation: {exc}")

    print("\n=== Sweep Results ===")
    skipped = [e for e in curve.entries if not e.ok]
    print(f"Entries: {len(curve.entries)} ({len(skipped)} skipped)")
    if curve.kind == 'univariate':
        for e in curve.entries:
            if e.ok:
                print(f"  u={e.fit_threshold:g}: p={e.pvalue.p:.3f} (n={e.n_exc})")
            else:
                print(f"  u={e.fit_threshold:g}: skipped ({e.reason})")
    if recommendation.threshold is not None:
        print(f"✓ Recommended threshold: {recommendation.threshold:g}")
    else:
        print(f"⚠️  No threshold recommended: {recommendation.note}")

    meta = {'config': result_meta(args)}
    csv_path = report.write_csv_table(report.curve_table(curve), out / 'sweep_results.csv', meta)
    json_path = report.write_json(out / 'sweep_results.json', {
        'config': result_meta(args),
        'sweep': cfg.to_dict(),
        'curve': curve.to_dict(),
        'recommendation': recommendation.to_dict(),
    })
    svg_path = report.plot_sweep(curve, recommendation, out / 'sweep_plot.svg',
                                 title=f"Surprise sweep ({args.model}, {cfg.stat.label()})")
    print(f"Saved results table to {csv_path}")
    print(f"Saved results document to {json_path}")
    print(f"Saved plot to {svg_path}")
    return 0


def cmd_transform(args):
    table, _ = report.read_csv_table(_require(args, 'input'), drop_incomplete=args.drop_incomplete_rows)
    out = _output_dir(args)
    _banner(f"Transforming {args.input} ({len(table)} rows, {table.shape[1]} columns)")
    meta = {'config': result_meta(args)}

    z = spectral.frechet_transform(table.to_numpy())
    if args.what in ('frechet', 'both'):
        path = report.write_csv_table(pd.DataFrame(z, columns=table.columns), out / 'frechet.csv', meta)
        print(f"Saved Frechet margins to {path}")
    if args.what in ('polar', 'both'):
        polar = spectral.to_pseudo_polar(z)
        columns = {'r': polar.r}
        for k in range(polar.d):
            columns[f"w{k + 1}"] = polar.w[:, k]
        path = report.write_csv_table(pd.DataFrame(columns), out / 'polar.csv', meta)
        print(f"Saved pseudo-polar coordinates to {path}")
    print("✓ Transform complete")
    return 0


def cmd_classical(args):
    thresholds = np.sort(parse_thresholds(_require(args, 'thresholds')))
    table, _ = report.read_csv_table(_require(args, 'input'))
    if table.shape[1] != 1:
        raise UsageError(f"classical selection needs a single-column input, got {table.shape[1]} columns")
    y = table.iloc[:, 0].to_numpy()
    out = _output_dir(args)
    _banner(f"Classical threshold selection ({len(thresholds)} thresholds, {args.n_boot} bootstrap replicates)")

    points = classical.mean_residual_life(y, thresholds)
    u_mrl = classical.mrl_threshold_select(points)
    selection = classical.classical_threshold_select(
        y, thresholds, seed=args.seed, n_boot=args.n_boot, level=args.level, rule=args.rule,
        min_exceedances=args.min_exceedances, progress=not args.no_progress)

    print("\n=== Classical Results ===")
    for name, value in (('MRL', u_mrl), ('W2', selection.u_w2), ('A2', selection.u_a2)):
        if value is None:
            print(f"⚠️  {name}: no threshold selected")
        else:
            print(f"✓ {name}: {value:g}")

    meta = {'config': result_meta(args)}
    mrl_path = report.write_csv_table(pd.DataFrame([p.to_dict() for p in points]), out / 'mrl.csv', meta)
    gof_path = report.write_csv_table(pd.DataFrame(selection.rows), out / 'gof.csv', meta)
    json_path = report.write_json(out / 'classical_results.json', {
        'config': result_meta(args),
        'selected': {'mrl': u_mrl, 'w2': selection.u_w2, 'a2': selection.u_a2},
        'selection': selection.to_dict(),
        'mrl': [p.to_dict() for p in points],
    })
    svg_path = report.plot_mrl(points, out / 'mrl_plot.svg', selected=u_mrl)
    for path in (mrl_path, gof_path, json_path, svg_path):
        print(f"Saved {path.name} to {path}")
    return 0


def cmd_replicates(args):
    design = datagen.get_design(args.design)
    bivariate = isinstance(design, datagen.BivariateDesign)
    model, n_components = parse_model(args.model or (design.id if bivariate else 'gpd'))
    cfg = _sweep_config(args, model, n_components)
    out = _output_dir(args)
    _banner(f"Replicate study: {design.id}, model={cfg.model}, {args.n_replicates} replicates")

    study = sweep.replicate_study(design, args.n_replicates, cfg, args.delta, args.window)
    summary = pd.DataFrame(study.summary_rows())
    pvalues = pd.DataFrame(study.pvalues, columns=[f"u={u:g}" for u in study.thresholds])

    recommended = [r for r in study.recommendations if r is not None]
    print("\n=== Replicate Results ===")
    print(f"Recommendations made: {len(recommended)}/{len(study.recommendations)}")
    if recommended:
        print(f"✓ Median recommended threshold: {np.median(recommended):g}")

    meta = {'config': result_meta(args)}
    paths = [
        report.write_csv_table(summary, out / 'replicate_summary.csv', meta),
        report.write_csv_table(pvalues, out / 'replicate_pvalues.csv', meta),
        report.write_json(out / 'replicate_results.json', {
            'config': result_meta(args),
            'design': design.to_dict(),
            'model': cfg.model,
            'summary': study.summary_rows(),
            'lines': study.line_rows(),
            'recommendations': study.recommendations,
        }),
        report.plot_replicates(study, out / 'replicate_boxplot.svg'),
    ]
    if study.kind == 'multivariate':
        paths.append(report.write_csv_table(pd.DataFrame(study.line_rows()), out / 'replicate_lines.csv', meta))
        for v_fit, line in study.anchors.items():
            paths.append(report.plot_replicates(line, out / f"replicate_boxplot_r{v_fit:g}.svg"))
    for path in paths:
        print(f"Saved {path.name} to {path}")
    return 0


def main(argv=None):
    try:
        args = parse_args(argv)
    except OSError as exc:
        print(f"Error: cannot read config: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except json.JSONDecodeError as exc:
        print(f"Error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (SurpriseError, OSError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
