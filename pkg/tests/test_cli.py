import json

import pandas as pd
import pytest

import cli
import report
from errors import EXIT_DOMAIN, EXIT_EMPTY, EXIT_OK, EXIT_PARSE, UsageError

FAST_SWEEP = ['--mcmc-keep', '200', '--mcmc-burn', '50', '--no-progress']


def simulate(out, *extra):
    return cli.main(['simulate', '--output-dir', str(out), *extra])


class TestParsing:
    def test_thresholds(self):
        assert cli.parse_thresholds('4:10:2').tolist() == [10.0, 8.0, 6.0, 4.0]
        assert cli.parse_thresholds('20,30,25').tolist() == [30.0, 25.0, 20.0]
        assert cli.parse_thresholds('30').tolist() == [30.0]
        with pytest.raises(UsageError):
            cli.parse_thresholds('a:b')

    def test_stat(self):
        assert cli.parse_stat('max').kind == 'maximum'
        assert cli.parse_stat('quantile:7').quantile_index == 7
        assert cli.parse_stat('quantile:0.9').quantile_fraction == 0.9
        with pytest.raises(UsageError):
            cli.parse_stat('mean')

    def test_model(self):
        assert cli.parse_model('dirichlet:3') == ('dirichlet_mixture', 3)
        assert cli.parse_model('dirichlet:auto') == ('dirichlet_mixture', 'auto')
        assert cli.parse_model('logistic') == ('logistic', 2)
        with pytest.raises(UsageError):
            cli.parse_model('gumbel')

    def test_bad_flag_value_is_a_usage_exit(self):
        with pytest.raises(SystemExit) as info:
            cli.main(['sweep', '--pvalue', 'bogus'])
        assert info.value.code == 2


class TestSimulate:
    def test_design1(self, tmp_path):
        assert simulate(tmp_path, '--design', 'uni1', '--seed', '42') == EXIT_OK
        table, meta = report.read_csv_table(tmp_path / 'uni1_seed42.csv')
        assert list(table.columns) == ['y'] and len(table) == 500
        assert meta['config']['seed'] == 42
        assert report.read_json(tmp_path / 'uni1_seed42.json')['true_threshold'] == 20.0

    def test_rerun_is_byte_identical(self, tmp_path):
        simulate(tmp_path / 'a', '--design', 'uni2', '--seed', '3')
        simulate(tmp_path / 'b', '--design', 'uni2', '--seed', '3')
        for name in ('uni2_seed3.csv', 'uni2_seed3.json'):
            assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()

    def test_dirichlet_design(self, tmp_path):
        simulate(tmp_path, '--design', 'dirichlet', '--seed', '1')
        table, _ = report.read_csv_table(tmp_path / 'dirichlet_seed1.csv')
        assert list(table.columns) == ['r', 'w1'] and len(table) == 3000

    def test_config_file_and_explicit_flags(self, tmp_path):
        config = tmp_path / 'config.json'
        config.write_text(json.dumps({'seed': 5, 'n': 100, 'design': 'uni3', 'colour': 'red'}))
        simulate(tmp_path / 'out', '--config', str(config), '--seed', '6')
        table, _ = report.read_csv_table(tmp_path / 'out' / 'uni3_seed6.csv')
        assert len(table) == 100

    def test_run_config_reproduces_the_run(self, tmp_path):
        simulate(tmp_path / 'a', '--design', 'uni1', '--seed', '8', '--n', '50')
        simulate(tmp_path / 'b', '--config', str(tmp_path / 'a' / 'run_config.json'))
        assert (tmp_path / 'a' / 'uni1_seed8.csv').read_bytes() == (tmp_path / 'b' / 'uni1_seed8.csv').read_bytes()

    def test_missing_config_file(self, tmp_path):
        assert simulate(tmp_path, '--config', str(tmp_path / 'nope.json')) == 7


class TestSweep:
    def test_single_threshold(self, tmp_path):
        simulate(tmp_path, '--design', 'uni1', '--seed', '1')
        code = cli.main(['sweep', '--input', str(tmp_path / 'uni1_seed1.csv'), '--thresholds', '30',
                         '--output-dir', str(tmp_path / 'sweep'), *FAST_SWEEP])
        assert code == EXIT_OK
        table = pd.read_csv(tmp_path / 'sweep' / 'sweep_results.csv', comment='#')
        assert len(table) == 1 and table['status'].iloc[0] == 'ok'
        doc = report.read_json(tmp_path / 'sweep' / 'sweep_results.json')
        assert doc['recommendation']['threshold'] is None
        assert (tmp_path / 'sweep' / 'sweep_plot.svg').exists()

    def test_empty_sweep_exit_code(self, tmp_path, capsys):
        simulate(tmp_path, '--design', 'uni1', '--seed', '1')
        code = cli.main(['sweep', '--input', str(tmp_path / 'uni1_seed1.csv'), '--thresholds', '1000,2000',
                         '--output-dir', str(tmp_path / 'sweep'), *FAST_SWEEP])
        assert code == EXIT_EMPTY
        assert 'every threshold was skipped' in capsys.readouterr().err

    def test_malformed_input(self, tmp_path, capsys):
        bad = tmp_path / 'bad.csv'
        bad.write_text("y\n21.0\nfoo\n")
        code = cli.main(['sweep', '--input', str(bad), '--thresholds', '20', '--output-dir', str(tmp_path),
                         *FAST_SWEEP])
        assert code == EXIT_PARSE
        assert 'line 3' in capsys.readouterr().err

    def test_missing_thresholds(self, tmp_path):
        simulate(tmp_path, '--design', 'uni1', '--seed', '1')
        code = cli.main(['sweep', '--input', str(tmp_path / 'uni1_seed1.csv'), '--output-dir', str(tmp_path)])
        assert code == EXIT_DOMAIN


class TestTransform:
    def test_two_columns(self, tmp_path):
        data = tmp_path / 'pairs.csv'
        pd.DataFrame({'a': [1.0, 4.0, 2.0, 8.0], 'b': [3.0, 1.0, 2.0, 5.0]}).to_csv(data, index=False)
        assert cli.main(['transform', '--input', str(data), '--output-dir', str(tmp_path / 't')]) == EXIT_OK
        frechet, _ = report.read_csv_table(tmp_path / 't' / 'frechet.csv')
        polar, _ = report.read_csv_table(tmp_path / 't' / 'polar.csv')
        assert frechet.shape == (4, 2)
        assert list(polar.columns) == ['r', 'w1', 'w2']
        assert (polar['w1'] + polar['w2']).round(12).eq(1.0).all()

    def test_constant_column(self, tmp_path, capsys):
        data = tmp_path / 'flat.csv'
        pd.DataFrame({'a': [1.0, 2.0, 3.0], 'b': [4.0, 4.0, 4.0]}).to_csv(data, index=False)
        assert cli.main(['transform', '--input', str(data), '--output-dir', str(tmp_path)]) == EXIT_DOMAIN
        assert 'column 1' in capsys.readouterr().err


def test_classical_outputs(tmp_path):
    simulate(tmp_path, '--design', 'uni1', '--seed', '2')
    code = cli.main(['classical', '--input', str(tmp_path / 'uni1_seed2.csv'), '--thresholds', '15,20,25',
                     '--n-boot', '20', '--output-dir', str(tmp_path / 'c'), '--no-progress'])
    assert code == EXIT_OK
    doc = report.read_json(tmp_path / 'c' / 'classical_results.json')
    assert set(doc['selected']) == {'mrl', 'w2', 'a2'}
    assert doc['selection']['rule'] == 'max_p'
    assert all('clipped' in row for row in doc['selection']['rows'])
    gof, _ = report.read_csv_table(tmp_path / 'c' / 'gof.csv')
    assert 'clipped' in gof.columns
    assert (tmp_path / 'c' / 'mrl_plot.svg').exists()


def test_replicates_outputs(tmp_path):
    code = cli.main(['replicates', '--design', 'uni1', '--n-replicates', '2', '--thresholds', '20,25,30',
                     '--min-exceedances', '10', '--output-dir', str(tmp_path), *FAST_SWEEP])
    assert code == EXIT_OK
    summary, _ = report.read_csv_table(tmp_path / 'replicate_summary.csv')
    assert summary['threshold'].tolist() == [30.0, 25.0, 20.0]
    assert (tmp_path / 'replicate_boxplot.svg').exists()


def test_bivariate_replicates_plot_each_anchor(tmp_path):
    code = cli.main(['replicates', '--design', 'logistic', '--n-replicates', '2', '--thresholds', '20,30',
                     '--min-exceedances', '10', '--output-dir', str(tmp_path), *FAST_SWEEP])
    assert code == EXIT_OK
    doc = report.read_json(tmp_path / 'replicate_results.json')
    assert doc['model'] == 'logistic'
    assert sorted({row['anchor'] for row in doc['lines']}) == [20.0, 30.0]
    assert (tmp_path / 'replicate_boxplot_r20.svg').exists()
    assert (tmp_path / 'replicate_boxplot_r30.svg').exists()
    lines, _ = report.read_csv_table(tmp_path / 'replicate_lines.csv')
    assert len(lines) == 3


def test_replicates_reject_a_mismatched_model(tmp_path):
    code = cli.main(['replicates', '--design', 'uni1', '--model', 'logistic', '--n-replicates', '1',
                     '--thresholds', '20', '--output-dir', str(tmp_path), *FAST_SWEEP])
    assert code == EXIT_DOMAIN


def test_classical_rule_defaults_to_largest_p():
    parser, _ = cli.build_parser()
    assert parser.parse_args(['classical', '--input', 'x.csv']).rule == 'max_p'
    assert parser.parse_args(['classical', '--input', 'x.csv', '--rule', 'sequential']).rule == 'sequential'


@pytest.mark.slow
def test_parallel_sweep_rerun_is_byte_identical(tmp_path):
    simulate(tmp_path, '--design', 'uni1', '--seed', '2013')
    data = str(tmp_path / 'uni1_seed2013.csv')
    for name, workers in (('a', '4'), ('b', '4'), ('serial', '1')):
        code = cli.main(['sweep', '--input', data, '--thresholds', '10:40:5', '--workers', workers,
                         '--mcmc-keep', '1000', '--mcmc-burn', '300', '--no-progress',
                         '--output-dir', str(tmp_path / name)])
        assert code == EXIT_OK
    for name in ('sweep_results.csv', 'sweep_results.json', 'sweep_plot.svg'):
        first = (tmp_path / 'a' / name).read_bytes()
        assert first == (tmp_path / 'b' / name).read_bytes()
        assert first == (tmp_path / 'serial' / name).read_bytes()
