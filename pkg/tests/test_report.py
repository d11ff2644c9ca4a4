import json
import math

import numpy as np
import pandas as pd
import pytest

import report
from errors import DataParseError
from surprise import PValueEstimate
from sweep import Recommendation, SurpriseCurve, SurpriseEntry


def write(path, text):
    path.write_text(text, encoding='utf-8')
    return path


def small_curve():
    entries = [SurpriseEntry(float(u), float(u), 50, PValueEstimate.from_counts(k * 100, 1000, 50),
                             posterior={'acceptance_rate': 0.3, 'ess': [400.0, 350.0]})
               for k, u in enumerate([30, 25, 20, 15, 10], start=1)]
    entries.append(SurpriseEntry(5.0, 5.0, 3, status='skipped', reason='3 exceedances < min_exceedances=30'))
    return SurpriseCurve(entries, 'univariate')


class TestCsv:
    def test_round_trip_with_meta(self, tmp_path):
        df = pd.DataFrame({'y': [0.1, 1 / 3, 2.5e-17, 1e300]})
        path = report.write_csv_table(df, tmp_path / 'out.csv', {'config': {'seed': 3, 'design': 'uni1'}})
        back, meta = report.read_csv_table(path)
        assert back['y'].tolist() == df['y'].tolist()
        assert meta == {'config': {'design': 'uni1', 'seed': 3}}

    def test_non_numeric_cell_line(self, tmp_path):
        path = write(tmp_path / 'bad.csv', "# note: 1\ny\n1.0\nabc\n")
        with pytest.raises(DataParseError) as info:
            report.read_csv_table(path)
        assert info.value.line == 4
        assert str(info.value).startswith('line 4:')

    def test_ragged_row_line(self, tmp_path):
        path = write(tmp_path / 'ragged.csv', "a,b\n1,2\n3,4,5\n")
        with pytest.raises(DataParseError) as info:
            report.read_csv_table(path)
        assert info.value.line == 3

    def test_missing_values(self, tmp_path):
        path = write(tmp_path / 'gaps.csv', "y,z\n1,2\n3,\n4,5\n")
        with pytest.raises(DataParseError) as info:
            report.read_csv_table(path)
        assert info.value.line == 3
        table, _ = report.read_csv_table(path, drop_incomplete=True)
        assert table.to_numpy().tolist() == [[1.0, 2.0], [4.0, 5.0]]

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataParseError):
            report.read_csv_table(write(tmp_path / 'empty.csv', ""))


class TestJson:
    def test_schema_and_non_finite_values(self, tmp_path):
        path = report.write_json(tmp_path / 'r.json', {'p': float('nan'), 'n': np.int64(3), 'u': np.array([1.5])})
        doc = report.read_json(path)
        assert doc == {'schema_version': report.SCHEMA_VERSION, 'p': None, 'n': 3, 'u': [1.5]}

    def test_clean_json(self):
        assert report.clean_json({'a': (math.inf, np.float64(2.0))}) == {'a': [None, 2.0]}


class TestTablesAndPlots:
    def test_curve_table(self):
        table = report.curve_table(small_curve())
        assert len(table) == 6
        assert table['min_ess'].iloc[0] == 350.0
        assert table['status'].iloc[-1] == 'skipped'
        assert np.isnan(table['p'].iloc[-1])

    def test_sweep_plot_is_byte_deterministic(self, tmp_path):
        curve = small_curve()
        rec = Recommendation(20.0, 'level')
        a = report.plot_sweep(curve, rec, tmp_path / 'a.svg').read_bytes()
        b = report.plot_sweep(curve, rec, tmp_path / 'b.svg').read_bytes()
        assert a == b
        assert b'<svg' in a

    def test_multivariate_plot(self, tmp_path):
        entries = [SurpriseEntry(20.0, 20.0, 40, PValueEstimate.from_counts(500, 1000, 40)),
                   SurpriseEntry(10.0, 10.0, 80, PValueEstimate.from_counts(450, 1000, 80)),
                   SurpriseEntry(10.0, 20.0, 40, PValueEstimate.from_counts(700, 1000, 40))]
        path = report.plot_sweep(SurpriseCurve(entries, 'multivariate'), Recommendation(None, 'none'),
                                 tmp_path / 'm.svg')
        assert path.stat().st_size > 0

    def test_run_config_document(self, tmp_path):
        path = report.write_json(tmp_path / 'run_config.json', {'run_config': {'seed': 1}})
        assert json.loads(path.read_text())['run_config'] == {'seed': 1}
