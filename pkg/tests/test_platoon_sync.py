"""Tests for the validate / run / sweep command surface."""

import json
import logging

import numpy as np
import pandas as pd
import pytest

from config import BUNDLED_SCENARIOS
from platoon_sync import EXIT_DIVERGED, EXIT_INVALID, EXIT_OK, cmd_run, cmd_sweep, cmd_validate, main
from scenario_loader import parse_scenario

MATCHED = BUNDLED_SCENARIOS['matched_linear']


def write_variant(tmp_path, old, new, name='variant.yaml'):
    path = tmp_path / name
    text = MATCHED.read_text()
    assert old in text
    path.write_text(text.replace(old, new))
    return path


class TestValidate:
    @pytest.mark.parametrize("name", sorted(BUNDLED_SCENARIOS))
    def test_bundled_scenarios_are_valid(self, name):
        report, code = cmd_validate(BUNDLED_SCENARIOS[name])
        assert code == EXIT_OK
        assert all(entry['passed'] is not False for entry in report)
        assert {entry['check'] for entry in report} >= {'parse', 'graph', 'reference', 'Q', 'sign_condition'}

    def test_cycle_fails_but_other_checks_still_run(self, tmp_path):
        path = write_variant(tmp_path, "    - [1, 2]\n", "    - [1, 2]\n    - [2, 1]\n")
        report, code = cmd_validate(path)
        assert code == EXIT_INVALID
        by_name = {entry['check']: entry for entry in report}
        assert by_name['graph']['passed'] is False
        assert 'CycleDetected' in by_name['graph']['detail']
        assert by_name['reference']['passed'] is True
        assert by_name['lyapunov']['passed'] is True

    def test_bad_q_skips_lyapunov(self, tmp_path):
        path = write_variant(tmp_path, "Q: [10.0, 1.0, 1.0]", "Q: [10.0, -1.0, 1.0]")
        report, code = cmd_validate(path)
        by_name = {entry['check']: entry for entry in report}
        assert code == EXIT_INVALID
        assert by_name['Q']['passed'] is False
        assert by_name['lyapunov']['passed'] is None

    def test_parse_error(self, tmp_path):
        path = write_variant(tmp_path, "protocol: aocm", "protocol: mpc")
        report, code = cmd_validate(path)
        assert code == EXIT_INVALID
        assert report[0]['check'] == 'parse'
        assert 'line' in report[0]['detail']

    def test_main_accepts_bundled_names(self):
        assert main(['validate', 'matched_linear']) == EXIT_OK

    def test_agent_dimension_mismatch_is_reported(self, tmp_path):
        path = write_variant(tmp_path, "{tau: 0.4, x0: [-1.0, 0.5]}",
                             "{A: [[0.0, 1.0], [-2.0, -3.0]], b: [0.0, 1.0], x0: [-1.0, 0.5]}")
        report, code = cmd_validate(path)
        assert code == EXIT_INVALID
        by_name = {entry['check']: entry for entry in report}
        assert by_name['agents']['passed'] is True
        assert by_name['dimensions']['passed'] is False
        assert '[2]' in by_name['dimensions']['detail']
        assert by_name['sign_condition']['passed'] is None
        assert by_name['matching']['passed'] is None
        assert main(['validate', str(path)]) == EXIT_INVALID


class TestRun:
    def test_outputs(self, tmp_path):
        summary, code = cmd_run(MATCHED, tmp_path / 'out', horizon=0.05)
        assert code == EXIT_OK
        assert summary['success']

        frame = pd.read_csv(tmp_path / 'out' / 'trajectory.csv')
        assert list(frame.columns[:4]) == ['t', 'xm1', 'xm2', 'xm3']
        assert list(frame.columns[4:9]) == ['a1_x1', 'a1_x2', 'a1_x3', 'a1_u', 'a1_err']
        assert len(frame.columns) == 4 + 2 * 5
        assert len(frame) == 51
        assert frame['t'].iloc[-1] == pytest.approx(0.05)
        assert len(pd.read_csv(tmp_path / 'out' / 'series.csv')) == 6

        with open(tmp_path / 'out' / 'metrics.json') as f:
            report = json.load(f)
        assert report['scenario'] == 'matched_linear'
        assert report['oracle_error'] < 1e-5

        copied = parse_scenario(tmp_path / 'out' / 'scenario.yaml')
        assert copied.simulation['horizon'] == pytest.approx(0.05)

    def test_output_is_byte_identical_across_runs(self, tmp_path):
        cmd_run(MATCHED, tmp_path / 'first', horizon=0.05)
        cmd_run(MATCHED, tmp_path / 'second', horizon=0.05)
        for name in ('trajectory.csv', 'metrics.json'):
            assert (tmp_path / 'first' / name).read_bytes() == (tmp_path / 'second' / name).read_bytes()

    def test_divergence_exit_code(self, tmp_path):
        path = write_variant(tmp_path, "{tau: 1.0, x0: [1.0, 0.0]}", "{tau: 1.0, x0: [2000000.0, 0.0]}")
        summary, code = cmd_run(path, tmp_path / 'out')
        assert code == EXIT_DIVERGED
        assert not summary['success']
        assert summary['diverged_at'] == pytest.approx(0.001)

    def test_invalid_scenario_exit_code(self, tmp_path):
        path = write_variant(tmp_path, "tau: -4.0", "A_m: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.25]]\n  b_m: [0.0, 0.0, 1.0]")
        _, code = cmd_run(path, tmp_path / 'out')
        assert code == EXIT_INVALID

    @pytest.mark.parametrize("name", ['platoon_nn', 'platoon_ie'])
    def test_adaptive_output_is_byte_identical_across_runs(self, tmp_path, name):
        cmd_run(BUNDLED_SCENARIOS[name], tmp_path / 'first', horizon=0.05)
        cmd_run(BUNDLED_SCENARIOS[name], tmp_path / 'second', horizon=0.05)
        for output in ('trajectory.csv', 'metrics.json'):
            assert (tmp_path / 'first' / output).read_bytes() == (tmp_path / 'second' / output).read_bytes()

    def test_model_error_while_assembling_exits_invalid(self, tmp_path):
        # b orthogonal to b_m leaves the sign of k_r* undetermined
        path = write_variant(tmp_path, "{tau: 1.0, x0: [1.0, 0.0]}",
                             "{A: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]], b: [0.0, 1.0, 0.0], x0: [1.0, 0.0]}")
        summary, code = cmd_run(path, tmp_path / 'out')
        assert code == EXIT_INVALID
        assert not summary['success']
        assert 'ModelError' in summary['errors'][0]


class TestSweep:
    def test_empty_sweep(self, tmp_path):
        frame, code = cmd_sweep(MATCHED, 'gamma', [], tmp_path)
        assert code == EXIT_OK
        assert frame.empty
        assert (tmp_path / 'sweep_gamma.csv').exists()

    def test_step_sweep_reports_order(self, tmp_path):
        frame, code = cmd_sweep(MATCHED, 'h', [0.002, 0.001], tmp_path, workers=2)
        assert code == EXIT_OK
        assert list(frame['value']) == [0.002, 0.001]
        assert 'observed_order' in frame.columns
        assert not frame['diverged'].any()
        assert (frame['oracle_error'] < 1e-5).all()
        written = pd.read_csv(tmp_path / 'sweep_h.csv')
        assert len(written) == 2

    def test_step_sweep_order_is_fourth(self, tmp_path):
        frame, code = cmd_sweep(MATCHED, 'h', [0.1, 0.05, 0.025], tmp_path, workers=1)
        assert code == EXIT_OK
        orders = frame['observed_order'].to_numpy()
        assert np.isnan(orders[0])
        assert np.all((orders[1:] >= 3.7) & (orders[1:] <= 4.3))

    def test_failed_run_is_recorded_and_sweep_continues(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING):
            frame, code = cmd_sweep(MATCHED, 'gamma', [10.0, -1.0], tmp_path, workers=1)
        assert code == EXIT_INVALID
        assert len(frame) == 2
        assert frame['error'].iloc[0] == ''
        assert frame['oracle_error'].iloc[0] < 1e-5
        assert 'gamma' in frame['error'].iloc[1]
        assert any('gamma=-1 failed' in record.getMessage() for record in caplog.records)
        assert len(pd.read_csv(tmp_path / 'sweep_gamma.csv')) == 2

    def test_step_larger_than_horizon_is_recorded(self, tmp_path):
        frame, code = cmd_sweep(MATCHED, 'h', [0.001, 5.0], workers=1)
        assert code == EXIT_INVALID
        assert frame['error'].iloc[0] == ''
        assert 'SimulationError' in frame['error'].iloc[1]
        assert np.isnan(frame['observed_order'].iloc[1])
