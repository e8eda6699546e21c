#!/usr/bin/env python3
"""
Platoon Synchronization Runner
Validates scenarios, runs adaptive synchronization simulations and sweeps one
parameter across scenario variants.

Features:
- validate: graph, reference, Q, sign-condition and matching checks with a per-check report
- run: full-resolution trajectory CSV, downsampled series CSV, metrics JSON and a scenario copy
- sweep: one process per value, per-run errors kept in an error column, convergence order for step sweeps
- Exit codes: 0 success, 2 validation failure, 3 divergence
"""

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from adaptive_controllers import ideal_gains
from agent_dynamics import ReferenceModel
from comm_graph import build_graph, parents
from config import (CSV_FLOAT_FORMAT, LOG_FILE, LOG_LEVEL, MATCHING_TOLERANCE, SERIES_DOWNSAMPLE,
                    SWEEP_WORKERS, ensure_dir, get_results_path, get_scenario_path)
from lyapunov_solver import check_sign_condition, is_positive_definite, solve_lyapunov
from platoon_simulator import Trajectory, metrics, run
from scenario_loader import (ScenarioFile, build_agent, build_reference, build_scenario, parse_scenario,
                             with_parameter, write_scenario)
from sync_errors import Diverged, ScenarioParseError, SynchronizationError

# Configure logging
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format='%(asctime)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(LOG_FILE),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3


# =============================================================================
# validate
# =============================================================================

def _check(report: List[Dict], name: str, passed: Optional[bool], detail: str):
    report.append({'check': name, 'passed': passed, 'detail': detail})


def validate_scenario(sf: ScenarioFile) -> List[Dict]:
    """Run every scenario check independently; a check is skipped (passed=None) when a prerequisite failed"""
    report: List[Dict] = []

    graph = None
    try:
        graph = build_graph(len(sf.agents), sf.edges)
        _check(report, 'graph', True, f"{graph.n_agents} followers, {len(graph.edges)} edges, leader-reachable DAG")
    except SynchronizationError as e:
        _check(report, 'graph', False, f"{type(e).__name__}: {e}")

    reference: Optional[ReferenceModel] = None
    try:
        reference = build_reference(sf)
        _check(report, 'reference', True, f"A_m eigenvalues {np.round(np.linalg.eigvals(reference.A_m), 4).tolist()}")
    except SynchronizationError as e:
        _check(report, 'reference', False, f"{type(e).__name__}: {e}")

    Q = np.array(sf.simulation['Q'], dtype=float)
    q_ok = is_positive_definite(Q)
    _check(report, 'Q', q_ok, "symmetric positive definite" if q_ok else "Q is not symmetric positive definite")

    agents = []
    try:
        agents = [build_agent(sf, entry) for entry in sf.agents]
        _check(report, 'agents', True, f"{len(agents)} agent models")
    except SynchronizationError as e:
        _check(report, 'agents', False, f"{type(e).__name__}: {e}")

    certificate = None
    if reference is not None and q_ok:
        try:
            certificate = solve_lyapunov(reference.A_m, Q)
            _check(report, 'lyapunov', True, f"residual {certificate.residual:.2e}")
        except SynchronizationError as e:
            _check(report, 'lyapunov', False, f"{type(e).__name__}: {e}")
    else:
        _check(report, 'lyapunov', None, "skipped: reference or Q invalid")

    dimensions_ok = False
    if reference is not None and agents:
        n = reference.state_dim
        mismatched = [index for index, agent in enumerate(agents, start=1)
                      if agent.state_dim != n or len(sf.agents[index - 1]['x0']) > n]
        dimensions_ok = not mismatched
        _check(report, 'dimensions', dimensions_ok,
               f"every agent has state dimension {n}" if dimensions_ok
               else f"agents {mismatched} differ from the reference dimension {n}")
    else:
        _check(report, 'dimensions', None, "skipped: reference or agents invalid")

    if certificate is not None and dimensions_ok and sf.controller['protocol'] in ('aocm', 'ie'):
        try:
            values = [check_sign_condition(agent.b, certificate, reference.A_m) for agent in agents]
            failing = [index for index, value in enumerate(values, start=1) if not value.holds]
            _check(report, 'sign_condition', not failing,
                   f"b^T P A_m^-1 b in [{min(v.value for v in values):.4g}, {max(v.value for v in values):.4g}]"
                   + (f"; violated by agents {failing}" if failing else ""))
        except SynchronizationError as e:
            _check(report, 'sign_condition', False, f"{type(e).__name__}: {e}")
    else:
        _check(report, 'sign_condition', None, "skipped: not required or prerequisites failed")

    if graph is not None and dimensions_ok:
        try:
            residuals = {}
            for index in range(1, graph.n_agents + 1):
                in_edges = parents(graph, index)
                models = [(reference.A_m, reference.b_m) if j == 0 else (agents[j - 1].A, agents[j - 1].b)
                          for j, _ in in_edges]
                ideal = ideal_gains(agents[index - 1], reference, models, [w for _, w in in_edges],
                                    sf.controller['regressor'])
                residuals[index] = ideal.residual
            worst = max(residuals.values())
            inexact = [index for index, value in residuals.items() if value > MATCHING_TOLERANCE]
            # inexact matching degrades the Lyapunov guarantee but does not block a run
            _check(report, 'matching', True,
                   f"max residual {worst:.2e}" + (f"; approximate for agents {inexact}" if inexact else ""))
        except SynchronizationError as e:
            _check(report, 'matching', False, f"{type(e).__name__}: {e}")
    else:
        _check(report, 'matching', None, "skipped: prerequisites failed")

    return report


def cmd_validate(path) -> Tuple[List[Dict], int]:
    try:
        sf = parse_scenario(path)
    except ScenarioParseError as e:
        report = [{'check': 'parse', 'passed': False, 'detail': str(e)}]
        return report, EXIT_INVALID
    report = [{'check': 'parse', 'passed': True, 'detail': sf.name}] + validate_scenario(sf)
    failed = any(entry['passed'] is False for entry in report)
    return report, EXIT_INVALID if failed else EXIT_OK


def print_validation(report: List[Dict]):
    for entry in report:
        icon = {True: '✅', False: '❌', None: '⏭️ '}[entry['passed']]
        print(f"{icon} {entry['check']}: {entry['detail']}")


# =============================================================================
# run
# =============================================================================

def trajectory_frame(trajectory: Trajectory) -> pd.DataFrame:
    """t, xm1..xmn, then a{i}_x1..a{i}_xn, a{i}_u, a{i}_err per follower"""
    n = trajectory.states.shape[2]
    columns = {'t': trajectory.times}
    for k in range(n):
        columns[f'xm{k + 1}'] = trajectory.reference_states[:, k]
    norms = trajectory.error_norms()
    for i in range(1, trajectory.n_agents + 1):
        states = trajectory.agent_states(i)
        for k in range(n):
            columns[f'a{i}_x{k + 1}'] = states[:, k]
        columns[f'a{i}_u'] = trajectory.inputs[:, i - 1]
        columns[f'a{i}_err'] = norms[:, i - 1]
    return pd.DataFrame(columns)


def save_run_outputs(trajectory: Trajectory, report: Dict, out_dir: Path) -> Dict[str, Path]:
    ensure_dir(out_dir)
    frame = trajectory_frame(trajectory)
    paths = {
        'trajectory': out_dir / 'trajectory.csv',
        'series': out_dir / 'series.csv',
        'metrics': out_dir / 'metrics.json',
    }
    frame.to_csv(paths['trajectory'], index=False, float_format=CSV_FLOAT_FORMAT)
    frame.iloc[::SERIES_DOWNSAMPLE].to_csv(paths['series'], index=False, float_format=CSV_FLOAT_FORMAT)
    with open(paths['metrics'], 'w') as f:
        json.dump(report, f, indent=2)
    return paths


def cmd_run(path, out_dir=None, decimate: int = 1, horizon: Optional[float] = None,
            record_lyapunov: bool = False) -> Tuple[Dict, int]:
    """Validate, integrate and write outputs; returns (summary, exit code)"""
    report, code = cmd_validate(path)
    if code != EXIT_OK:
        print_validation(report)
        return {'success': False, 'errors': [e['detail'] for e in report if e['passed'] is False]}, code

    sf = parse_scenario(path)
    if horizon is not None:
        sf = replace(with_parameter(sf, 'horizon', horizon), name=sf.name)
    try:
        scenario = build_scenario(sf)
    except SynchronizationError as e:
        logger.error(f"Could not build scenario: {e}")
        return {'success': False, 'errors': [str(e)]}, EXIT_INVALID

    out_dir = Path(out_dir) if out_dir else get_results_path(scenario.name)
    logger.info(f"Running '{scenario.name}' (T={scenario.horizon}, h={scenario.step}) -> {out_dir}")
    try:
        trajectory = run(scenario, decimate=decimate, record_lyapunov=record_lyapunov)
    except Diverged as e:
        logger.error(f"Scenario '{scenario.name}' diverged at t={e.time:.4g}")
        return {'success': False, 'errors': [str(e)], 'diverged_at': e.time}, EXIT_DIVERGED
    except SynchronizationError as e:
        logger.error(f"Scenario '{scenario.name}' could not run: {e}")
        return {'success': False, 'errors': [f"{type(e).__name__}: {e}"]}, EXIT_INVALID

    report_dict = metrics(trajectory).to_dict()
    report_dict['scenario'] = scenario.name
    report_dict['disconnections'] = trajectory.disconnection_log
    paths = save_run_outputs(trajectory, report_dict, ensure_dir(out_dir))
    write_scenario(scenario, Path(out_dir) / 'scenario.yaml')
    summary = {'success': True, 'errors': [], 'outputs': {k: str(v) for k, v in paths.items()},
               'metrics': report_dict}
    return summary, EXIT_OK


# =============================================================================
# sweep
# =============================================================================

def _run_sweep_point(sf: ScenarioFile, parameter: str, value: float) -> Dict:
    """One sweep row; divergence and per-run errors are recorded instead of raised"""
    row = {'parameter': parameter, 'value': value, 'diverged': False, 'diverged_at': np.nan,
           'max_final_rms': np.nan, 'max_sup_error': np.nan, 'max_abs_input': np.nan, 'oracle_error': np.nan,
           'error': ''}
    try:
        trajectory = run(build_scenario(with_parameter(sf, parameter, value)))
    except Diverged as e:
        row.update(diverged=True, diverged_at=e.time)
        return row
    except SynchronizationError as e:
        row.update(error=f"{type(e).__name__}: {e}")
        return row
    report = metrics(trajectory)
    row.update(
        max_final_rms=max(m.final_rms for m in report.agents),
        max_sup_error=max(m.sup_error for m in report.agents),
        max_abs_input=max(m.max_abs_input for m in report.agents),
        oracle_error=report.oracle_error if report.oracle_error is not None else np.nan,
    )
    return row


def observed_order(steps: np.ndarray, errors: np.ndarray) -> np.ndarray:
    """log(e_k / e_{k+1}) / log(h_k / h_{k+1}) for consecutive step sizes; first entry is NaN"""
    order = np.full(len(steps), np.nan)
    for k in range(1, len(steps)):
        if errors[k] > 0 and errors[k - 1] > 0 and steps[k] != steps[k - 1]:
            order[k] = np.log(errors[k - 1] / errors[k]) / np.log(steps[k - 1] / steps[k])
    return order


def cmd_sweep(path, parameter: str, values: List[float], out_dir=None,
              workers: int = SWEEP_WORKERS) -> Tuple[pd.DataFrame, int]:
    report, code = cmd_validate(path)
    if code != EXIT_OK:
        print_validation(report)
        return pd.DataFrame(), code

    sf = parse_scenario(path)
    columns = ['parameter', 'value', 'diverged', 'diverged_at', 'max_final_rms', 'max_sup_error',
               'max_abs_input', 'oracle_error', 'error']
    if not values:
        logger.info("Empty sweep: nothing to run")
        frame = pd.DataFrame(columns=columns)
    else:
        try:
            with_parameter(sf, parameter, values[0])
        except ScenarioParseError as e:
            logger.error(str(e))
            return pd.DataFrame(columns=columns), EXIT_INVALID
        logger.info(f"Sweeping {parameter} over {values} with {min(workers, len(values))} workers")
        with ProcessPoolExecutor(max_workers=max(1, min(workers, len(values)))) as executor:
            rows = list(executor.map(_run_sweep_point, [sf] * len(values), [parameter] * len(values), values))
        frame = pd.DataFrame(rows, columns=columns)
        for row in rows:
            if row['error']:
                logger.warning(f"{parameter}={row['value']:g} failed: {row['error']}")

    if parameter == 'h':
        frame['observed_order'] = observed_order(frame['value'].to_numpy(dtype=float),
                                                 frame['oracle_error'].to_numpy(dtype=float))

    if out_dir is not None:
        ensure_dir(out_dir)
        frame.to_csv(Path(out_dir) / f'sweep_{parameter}.csv', index=False, float_format=CSV_FLOAT_FORMAT)

    if frame['diverged'].astype(bool).any():
        code = EXIT_DIVERGED
    elif frame['error'].astype(bool).any():
        code = EXIT_INVALID
    else:
        code = EXIT_OK
    return frame, code


# =============================================================================
# CLI
# =============================================================================

def parse_values(text: str) -> List[float]:
    return [float(item) for item in text.split(',') if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Distributed adaptive synchronization of vehicle platoons')
    subparsers = parser.add_subparsers(dest='command', required=True)

    validate_parser = subparsers.add_parser('validate', help='Check a scenario file without running it')
    validate_parser.add_argument('scenario', help='Scenario file or bundled scenario name')

    run_parser = subparsers.add_parser('run', help='Simulate a scenario and write results')
    run_parser.add_argument('scenario', help='Scenario file or bundled scenario name')
    run_parser.add_argument('--out', help='Output directory (default: results/<scenario name>)')
    run_parser.add_argument('--decimate', type=int, default=1, help='Keep every k-th integration step')
    run_parser.add_argument('--horizon', type=float, help='Override the simulation horizon')
    run_parser.add_argument('--lyapunov', action='store_true', help='Record the composite Lyapunov value')

    sweep_parser = subparsers.add_parser('sweep', help='Run one scenario across parameter values')
    sweep_parser.add_argument('scenario', help='Scenario file or bundled scenario name')
    sweep_parser.add_argument('--param', required=True, choices=['gamma', 'v', 'amplitude', 'h', 'horizon'])
    sweep_parser.add_argument('--values', default='', help='Comma-separated values')
    sweep_parser.add_argument('--out', help='Directory for sweep_<param>.csv')
    sweep_parser.add_argument('--workers', type=int, default=SWEEP_WORKERS, help='Parallel processes')
    return parser


def dispatch(args: argparse.Namespace) -> int:
    path = get_scenario_path(args.scenario)

    if args.command == 'validate':
        report, code = cmd_validate(path)
        print_validation(report)
        print(f"\n{'✅ Scenario is valid' if code == EXIT_OK else '❌ Scenario is invalid'}")
        return code

    if args.command == 'run':
        print(f"🚗 PLATOON SYNCHRONIZATION RUN: {path}")
        print("=" * 50)
        summary, code = cmd_run(path, args.out, decimate=args.decimate, horizon=args.horizon,
                                record_lyapunov=args.lyapunov)
        if summary['success']:
            for entry in summary['metrics']['agents']:
                print(f"  Agent {entry['agent']}: sup |e| {entry['sup_error']:.4f}, "
                      f"final RMS {entry['final_rms']:.4f}, max |u| {entry['max_abs_input']:.2f}")
            for name, output in summary['outputs'].items():
                print(f"📁 {name}: {output}")
            print("✅ Run complete")
        else:
            for error in summary['errors']:
                print(f"❌ {error}")
        return code

    values = parse_values(args.values)
    print(f"📊 SWEEP {args.param}: {values}")
    print("=" * 50)
    frame, code = cmd_sweep(path, args.param, values, args.out, workers=args.workers)
    if not frame.empty:
        print(frame.to_string(index=False))
    print('✅ Sweep complete' if code == EXIT_OK else f'❌ Sweep finished with exit code {code}')
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except SynchronizationError as e:
        # any toolkit error left unhandled still maps to the validation exit code
        logger.error(f"{type(e).__name__}: {e}")
        print(f"❌ {type(e).__name__}: {e}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
