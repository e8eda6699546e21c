"""
Scenario File Loader

Reads and writes YAML scenario files and turns them into Scenario objects.
Parse errors carry the YAML line number and the dotted field path.

Scenario file layout:
    name, description
    reference:  A_m + b_m, or tau (+ poles, b_m) for pole placement; x0
    agents:     list of {tau | A + b, x0, uncertainty, sign_kr}
    graph:      edges as [source, target] or [source, target, weight]
    controller: protocol, gamma, v, basis, regressor, adapt, initial_gains, nn
    simulation: horizon, step, Q, signal, uncertainty, disconnections
"""

import copy
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml

from adaptive_controllers import BASES, PROTOCOLS, REGRESSORS
from agent_dynamics import (AgentModel, ReferenceModel, ReferenceSignal, SinusoidalUncertainty,
                            ZeroUncertainty, make_vehicle_model, pad_initial_state, reference_from_vehicle,
                            sinusoidal_uncertainty)
from comm_graph import build_graph
from config import (DEFAULT_GAMMA, DEFAULT_HORIZON, DEFAULT_POLES, DEFAULT_Q_DIAG, DEFAULT_STEP, DEFAULT_V,
                    NN_INIT_SCALE, NN_SEED, NN_STEEPNESS, NN_WIDTH)
from platoon_simulator import ControllerSettings, Disconnection, Scenario
from sync_errors import ScenarioParseError

logger = logging.getLogger(__name__)

# Protocol names as they appear in scenario files and on the command line
PROTOCOL_ALIASES = {
    'aocm': 'aocm',
    'ocm': 'aocm',
    'optimal_control_modification': 'aocm',
    'adaptive_optimal_control_modification': 'aocm',
    'nn': 'nn',
    'neural': 'nn',
    'neural_network': 'nn',
    'ie': 'ie',
    'estimation': 'ie',
    'input_estimation': 'ie',
}

SWEEP_PARAMETERS = ('gamma', 'v', 'amplitude', 'h', 'horizon')


def normalize_protocol(name: str) -> str:
    """Normalize a protocol name or alias to aocm, nn or ie"""
    if not isinstance(name, str):
        raise ScenarioParseError(f"protocol must be a string, got {name!r}", field='controller.protocol')
    key = name.strip().lower().replace('-', '_').replace(' ', '_')
    if key not in PROTOCOL_ALIASES:
        raise ScenarioParseError(f"unknown protocol '{name}', expected one of {list(PROTOCOLS)}",
                                 field='controller.protocol')
    return PROTOCOL_ALIASES[key]


@dataclass
class ScenarioFile:
    """Validated, default-filled contents of a scenario file"""
    name: str
    description: str
    reference: Dict[str, Any]
    agents: List[Dict[str, Any]]
    edges: List[List[float]]
    controller: Dict[str, Any]
    simulation: Dict[str, Any]


# =============================================================================
# Parsing helpers
# =============================================================================

class _Document:
    """Raw YAML data plus its node tree for line lookups"""

    def __init__(self, text: str):
        try:
            self.root = yaml.compose(text, Loader=yaml.SafeLoader)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            problem = getattr(e, 'problem', None) or str(e)
            raise ScenarioParseError(f"invalid YAML: {problem}", line=mark.line + 1 if mark else None) from e

    def line(self, path: Sequence) -> Optional[int]:
        node, found = self.root, self.root
        for key in path:
            if isinstance(node, yaml.MappingNode):
                node = next((value for k, value in node.value if k.value == str(key)), None)
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                node = node.value[key]
            else:
                node = None
            if node is None:
                break
            found = node
        return found.start_mark.line + 1 if found is not None else None

    def error(self, message: str, path: Sequence) -> ScenarioParseError:
        dotted = '.'.join(str(p) for p in path)
        return ScenarioParseError(message, line=self.line(path), field=dotted)


def _mapping(doc: _Document, value, path) -> Dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise doc.error("expected a mapping", path)
    return value


def _number(doc: _Document, value, path) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise doc.error(f"expected a number, got {value!r}", path)
    return float(value)


def _integer(doc: _Document, value, path) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise doc.error(f"expected an integer, got {value!r}", path)
    return value


def _vector(doc: _Document, value, path) -> List[float]:
    if not isinstance(value, list) or not value:
        raise doc.error("expected a non-empty list of numbers", path)
    return [_number(doc, item, [*path, index]) for index, item in enumerate(value)]


def _matrix(doc: _Document, value, path) -> List[List[float]]:
    if not isinstance(value, list) or not value or not all(isinstance(row, list) for row in value):
        raise doc.error("expected a list of rows", path)
    rows = [_vector(doc, row, [*path, index]) for index, row in enumerate(value)]
    if len({len(row) for row in rows}) != 1:
        raise doc.error("matrix rows have different lengths", path)
    return rows


def _choice(doc: _Document, value, options, path) -> str:
    if value not in options:
        raise doc.error(f"expected one of {list(options)}, got {value!r}", path)
    return value


def _reject_unknown(doc: _Document, section: Dict, allowed: Sequence[str], path):
    for key in section:
        if key not in allowed:
            raise doc.error(f"unknown field '{key}'", [*path, key])


# =============================================================================
# Sections
# =============================================================================

def _parse_reference(doc: _Document, raw) -> Dict:
    path = ['reference']
    section = _mapping(doc, raw, path)
    _reject_unknown(doc, section, ('A_m', 'b_m', 'tau', 'poles', 'x0'), path)
    if ('A_m' in section) == ('tau' in section):
        raise doc.error("give either A_m or tau", path)
    reference = {
        'A_m': _matrix(doc, section['A_m'], [*path, 'A_m']) if 'A_m' in section else None,
        'b_m': _vector(doc, section['b_m'], [*path, 'b_m']) if 'b_m' in section else None,
        'tau': _number(doc, section['tau'], [*path, 'tau']) if 'tau' in section else None,
        'poles': _vector(doc, section.get('poles', list(DEFAULT_POLES)), [*path, 'poles']),
        'x0': _vector(doc, section.get('x0', [0.0]), [*path, 'x0']),
    }
    if reference['A_m'] is not None and reference['b_m'] is None:
        raise doc.error("b_m is required with A_m", path)
    return reference


def _parse_agents(doc: _Document, raw) -> List[Dict]:
    if not isinstance(raw, list) or not raw:
        raise doc.error("expected a non-empty list of agents", ['agents'])
    agents = []
    for index, entry in enumerate(raw):
        path = ['agents', index]
        entry = _mapping(doc, entry, path)
        _reject_unknown(doc, entry, ('tau', 'A', 'b', 'x0', 'uncertainty', 'sign_kr'), path)
        if ('tau' in entry) == ('A' in entry):
            raise doc.error("give either tau or A and b", path)
        if 'A' in entry and 'b' not in entry:
            raise doc.error("b is required with A", path)
        sign = entry.get('sign_kr')
        if sign is not None and _integer(doc, sign, [*path, 'sign_kr']) not in (-1, 1):
            raise doc.error("sign_kr must be 1 or -1", [*path, 'sign_kr'])
        agents.append({
            'tau': _number(doc, entry['tau'], [*path, 'tau']) if 'tau' in entry else None,
            'A': _matrix(doc, entry['A'], [*path, 'A']) if 'A' in entry else None,
            'b': _vector(doc, entry['b'], [*path, 'b']) if 'b' in entry else None,
            'x0': _vector(doc, entry.get('x0', [0.0]), [*path, 'x0']),
            'uncertainty': _number(doc, entry['uncertainty'], [*path, 'uncertainty']) if 'uncertainty' in entry else None,
            'sign_kr': sign,
        })
    return agents


def _parse_edges(doc: _Document, raw) -> List[List[float]]:
    path = ['graph']
    section = _mapping(doc, raw, path)
    _reject_unknown(doc, section, ('edges',), path)
    edges_raw = section.get('edges')
    if not isinstance(edges_raw, list):
        raise doc.error("expected a list of edges", [*path, 'edges'])
    edges = []
    for index, edge in enumerate(edges_raw):
        edge_path = [*path, 'edges', index]
        if not isinstance(edge, list) or len(edge) not in (2, 3):
            raise doc.error("edge must be [source, target] or [source, target, weight]", edge_path)
        source = _integer(doc, edge[0], [*edge_path, 0])
        target = _integer(doc, edge[1], [*edge_path, 1])
        weight = _number(doc, edge[2], [*edge_path, 2]) if len(edge) == 3 else 1.0
        edges.append([source, target, weight])
    return edges


def _parse_controller(doc: _Document, raw) -> Dict:
    path = ['controller']
    section = _mapping(doc, raw, path)
    _reject_unknown(doc, section, ('protocol', 'gamma', 'v', 'basis', 'regressor', 'adapt',
                                   'initial_gains', 'nn'), path)
    if 'protocol' not in section:
        raise doc.error("protocol is required", path)
    try:
        protocol = normalize_protocol(section['protocol'])
    except ScenarioParseError as e:
        raise doc.error(e.message, [*path, 'protocol']) from e
    adapt = section.get('adapt', True)
    if not isinstance(adapt, bool):
        raise doc.error("adapt must be true or false", [*path, 'adapt'])
    nn = _mapping(doc, section.get('nn'), [*path, 'nn'])
    _reject_unknown(doc, nn, ('width', 'steepness', 'seed', 'init_scale'), [*path, 'nn'])
    controller = {
        'protocol': protocol,
        'gamma': _number(doc, section.get('gamma', DEFAULT_GAMMA), [*path, 'gamma']),
        'v': _number(doc, section.get('v', DEFAULT_V), [*path, 'v']),
        'basis': _choice(doc, section.get('basis', 'sine'), tuple(BASES), [*path, 'basis']),
        'regressor': _choice(doc, section.get('regressor', 'own'), REGRESSORS, [*path, 'regressor']),
        'adapt': adapt,
        'initial_gains': _choice(doc, section.get('initial_gains', 'zero'), ('zero', 'matched'),
                                 [*path, 'initial_gains']),
        'nn_width': _integer(doc, nn.get('width', NN_WIDTH), [*path, 'nn', 'width']),
        'nn_steepness': _number(doc, nn.get('steepness', NN_STEEPNESS), [*path, 'nn', 'steepness']),
        'nn_seed': _integer(doc, nn.get('seed', NN_SEED), [*path, 'nn', 'seed']),
        'nn_init_scale': _number(doc, nn.get('init_scale', NN_INIT_SCALE), [*path, 'nn', 'init_scale']),
    }
    if controller['gamma'] <= 0:
        raise doc.error("gamma must be positive", [*path, 'gamma'])
    if controller['v'] < 0:
        raise doc.error("v must be non-negative", [*path, 'v'])
    return controller


def _parse_simulation(doc: _Document, raw, state_dim: int) -> Dict:
    path = ['simulation']
    section = _mapping(doc, raw, path)
    _reject_unknown(doc, section, ('horizon', 'step', 'Q', 'signal', 'uncertainty', 'disconnections'), path)

    q_raw = section.get('Q', list(DEFAULT_Q_DIAG))
    if isinstance(q_raw, list) and q_raw and not isinstance(q_raw[0], list):
        Q = np.diag(_vector(doc, q_raw, [*path, 'Q'])).tolist()
    else:
        Q = _matrix(doc, q_raw, [*path, 'Q'])
    if len(Q) != state_dim or len(Q[0]) != state_dim:
        raise doc.error(f"Q must be {state_dim} x {state_dim}", [*path, 'Q'])

    signal_raw = _mapping(doc, section.get('signal'), [*path, 'signal'])
    _reject_unknown(doc, signal_raw, ('kind', 'amplitude', 'omega', 'phase'), [*path, 'signal'])
    signal = {
        'kind': _choice(doc, signal_raw.get('kind', 'constant'), ('constant', 'sine'), [*path, 'signal', 'kind']),
        'amplitude': _number(doc, signal_raw.get('amplitude', 0.0), [*path, 'signal', 'amplitude']),
        'omega': _number(doc, signal_raw.get('omega', 1.0), [*path, 'signal', 'omega']),
        'phase': _number(doc, signal_raw.get('phase', 0.0), [*path, 'signal', 'phase']),
    }

    cuts_raw = section.get('disconnections', [])
    if not isinstance(cuts_raw, list):
        raise doc.error("expected a list of disconnections", [*path, 'disconnections'])
    cuts = []
    for index, cut in enumerate(cuts_raw):
        cut_path = [*path, 'disconnections', index]
        cut = _mapping(doc, cut, cut_path)
        _reject_unknown(doc, cut, ('edge', 'start', 'end'), cut_path)
        edge = cut.get('edge')
        if not isinstance(edge, list) or len(edge) != 2:
            raise doc.error("edge must be [source, target]", [*cut_path, 'edge'])
        start = _number(doc, cut.get('start', 0.0), [*cut_path, 'start'])
        end = _number(doc, cut.get('end', float('inf')), [*cut_path, 'end'])
        if end < start:
            raise doc.error("end precedes start", cut_path)
        cuts.append({'source': _integer(doc, edge[0], [*cut_path, 'edge', 0]),
                     'target': _integer(doc, edge[1], [*cut_path, 'edge', 1]),
                     'start': start, 'end': end})

    simulation = {
        'horizon': _number(doc, section.get('horizon', DEFAULT_HORIZON), [*path, 'horizon']),
        'step': _number(doc, section.get('step', DEFAULT_STEP), [*path, 'step']),
        'Q': Q,
        'signal': signal,
        'uncertainty': _number(doc, section.get('uncertainty', 0.0),
                               [*path, 'uncertainty']),
        'disconnections': cuts,
    }
    if simulation['step'] <= 0:
        raise doc.error("step must be positive", [*path, 'step'])
    if simulation['horizon'] < simulation['step']:
        raise doc.error("horizon must be at least one step", [*path, 'horizon'])
    return simulation


def parse_scenario_text(text: str) -> ScenarioFile:
    doc = _Document(text)
    data = doc.data
    if not isinstance(data, dict):
        raise ScenarioParseError("scenario must be a YAML mapping", line=1)
    _reject_unknown(doc, data, ('name', 'description', 'reference', 'agents', 'graph', 'controller',
                                'simulation'), [])
    for required in ('name', 'reference', 'agents', 'graph', 'controller'):
        if required not in data:
            raise ScenarioParseError(f"missing required section '{required}'", line=1, field=required)
    if not isinstance(data['name'], str) or not data['name']:
        raise doc.error("name must be a non-empty string", ['name'])

    reference = _parse_reference(doc, data['reference'])
    state_dim = len(reference['A_m']) if reference['A_m'] is not None else 3
    return ScenarioFile(
        name=data['name'],
        description=str(data.get('description', '') or ''),
        reference=reference,
        agents=_parse_agents(doc, data['agents']),
        edges=_parse_edges(doc, data['graph']),
        controller=_parse_controller(doc, data['controller']),
        simulation=_parse_simulation(doc, data.get('simulation'), state_dim),
    )


def parse_scenario(path) -> ScenarioFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioParseError(f"cannot read scenario file {path}: {e}") from e
    logger.debug(f"Parsing scenario {path}")
    return parse_scenario_text(text)


# =============================================================================
# Building
# =============================================================================

def build_reference(sf: ScenarioFile) -> ReferenceModel:
    reference = sf.reference
    signal = ReferenceSignal(**sf.simulation['signal'])
    if reference['tau'] is not None:
        return reference_from_vehicle(reference['tau'], poles=reference['poles'],
                                      b_m=reference['b_m'], signal=signal)
    return ReferenceModel(A_m=np.array(reference['A_m']), b_m=np.array(reference['b_m']), signal=signal)


def build_agent(sf: ScenarioFile, entry: Dict) -> AgentModel:
    amplitude = entry['uncertainty'] if entry['uncertainty'] is not None else sf.simulation['uncertainty']
    uncertainty = sinusoidal_uncertainty(amplitude)
    if entry['tau'] is not None:
        return make_vehicle_model(entry['tau'], uncertainty)
    return AgentModel(A=np.array(entry['A']), b=np.array(entry['b']), uncertainty=uncertainty)


def build_scenario(sf: ScenarioFile) -> Scenario:
    """Turn a parsed file into a Scenario; raises the graph and model errors"""
    graph = build_graph(len(sf.agents), sf.edges)
    reference = build_reference(sf)
    n = reference.state_dim
    agents = tuple(build_agent(sf, entry) for entry in sf.agents)
    overrides = tuple(entry['sign_kr'] for entry in sf.agents)
    return Scenario(
        name=sf.name,
        description=sf.description,
        graph=graph,
        reference=reference,
        agents=agents,
        initial_states=tuple(pad_initial_state(entry['x0'], n) for entry in sf.agents),
        reference_initial=pad_initial_state(sf.reference['x0'], n),
        controller=ControllerSettings(**sf.controller),
        Q=np.array(sf.simulation['Q'], dtype=float),
        horizon=sf.simulation['horizon'],
        step=sf.simulation['step'],
        disconnections=tuple(Disconnection(**cut) for cut in sf.simulation['disconnections']),
        sign_overrides=overrides if any(sign is not None for sign in overrides) else (),
    )


def load_scenario(path) -> Scenario:
    return build_scenario(parse_scenario(path))


# =============================================================================
# Writing
# =============================================================================

def _floats(array) -> List:
    return np.asarray(array, dtype=float).tolist()


def _amplitude(uncertainty) -> float:
    if isinstance(uncertainty, SinusoidalUncertainty):
        return float(uncertainty.amplitude)
    if isinstance(uncertainty, ZeroUncertainty):
        return 0.0
    raise ScenarioParseError(f"cannot serialize uncertainty {uncertainty!r}")


def scenario_to_file(scenario: Scenario) -> ScenarioFile:
    """Explicit-matrix ScenarioFile describing scenario"""
    settings = scenario.controller
    signal = scenario.reference.signal
    agents = []
    for index, agent in enumerate(scenario.agents):
        agents.append({
            'tau': agent.tau,
            'A': None if agent.tau is not None else _floats(agent.A),
            'b': None if agent.tau is not None else _floats(agent.b),
            'x0': _floats(scenario.initial_states[index]),
            'uncertainty': _amplitude(agent.uncertainty),
            'sign_kr': scenario.sign_overrides[index] if scenario.sign_overrides else None,
        })
    return ScenarioFile(
        name=scenario.name,
        description=scenario.description,
        reference={'A_m': _floats(scenario.reference.A_m), 'b_m': _floats(scenario.reference.b_m),
                   'tau': None, 'poles': list(DEFAULT_POLES), 'x0': _floats(scenario.reference_initial)},
        agents=agents,
        edges=[[int(j), int(i), float(w)] for j, i, w in scenario.graph.edges],
        controller={
            'protocol': settings.protocol, 'gamma': float(settings.gamma), 'v': float(settings.v),
            'basis': settings.basis, 'regressor': settings.regressor, 'adapt': settings.adapt,
            'initial_gains': settings.initial_gains, 'nn_width': settings.nn_width,
            'nn_steepness': float(settings.nn_steepness), 'nn_seed': settings.nn_seed,
            'nn_init_scale': float(settings.nn_init_scale),
        },
        simulation={
            'horizon': float(scenario.horizon), 'step': float(scenario.step), 'Q': _floats(scenario.Q),
            'signal': {'kind': signal.kind, 'amplitude': float(signal.amplitude),
                       'omega': float(signal.omega), 'phase': float(signal.phase)},
            'uncertainty': 0.0,
            'disconnections': [{'source': cut.source, 'target': cut.target, 'start': float(cut.start),
                                'end': float(cut.end)} for cut in scenario.disconnections],
        },
    )


def _without_none(entries: Dict) -> Dict:
    return {key: value for key, value in entries.items() if value is not None}


def file_to_document(sf: ScenarioFile) -> Dict:
    """Scenario file in the on-disk YAML layout"""
    controller = {key: value for key, value in sf.controller.items() if not key.startswith('nn_')}
    controller['nn'] = {key[3:]: value for key, value in sf.controller.items() if key.startswith('nn_')}
    simulation = copy.deepcopy(sf.simulation)
    simulation['disconnections'] = [
        {'edge': [cut['source'], cut['target']], 'start': cut['start'], 'end': cut['end']}
        for cut in sf.simulation['disconnections']]
    return {
        'name': sf.name,
        'description': sf.description,
        'reference': _without_none(sf.reference),
        'agents': [_without_none(entry) for entry in sf.agents],
        'graph': {'edges': [list(edge) for edge in sf.edges]},
        'controller': controller,
        'simulation': simulation,
    }


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(file_to_document(scenario_to_file(scenario)), sort_keys=False)


def write_scenario(scenario: Scenario, path) -> Path:
    path = Path(path)
    path.write_text(dump_scenario(scenario))
    return path


# =============================================================================
# Sweeps
# =============================================================================

def with_parameter(sf: ScenarioFile, parameter: str, value: float) -> ScenarioFile:
    """Copy of sf with one sweep parameter replaced"""
    if parameter not in SWEEP_PARAMETERS:
        raise ScenarioParseError(f"cannot sweep '{parameter}', expected one of {list(SWEEP_PARAMETERS)}")
    controller = dict(sf.controller)
    simulation = dict(sf.simulation)
    agents = [dict(entry) for entry in sf.agents]
    if parameter in ('gamma', 'v'):
        controller[parameter] = float(value)
    elif parameter == 'amplitude':
        simulation['uncertainty'] = float(value)
        for entry in agents:
            entry['uncertainty'] = None
    elif parameter == 'h':
        simulation['step'] = float(value)
    else:
        simulation['horizon'] = float(value)
    return replace(sf, controller=controller, simulation=simulation, agents=agents,
                   name=f"{sf.name}_{parameter}_{value:g}")
