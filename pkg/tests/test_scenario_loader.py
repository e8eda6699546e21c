"""Tests for scenario file parsing, building and writing."""

import numpy as np
import pytest

from comm_graph import parents
from config import BUNDLED_SCENARIOS
from scenario_loader import (build_scenario, dump_scenario, load_scenario, normalize_protocol,
                             parse_scenario, parse_scenario_text, scenario_to_file, with_parameter)
from sync_errors import CycleDetected, ScenarioParseError, SelfLoop

MINIMAL = """\
name: minimal
reference:
  A_m: [[-1.0]]
  b_m: [1.0]
agents:
  - {A: [[0.0]], b: [2.0], x0: [1.0]}
graph:
  edges:
    - [0, 1]
controller:
  protocol: aocm
  basis: constant
simulation:
  Q: [1.0]
  horizon: 0.1
"""


class TestProtocolNames:
    @pytest.mark.parametrize("alias, expected", [
        ('AOCM', 'aocm'),
        ('optimal-control-modification', 'aocm'),
        ('Neural Network', 'nn'),
        ('input_estimation', 'ie'),
    ])
    def test_aliases(self, alias, expected):
        assert normalize_protocol(alias) == expected

    def test_unknown_protocol(self):
        with pytest.raises(ScenarioParseError):
            normalize_protocol('mpc')


class TestParse:
    @pytest.mark.parametrize("name", sorted(BUNDLED_SCENARIOS))
    def test_bundled_scenarios_build(self, name):
        scenario = load_scenario(BUNDLED_SCENARIOS[name])
        assert scenario.name == name
        assert scenario.graph.n_agents == len(scenario.agents)

    def test_platoon_scenario_contents(self):
        scenario = load_scenario(BUNDLED_SCENARIOS['platoon_aocm'])
        assert [agent.tau for agent in scenario.agents] == [1.0, 0.4, 0.25, 0.45, 0.5, 1.25]
        np.testing.assert_array_equal(scenario.initial_states[2], [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(scenario.reference_initial, [1.0, -1.0, 0.0])
        np.testing.assert_array_equal(np.diag(scenario.Q), [10.0, 1.0, 1.0])
        assert scenario.controller.gamma == 10.0
        assert scenario.reference.signal(np.pi / 2) == pytest.approx(2.0)
        assert scenario.agents[0].uncertainty(np.array([0.0, 0.0, np.pi / 2])) == pytest.approx(0.1)

    def test_input_estimation_scenario_disconnects_edge(self):
        scenario = load_scenario(BUNDLED_SCENARIOS['platoon_ie'])
        assert scenario.controller.protocol == 'ie'
        (cut,) = scenario.disconnections
        assert (cut.source, cut.target) == (2, 4)
        assert cut.active(0.0) and cut.active(29.9)

    def test_merge_scenario_has_a_two_parent_agent(self):
        scenario = load_scenario(BUNDLED_SCENARIOS['platoon_merge'])
        assert [j for j, _ in parents(scenario.graph, 5)] == [3, 4]
        assert scenario.controller.regressor == 'neighbor'

    def test_minimal_explicit_matrices(self):
        sf = parse_scenario_text(MINIMAL)
        assert sf.edges == [[0, 1, 1.0]]
        scenario = build_scenario(sf)
        assert scenario.state_dim == 1
        assert scenario.step == pytest.approx(1e-3)

    def test_missing_protocol_reports_line(self):
        text = MINIMAL.replace("  protocol: aocm\n", "")
        with pytest.raises(ScenarioParseError) as excinfo:
            parse_scenario_text(text)
        assert excinfo.value.field == 'controller'
        assert excinfo.value.line == 11

    def test_wrong_type_reports_field_and_line(self):
        text = MINIMAL.replace("horizon: 0.1", "horizon: soon")
        with pytest.raises(ScenarioParseError) as excinfo:
            parse_scenario_text(text)
        assert excinfo.value.field == 'simulation.horizon'
        assert excinfo.value.line == 15
        assert "line 15" in str(excinfo.value)

    def test_unknown_field(self):
        text = MINIMAL.replace("  basis: constant", "  basis: constant\n  gain: 3")
        with pytest.raises(ScenarioParseError) as excinfo:
            parse_scenario_text(text)
        assert excinfo.value.field == 'controller.gain'

    def test_invalid_yaml(self):
        with pytest.raises(ScenarioParseError) as excinfo:
            parse_scenario_text("name: [unclosed\n")
        assert excinfo.value.line is not None

    def test_graph_errors_surface_on_build(self):
        text = MINIMAL.replace("    - [0, 1]\n", "    - [0, 1]\n    - [1, 1]\n")
        sf = parse_scenario_text(text)
        with pytest.raises(SelfLoop):
            build_scenario(sf)

    def test_cycle_on_build(self):
        text = MINIMAL.replace("  - {A: [[0.0]], b: [2.0], x0: [1.0]}\n",
                               "  - {A: [[0.0]], b: [2.0], x0: [1.0]}\n  - {A: [[0.0]], b: [2.0]}\n")
        text = text.replace("    - [0, 1]\n", "    - [0, 1]\n    - [1, 2]\n    - [2, 1]\n")
        with pytest.raises(CycleDetected):
            build_scenario(parse_scenario_text(text))


class TestWrite:
    @pytest.mark.parametrize("name", sorted(BUNDLED_SCENARIOS))
    def test_dump_and_reparse_is_structurally_identical(self, name):
        original = load_scenario(BUNDLED_SCENARIOS[name])
        reparsed = build_scenario(parse_scenario_text(dump_scenario(original)))
        assert scenario_to_file(reparsed) == scenario_to_file(original)

    def test_sweep_override(self):
        sf = parse_scenario(BUNDLED_SCENARIOS['platoon_aocm'])
        changed = with_parameter(sf, 'amplitude', 0.3)
        scenario = build_scenario(changed)
        assert all(agent.uncertainty.amplitude == 0.3 for agent in scenario.agents)
        assert sf.simulation['uncertainty'] == 0.1
        assert with_parameter(sf, 'h', 0.002).simulation['step'] == 0.002
        with pytest.raises(ScenarioParseError):
            with_parameter(sf, 'tau', 1.0)
