"""Tests for communication graph validation and Laplacian construction."""

import numpy as np
import pytest

from comm_graph import (CommGraph, adjacency, build_graph, in_neighbor_sum, laplacian, parents,
                        topological_order)
from sync_errors import (CycleDetected, IndexOutOfRange, InvalidGraph, InvalidWeight, SelfLoop,
                         UnreachableAgent)

PLATOON_EDGES = [(0, 1), (1, 2), (2, 3), (2, 4), (3, 5), (4, 6)]


class TestBuildGraph:
    def test_platoon_topology_is_valid(self):
        graph = build_graph(6, PLATOON_EDGES)
        assert graph.n_agents == 6
        assert all(weight == 1.0 for _, _, weight in graph.edges)

    def test_cycle_is_rejected(self):
        with pytest.raises(CycleDetected):
            build_graph(2, [(0, 1), (1, 2), (2, 1)])

    def test_cycle_reported_before_unreachability(self):
        with pytest.raises(CycleDetected):
            build_graph(2, [(1, 2), (2, 1)])

    def test_unreachable_agent(self):
        with pytest.raises(UnreachableAgent):
            build_graph(3, [(0, 1), (1, 2)])

    def test_self_loop(self):
        with pytest.raises(SelfLoop):
            build_graph(2, [(0, 1), (1, 1), (1, 2)])

    @pytest.mark.parametrize("weight", [0.0, -1.0])
    def test_non_positive_weight(self, weight):
        with pytest.raises(InvalidWeight):
            build_graph(1, [(0, 1, weight)])

    def test_index_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            build_graph(2, [(0, 1), (1, 3)])

    def test_edge_into_leader(self):
        with pytest.raises(InvalidGraph):
            build_graph(1, [(0, 1), (1, 0)])

    def test_errors_share_base_class(self):
        with pytest.raises(InvalidGraph):
            build_graph(2, [(0, 1)])


class TestLaplacian:
    def test_single_edge(self):
        graph = build_graph(1, [(0, 1)])
        np.testing.assert_array_equal(laplacian(graph), [[0.0, 0.0], [-1.0, 1.0]])

    def test_empty_edge_set_gives_zero_matrix(self):
        graph = CommGraph(n_agents=2, edges=())
        np.testing.assert_array_equal(laplacian(graph), np.zeros((3, 3)))

    def test_rows_sum_to_zero_and_leader_row_is_zero(self):
        graph = build_graph(3, [(0, 1, 2.0), (0, 2), (1, 2, 0.5), (2, 3, 1.5)])
        L = laplacian(graph)
        np.testing.assert_allclose(L.sum(axis=1), 0.0, atol=1e-15)
        np.testing.assert_array_equal(L[0], 0.0)
        assert L[2, 2] == pytest.approx(1.5)
        assert L[2, 1] == pytest.approx(-0.5)

    def test_adjacency_rows_hold_incoming_weights(self):
        graph = build_graph(3, [(0, 1), (1, 3), (2, 3, 0.5), (0, 2, 2.0)])
        A = adjacency(graph)
        assert A.shape == (4, 4)
        assert A[3, 1] == pytest.approx(1.0)
        assert A[3, 2] == pytest.approx(0.5)
        assert A[2, 0] == pytest.approx(2.0)
        np.testing.assert_array_equal(A[0], 0.0)
        np.testing.assert_allclose(np.diag(A.sum(axis=1)) - A, laplacian(graph))


class TestNeighbors:
    def test_in_neighbor_sum(self):
        graph = build_graph(2, [(0, 1), (0, 2, 2.0), (1, 2, 0.5)])
        assert in_neighbor_sum(graph, 2) == pytest.approx(2.5)
        assert in_neighbor_sum(graph, 1) == pytest.approx(1.0)

    def test_in_neighbor_sum_rejects_leader_index(self):
        graph = build_graph(1, [(0, 1)])
        with pytest.raises(IndexOutOfRange):
            in_neighbor_sum(graph, 0)

    def test_parents_sorted(self):
        graph = build_graph(2, [(1, 2, 0.5), (0, 1), (0, 2, 2.0)])
        assert parents(graph, 2) == [(0, 2.0), (1, 0.5)]

    def test_topological_order_puts_parents_first(self):
        graph = build_graph(6, PLATOON_EDGES)
        order = topological_order(graph)
        assert order[0] == 0
        position = {node: index for index, node in enumerate(order)}
        for source, target in PLATOON_EDGES:
            assert position[source] < position[target]
