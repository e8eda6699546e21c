"""
Communication Graph for Leader-Follower Platoons

Node 0 is the leader (the reference model); nodes 1..N are followers.
An edge (j, i, a_ij) means agent i receives the state and input of j.

Features:
- Validation of the leader-reachable, acyclic topology required by the adaptive laws
- Laplacian L = D - A with A[i, j] = a_ij for each edge j -> i
- Weighted in-degree, parent lists and a deterministic topological order
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import networkx as nx
import numpy as np

from sync_errors import (CycleDetected, IndexOutOfRange, InvalidGraph, InvalidWeight,
                         SelfLoop, UnreachableAgent)

logger = logging.getLogger(__name__)

LEADER = 0

Edge = Tuple[int, int, float]


@dataclass(frozen=True)
class CommGraph:
    """Weighted digraph over the leader (node 0) and N followers"""
    n_agents: int
    edges: Tuple[Edge, ...]
    leader_index: int = LEADER
    digraph: nx.DiGraph = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n_agents + 1))
        for source, target, weight in self.edges:
            graph.add_edge(source, target, weight=float(weight))
        object.__setattr__(self, 'digraph', graph)


def _normalize_edge(edge: Sequence) -> Edge:
    if len(edge) == 2:
        source, target = edge
        weight = 1.0
    elif len(edge) == 3:
        source, target, weight = edge
    else:
        raise InvalidGraph(f"edge {edge!r} must be (source, target) or (source, target, weight)")
    return int(source), int(target), float(weight)


def build_graph(n_agents: int, edges: Iterable[Sequence]) -> CommGraph:
    """
    Validate an edge list and build the communication graph.

    Edges may omit the weight, in which case it defaults to 1.0.
    Checks run in order: indices and weights, cycles, leader reachability.
    """
    if n_agents < 1:
        raise InvalidGraph(f"need at least one follower, got n_agents={n_agents}")

    normalized: List[Edge] = []
    seen = set()
    for edge in edges:
        source, target, weight = _normalize_edge(edge)
        for node in (source, target):
            if not 0 <= node <= n_agents:
                raise IndexOutOfRange(f"edge ({source}, {target}) references node {node} outside 0..{n_agents}")
        if source == target:
            raise SelfLoop(f"self-loop on node {source}")
        if target == LEADER:
            raise InvalidGraph(f"edge ({source}, {target}) points into the leader")
        if not np.isfinite(weight) or weight <= 0:
            raise InvalidWeight(f"edge ({source}, {target}) has non-positive weight {weight}")
        if (source, target) in seen:
            raise InvalidGraph(f"duplicate edge ({source}, {target})")
        seen.add((source, target))
        normalized.append((source, target, weight))

    graph = CommGraph(n_agents=n_agents, edges=tuple(normalized))

    if not nx.is_directed_acyclic_graph(graph.digraph):
        cycle = nx.find_cycle(graph.digraph)
        raise CycleDetected(f"cycle through {[u for u, _ in cycle]}")

    reached = set(nx.bfs_tree(graph.digraph, LEADER).nodes)
    missing = sorted(set(range(1, n_agents + 1)) - reached)
    if missing:
        raise UnreachableAgent(f"agents {missing} have no directed path from the leader")

    logger.debug(f"Built graph with {n_agents} followers and {len(normalized)} edges")
    return graph


def adjacency(graph: CommGraph) -> np.ndarray:
    """(N+1) x (N+1) weights; row i holds a_ij for every in-neighbor j of i"""
    nodes = list(range(graph.n_agents + 1))
    # to_numpy_array gives M[j, i] for edge j -> i
    return nx.to_numpy_array(graph.digraph, nodelist=nodes, weight='weight').T


def laplacian(graph: CommGraph) -> np.ndarray:
    """Laplacian L = D - A of size (N+1) x (N+1); row 0 is all zero"""
    weights = adjacency(graph)
    return np.diag(weights.sum(axis=1)) - weights


def _check_follower(graph: CommGraph, i: int):
    if not 1 <= i <= graph.n_agents:
        raise IndexOutOfRange(f"agent index {i} outside 1..{graph.n_agents}")


def in_neighbor_sum(graph: CommGraph, i: int) -> float:
    """Weighted in-degree a_bar_i = sum_j a_ij"""
    _check_follower(graph, i)
    return float(graph.digraph.in_degree(i, weight='weight'))


def parents(graph: CommGraph, i: int) -> List[Tuple[int, float]]:
    """Sorted (j, a_ij) pairs for every in-neighbor j of agent i"""
    _check_follower(graph, i)
    return sorted((int(j), float(w)) for j, _, w in graph.digraph.in_edges(i, data='weight'))


def topological_order(graph: CommGraph) -> List[int]:
    """Deterministic order with every parent before its children; the leader comes first"""
    return list(nx.lexicographical_topological_sort(graph.digraph))
