"""Network topology: nodes, edges, neighborhoods, edge signs, and random
topology generation.

Nodes and edge indices are 1-based throughout so that the sign convention
``c_mk`` reads exactly as in the consensus formulation: +1 at the smaller
endpoint of an edge, -1 at the larger, 0 elsewhere.
"""

from __future__ import annotations

import json
from collections import deque
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, PreconditionError

#: Edge list reproducing the drawn sparse 8-node network: two chains joined
#: through the {1,8} edge.
_SPARSE_8 = ((1, 2), (2, 3), (3, 4), (4, 5), (6, 7), (7, 8), (1, 8))

CANNED_KINDS = ("path-ring-sparse", "complete", "paper-random")


class NetworkGraph:
    """An undirected connected graph over nodes ``1..K``.

    Attributes
    ----------
    node_count : int
        Number of nodes K.
    edges : tuple[tuple[int, int], ...]
        M edges as ordered pairs (k, q) with k < q, 1-indexed.
    neighbors : dict[int, tuple[int, ...]]
        Sorted neighbor ids per node.
    incident_edges : dict[int, tuple[int, ...]]
        Sorted 1-based edge indices incident to each node.
    """

    def __init__(self, node_count: int, edges):
        if node_count < 1:
            raise ConfigurationError(f"node_count must be >= 1, got {node_count}")
        seen = set()
        clean = []
        for pair in edges:
            k, q = int(pair[0]), int(pair[1])
            if k == q:
                raise ConfigurationError(f"self-loop at node {k}")
            if not (1 <= k <= node_count and 1 <= q <= node_count):
                raise ConfigurationError(f"edge ({k},{q}) out of range 1..{node_count}")
            if k > q:
                k, q = q, k
            if (k, q) in seen:
                raise ConfigurationError(f"duplicate edge ({k},{q})")
            seen.add((k, q))
            clean.append((k, q))
        self.node_count = node_count
        self.edges = tuple(clean)
        nbrs: dict[int, list[int]] = {k: [] for k in range(1, node_count + 1)}
        incident: dict[int, list[int]] = {k: [] for k in range(1, node_count + 1)}
        for m, (k, q) in enumerate(self.edges, start=1):
            nbrs[k].append(q)
            nbrs[q].append(k)
            incident[k].append(m)
            incident[q].append(m)
        self.neighbors = {k: tuple(sorted(v)) for k, v in nbrs.items()}
        self.incident_edges = {k: tuple(v) for k, v in incident.items()}
        if not self._connected():
            raise ConfigurationError("graph is not connected")

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def _connected(self) -> bool:
        if self.node_count == 1:
            return True
        seen = {1}
        queue = deque([1])
        while queue:
            k = queue.popleft()
            for q in self.neighbors[k]:
                if q not in seen:
                    seen.add(q)
                    queue.append(q)
        return len(seen) == self.node_count

    def diameter(self) -> int:
        """Longest shortest path, by BFS from every node."""
        best = 0
        for src in range(1, self.node_count + 1):
            dist = {src: 0}
            queue = deque([src])
            while queue:
                k = queue.popleft()
                for q in self.neighbors[k]:
                    if q not in dist:
                        dist[q] = dist[k] + 1
                        queue.append(q)
            best = max(best, max(dist.values()))
        return best

    def __repr__(self) -> str:
        return f"NetworkGraph(K={self.node_count}, M={self.edge_count})"

    def to_json_dict(self) -> dict:
        return {"K": self.node_count, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "NetworkGraph":
        try:
            node_count = int(payload["K"])
            edges = payload["edges"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed topology document: {exc}") from exc
        return cls(node_count, edges)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "NetworkGraph":
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid topology JSON in {path}: {exc}") from exc
        return cls.from_json_dict(payload)


def edge_sign(graph: NetworkGraph, m: int, k: int) -> int:
    """Sign c_mk of node ``k`` in edge ``m``: +1 at the smaller endpoint,
    -1 at the larger, 0 if not incident."""
    if not 1 <= m <= graph.edge_count:
        raise IndexError(f"edge index {m} out of range 1..{graph.edge_count}")
    if not 1 <= k <= graph.node_count:
        raise IndexError(f"node index {k} out of range 1..{graph.node_count}")
    lo, hi = graph.edges[m - 1]
    if k == lo:
        return 1
    if k == hi:
        return -1
    return 0


def generate_random_topology(node_count: int, extra_edge_prob: float,
                             seed: int) -> NetworkGraph:
    """Random connected topology: a random-attachment spanning tree plus each
    non-tree pair independently with probability ``extra_edge_prob``.

    Deterministic for a given seed.
    """
    if node_count < 1:
        raise ConfigurationError(f"node_count must be >= 1, got {node_count}")
    if not 0.0 <= extra_edge_prob <= 1.0:
        raise ConfigurationError(f"extra_edge_prob must be in [0,1], got {extra_edge_prob}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(node_count) + 1
    edges = set()
    for i in range(1, node_count):
        j = int(order[int(rng.integers(0, i))])
        a, b = sorted((int(order[i]), j))
        edges.add((a, b))
    for a in range(1, node_count + 1):
        for b in range(a + 1, node_count + 1):
            if (a, b) not in edges and rng.random() < extra_edge_prob:
                edges.add((a, b))
    return NetworkGraph(node_count, sorted(edges))


def canned_topology(kind: str, node_count: int, seed: int = 0) -> NetworkGraph:
    """One of the three benchmark topologies.

    ``complete`` is the full graph, ``path-ring-sparse`` is the drawn
    sparse 8-node network (a plain path for other sizes), ``paper-random``
    is a random spanning tree with extra edges at probability 1/2.
    """
    if node_count < 2:
        raise ConfigurationError(f"canned topologies need K >= 2, got {node_count}")
    if kind == "complete":
        edges = [(a, b) for a in range(1, node_count + 1)
                 for b in range(a + 1, node_count + 1)]
        return NetworkGraph(node_count, edges)
    if kind == "path-ring-sparse":
        if node_count == 8:
            return NetworkGraph(8, _SPARSE_8)
        return NetworkGraph(node_count, [(k, k + 1) for k in range(1, node_count)])
    if kind == "paper-random":
        return generate_random_topology(node_count, 0.5, seed)
    raise ConfigurationError(f"unknown topology kind {kind!r}; expected one of {CANNED_KINDS}")
