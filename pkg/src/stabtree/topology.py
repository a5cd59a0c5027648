"""Rooted port-numbered graphs and the ground-truth distance oracles.

The network object is the only place where global knowledge (distances,
eccentricity, components) lives.  The protocol layer never sees any of it;
nodes read neighbor states through ports alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations


class GraphError(ValueError):
    """Raised for malformed or unsupported graph descriptions."""


@dataclass(frozen=True)
class Network:
    """Immutable rooted undirected graph with locally unique port numbers.

    ``adjacency[v]`` is an ordered tuple of ``(port, neighbor)`` pairs,
    sorted by port.  Ports are local labels only: edge (u, v) may sit on
    port 3 at u and port 0 at v.
    """

    node_count: int
    root: int
    adjacency: tuple[tuple[tuple[int, int], ...], ...]

    def __post_init__(self):
        if self.node_count < 2:
            raise GraphError("need at least 2 nodes")
        if not 0 <= self.root < self.node_count:
            raise GraphError(f"root {self.root} out of range")
        seen_edges = set()
        for v, plist in enumerate(self.adjacency):
            ports = [p for p, _ in plist]
            if len(set(ports)) != len(ports):
                raise GraphError(f"duplicate port at node {v}")
            if list(plist) != sorted(plist):
                raise GraphError(f"ports of node {v} not sorted")
            for _, u in plist:
                if not 0 <= u < self.node_count:
                    raise GraphError(f"neighbor {u} out of range at node {v}")
                if u == v:
                    raise GraphError(f"self-loop at node {v}")
                if (v, u) in seen_edges:
                    raise GraphError(f"duplicate edge ({v},{u})")
                seen_edges.add((v, u))
        for v, u in list(seen_edges):
            if (u, v) not in seen_edges:
                raise GraphError(f"edge ({v},{u}) missing reverse direction")
        if self._component(self.root, removed=None) != set(range(self.node_count)):
            raise GraphError("graph is not connected")

    # -- helpers ---------------------------------------------------------

    def neighbors(self, v: int) -> tuple[int, ...]:
        return tuple(u for _, u in self.adjacency[v])

    def ports(self, v: int) -> tuple[int, ...]:
        return tuple(p for p, _ in self.adjacency[v])

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def neighbor_at(self, v: int, port: int) -> int:
        for p, u in self.adjacency[v]:
            if p == port:
                return u
        raise KeyError(f"node {v} has no port {port}")

    def edges(self) -> list[tuple[int, int]]:
        return [(v, u) for v in range(self.node_count)
                for _, u in self.adjacency[v] if v < u]

    def _component(self, start: int, removed: int | None) -> set[int]:
        seen = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for u in self.neighbors(v):
                if u != removed and u not in seen:
                    seen.add(u)
                    stack.append(u)
        return seen

    def to_document(self) -> dict:
        """Round-trippable graph description (see `load_network`)."""
        return {
            "nodes": self.node_count,
            "root": self.root,
            "edges": self.edges(),
            "ports": [list(map(list, plist)) for plist in self.adjacency],
        }


@dataclass(frozen=True)
class DistanceOracle:
    """Exact hop distances from the root, plus the shortest-path DAG."""

    dist: tuple[int, ...]
    eccentricity: int
    preds: tuple[frozenset[int], ...]  # preds[v]: neighbors one hop closer to root


@dataclass(frozen=True)
class RComponents:
    """Partition of the non-root nodes by connectivity in G minus the root."""

    assignment: dict[int, int] = field(hash=False)
    count: int = 0

    def same(self, v: int, u: int) -> bool:
        return self.assignment[v] == self.assignment[u]

    def members(self, cid: int) -> set[int]:
        return {v for v, c in self.assignment.items() if c == cid}


def build_network(node_count: int, root: int, edges: list[tuple[int, int]],
                  ports: list[list[tuple[int, int]]] | None = None) -> Network:
    """Assemble a Network; ports default to 0,1,2,... in edge listing order."""
    if ports is None:
        adj: list[list[tuple[int, int]]] = [[] for _ in range(node_count)]
        for a, b in edges:
            if not (0 <= a < node_count and 0 <= b < node_count):
                raise GraphError(f"edge ({a},{b}) out of range")
            adj[a].append((len(adj[a]), b))
            adj[b].append((len(adj[b]), a))
        adjacency = tuple(tuple(plist) for plist in adj)
    else:
        adjacency = tuple(tuple(sorted((int(p), int(u)) for p, u in plist))
                          for plist in ports)
    return Network(node_count=node_count, root=root, adjacency=adjacency)


def load_network(text_or_doc) -> Network:
    """Parse a graph-description document (JSON text or an already-parsed dict).

    Fields: ``nodes`` (count), ``root`` (index), ``edges`` (list of pairs),
    optional ``ports`` (per-node list of (port, neighbor) pairs).
    """
    if isinstance(text_or_doc, str):
        try:
            doc = json.loads(text_or_doc)
        except json.JSONDecodeError as exc:
            raise GraphError(f"malformed graph document: {exc}") from exc
    else:
        doc = text_or_doc
    if not isinstance(doc, dict):
        raise GraphError("graph document must be a JSON object")
    for key in ("nodes", "root", "edges"):
        if key not in doc:
            raise GraphError(f"graph document missing field {key!r}")
    edges = [(int(a), int(b)) for a, b in doc["edges"]]
    ports = doc.get("ports")
    if ports is not None:
        ports = [[(int(p), int(u)) for p, u in plist] for plist in ports]
    return build_network(int(doc["nodes"]), int(doc["root"]), edges, ports)


def bfs_oracle(net: Network) -> DistanceOracle:
    """Hop distances from the root, root eccentricity, and Pred sets."""
    inf = net.node_count + 1
    dist = [inf] * net.node_count
    dist[net.root] = 0
    frontier = [net.root]
    while frontier:
        nxt = []
        for v in frontier:
            for u in net.neighbors(v):
                if dist[u] == inf:
                    dist[u] = dist[v] + 1
                    nxt.append(u)
        frontier = nxt
    preds = tuple(
        frozenset(u for u in net.neighbors(v) if dist[u] == dist[v] - 1)
        for v in range(net.node_count)
    )
    return DistanceOracle(dist=tuple(dist), eccentricity=max(dist), preds=preds)


def r_components(net: Network) -> RComponents:
    """Connected components of the graph with the root removed."""
    assignment: dict[int, int] = {}
    cid = 0
    for v in range(net.node_count):
        if v == net.root or v in assignment:
            continue
        for u in net._component(v, removed=net.root):
            assignment[u] = cid
        cid += 1
    return RComponents(assignment=assignment, count=cid)


def is_bipartite(net: Network) -> tuple[bool, dict[int, int] | None]:
    """Two-color the graph if possible; returns (ok, side-per-node or None)."""
    side: dict[int, int] = {net.root: 0}
    stack = [net.root]
    while stack:
        v = stack.pop()
        for u in net.neighbors(v):
            if u not in side:
                side[u] = side[v] ^ 1
                stack.append(u)
            elif side[u] == side[v]:
                return False, None
    return True, side


def shortest_paths(net: Network, oracle: DistanceOracle, v: int,
                   cap: int = 4096) -> list[tuple[int, ...]]:
    """All shortest root-to-v paths, as node tuples starting at the root.

    Enumeration walks the Pred DAG; `cap` guards against pathological
    blowup (raises GraphError rather than silently truncating).
    """
    if v == net.root:
        return [(net.root,)]
    out: list[tuple[int, ...]] = []

    def walk(node: int, suffix: tuple[int, ...]):
        if node == net.root:
            out.append((net.root,) + suffix)
            if len(out) > cap:
                raise GraphError(f"more than {cap} shortest paths to node {v}")
            return
        for p in sorted(oracle.preds[node]):
            walk(p, (node,) + suffix)

    walk(v, ())
    return out


def all_pairs_brute_distances(net: Network) -> list[list[int]]:
    """Independent shortest-path oracle: Floyd-Warshall over the edge list."""
    n = net.node_count
    inf = n + 1
    d = [[0 if i == j else inf for j in range(n)] for i in range(n)]
    for a, b in net.edges():
        d[a][b] = d[b][a] = 1
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if d[i][k] + d[k][j] < d[i][j]:
                    d[i][j] = d[i][k] + d[k][j]
    return d


def brute_r_components(net: Network) -> list[set[int]]:
    """Independent r-component oracle: path enumeration avoiding the root."""
    rest = [v for v in range(net.node_count) if v != net.root]
    comps: list[set[int]] = []
    for v in rest:
        placed = False
        for comp in comps:
            u = next(iter(comp))
            if _path_avoiding_root(net, v, u):
                comp.add(v)
                placed = True
                break
        if not placed:
            comps.append({v})
    return comps


def _path_avoiding_root(net: Network, a: int, b: int) -> bool:
    for k in range(1, net.node_count):
        for mid in combinations([x for x in range(net.node_count)
                                 if x not in (net.root, a, b)], k - 1):
            for perm in _permutations(mid):
                path = (a,) + perm + (b,)
                if all(path[i + 1] in net.neighbors(path[i])
                       for i in range(len(path) - 1)):
                    return True
    return a in net.neighbors(b) or a == b


def _permutations(items):
    if not items:
        return [()]
    out = []
    for i, x in enumerate(items):
        for rest in _permutations(items[:i] + items[i + 1:]):
            out.append((x,) + rest)
    return out
