"""Undirected graph structure, file IO, neighborhood oracles, orderings,
and 1-WL color refinement.

Adjacency is stored as sorted neighbor lists; all operations here are pure
functions of immutable inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import GraphIOError, NumericalError, ValidationError


class OrderingMode(str, Enum):
    DEGREE = "degree"
    PPR = "ppr"
    IDENTITY = "identity"


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph with per-node features and optional labels.

    Edges are (u, v) pairs with u != v (unless ``allow_self_loops``),
    endpoints in range, no duplicates.  ``node_features`` defaults to an
    all-ones n x 1 matrix so structural code never special-cases missing
    features.  ``parent_ids`` maps local ids back to the parent graph when
    this graph was produced by ``induce_subgraph``.
    """

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    node_features: np.ndarray
    edge_features: np.ndarray | None = None
    labels: np.ndarray | None = None
    graph_label: float | None = None
    allow_self_loops: bool = False
    parent_ids: tuple[int, ...] | None = None
    neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        n = self.num_nodes
        if n < 0:
            raise ValidationError("num_nodes must be nonnegative")
        seen: set[tuple[int, int]] = set()
        adj: list[list[int]] = [[] for _ in range(n)]
        for e in self.edges:
            if len(e) != 2:
                raise ValidationError(f"edge {e!r} is not a pair")
            u, v = int(e[0]), int(e[1])
            if not (0 <= u < n and 0 <= v < n):
                raise ValidationError(f"edge ({u}, {v}) endpoint out of range [0, {n})")
            if u == v and not self.allow_self_loops:
                raise ValidationError(f"self-loop at node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValidationError(f"duplicate edge ({u}, {v})")
            seen.add(key)
            adj[u].append(v)
            if u != v:
                adj[v].append(u)
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(a)) for a in adj))
        feats = np.asarray(self.node_features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ValidationError(
                f"node_features must be ({n}, d), got {feats.shape}"
            )
        object.__setattr__(self, "node_features", feats)
        if self.edge_features is not None:
            ef = np.asarray(self.edge_features, dtype=np.float64)
            if ef.ndim != 2 or ef.shape[0] != len(self.edges):
                raise ValidationError(
                    f"edge_features must be ({len(self.edges)}, d_e), got {ef.shape}"
                )
            object.__setattr__(self, "edge_features", ef)
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    def degree(self, v: int) -> int:
        return len(self.neighbors[v])

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.neighbors], dtype=np.intp)

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset((min(u, v), max(u, v)) for u, v in self.edges)

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self._edge_lookup

    @property
    def _edge_lookup(self) -> frozenset[tuple[int, int]]:
        cached = self.__dict__.get("_edge_lookup_cache")
        if cached is None:
            cached = self.edge_set()
            self.__dict__["_edge_lookup_cache"] = cached
        return cached

    def walk_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened adjacency (neighbors, offsets, degrees), cached.

        Built once per graph so repeated walk sampling stays O(walk
        length), not O(|E|) per call.
        """
        cached = self.__dict__.get("_walk_arrays_cache")
        if cached is None:
            deg = self.degrees()
            flat = np.fromiter((u for nbrs in self.neighbors for u in nbrs),
                               dtype=np.intp, count=int(deg.sum()))
            offset = np.zeros(self.num_nodes + 1, dtype=np.intp)
            np.cumsum(deg, out=offset[1:])
            cached = (flat, offset, deg)
            self.__dict__["_walk_arrays_cache"] = cached
        return cached

    def structural_hash(self) -> str:
        """Stable digest of the structure and features, used as a cache key."""
        h = hashlib.sha256()
        h.update(str(self.num_nodes).encode())
        for u, v in sorted(self.edge_set()):
            h.update(f"{u},{v};".encode())
        h.update(np.ascontiguousarray(self.node_features).tobytes())
        if self.edge_features is not None:
            h.update(np.ascontiguousarray(self.edge_features).tobytes())
        return h.hexdigest()


def make_graph(num_nodes: int, edges, node_features=None, **kwargs) -> Graph:
    """Build a validated Graph; features default to the all-ones column."""
    if node_features is None:
        node_features = np.ones((num_nodes, 1))
    return Graph(num_nodes=num_nodes,
                 edges=tuple((int(u), int(v)) for u, v in edges),
                 node_features=node_features, **kwargs)


@dataclass(frozen=True)
class NodeOrdering:
    permutation: np.ndarray
    mode: OrderingMode

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=np.intp)
        n = perm.shape[0]
        if sorted(perm.tolist()) != list(range(n)):
            raise ValidationError("ordering permutation is not a bijection")
        object.__setattr__(self, "permutation", perm)


@dataclass(frozen=True)
class WLColoring:
    colors: np.ndarray
    rounds: int


# ---------------------------------------------------------------------------
# file IO


def _graph_from_obj(obj: dict, source: str) -> Graph:
    if "num_nodes" not in obj:
        raise ValidationError(f"{source}: missing 'num_nodes'")
    n = int(obj["num_nodes"])
    edges = [(int(u), int(v)) for u, v in obj.get("edges", [])]
    feats = obj.get("node_features")
    labels = obj.get("labels")
    graph_label = obj.get("graph_label")
    if isinstance(labels, (int, float)) and graph_label is None:
        graph_label, labels = labels, None
    try:
        return make_graph(
            n, edges,
            node_features=None if feats is None else np.asarray(feats, dtype=np.float64),
            edge_features=(None if obj.get("edge_features") is None
                           else np.asarray(obj["edge_features"], dtype=np.float64)),
            labels=None if labels is None else np.asarray(labels),
            graph_label=None if graph_label is None else float(graph_label),
        )
    except ValidationError as exc:
        raise ValidationError(f"{source}: {exc}") from exc


def load_graph(path: str | Path, fmt: str = "json") -> Graph:
    """Load a graph from JSON or whitespace edgelist.

    JSON: {"num_nodes": n, "edges": [[u, v], ...], optional
    "node_features", "edge_features", "labels", "graph_label"}.
    Edgelist: one "u v" pair per line, '#' comments; node count is
    max id + 1.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GraphIOError(f"cannot read {path}: {exc}") from exc
    if fmt == "json":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GraphIOError(f"{path}: invalid JSON: {exc}") from exc
        return _graph_from_obj(obj, str(path))
    if fmt == "edgelist":
        edges = []
        max_id = -1
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphIOError(f"{path}:{lineno}: expected 'u v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise GraphIOError(f"{path}:{lineno}: non-integer endpoint") from exc
            edges.append((u, v))
            max_id = max(max_id, u, v)
        return make_graph(max_id + 1, edges)
    raise ValidationError(f"unknown graph format '{fmt}'")


def load_dataset(path: str | Path) -> list[Graph]:
    """Load a dataset file: one graph object or {"graphs": [...]}."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except OSError as exc:
        raise GraphIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise GraphIOError(f"{path}: invalid JSON: {exc}") from exc
    if isinstance(obj, dict) and "graphs" in obj:
        return [_graph_from_obj(g, f"{path}[{i}]") for i, g in enumerate(obj["graphs"])]
    return [_graph_from_obj(obj, str(path))]


def graph_to_obj(g: Graph) -> dict:
    obj: dict = {"num_nodes": g.num_nodes, "edges": [list(e) for e in g.edges],
                 "node_features": g.node_features.tolist()}
    if g.edge_features is not None:
        obj["edge_features"] = g.edge_features.tolist()
    if g.labels is not None:
        obj["labels"] = np.asarray(g.labels).tolist()
    if g.graph_label is not None:
        obj["graph_label"] = g.graph_label
    return obj


def save_dataset(graphs: list[Graph], path: str | Path) -> None:
    Path(path).write_text(json.dumps({"graphs": [graph_to_obj(g) for g in graphs]}))


# ---------------------------------------------------------------------------
# neighborhood oracles


def k_hop_neighborhood(g: Graph, v: int, k: int) -> set[int]:
    """BFS ball {u : dist(u, v) <= k}."""
    if not 0 <= v < g.num_nodes:
        raise ValidationError(f"node {v} out of range")
    if k < 0:
        raise ValidationError("k must be nonnegative")
    visited = {v}
    frontier = [v]
    for _ in range(k):
        nxt = []
        for u in frontier:
            for w in g.neighbors[u]:
                if w not in visited:
                    visited.add(w)
                    nxt.append(w)
        if not nxt:
            break
        frontier = nxt
    return visited


def bfs_distances(g: Graph, v: int) -> np.ndarray:
    """Distances from v; unreachable nodes get -1."""
    dist = np.full(g.num_nodes, -1, dtype=np.intp)
    dist[v] = 0
    frontier = [v]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for u in frontier:
            for w in g.neighbors[u]:
                if dist[w] < 0:
                    dist[w] = d
                    nxt.append(w)
        frontier = nxt
    return dist


def induce_subgraph(g: Graph, nodes) -> Graph:
    """Subgraph on ``nodes`` with all edges internal to the set.

    Node features are sliced; the local -> global map is kept in
    ``parent_ids``.  Edge features follow the surviving edges.
    """
    ids = sorted(set(int(u) for u in nodes))
    for u in ids:
        if not 0 <= u < g.num_nodes:
            raise ValidationError(f"node {u} not in graph")
    local = {u: i for i, u in enumerate(ids)}
    kept_edges = []
    kept_rows = []
    for row, (u, v) in enumerate(g.edges):
        if u in local and v in local:
            kept_edges.append((local[u], local[v]))
            kept_rows.append(row)
    ef = None
    if g.edge_features is not None:
        ef = g.edge_features[kept_rows] if kept_rows else g.edge_features[:0]
    return Graph(
        num_nodes=len(ids),
        edges=tuple(kept_edges),
        node_features=g.node_features[ids] if ids else g.node_features[:0],
        edge_features=ef,
        labels=None if g.labels is None else g.labels[ids],
        graph_label=g.graph_label,
        parent_ids=tuple(ids),
    )


# ---------------------------------------------------------------------------
# node orderings


def degree_ordering(g: Graph) -> NodeOrdering:
    """Descending degree, ties broken by ascending node id."""
    deg = g.degrees()
    perm = sorted(range(g.num_nodes), key=lambda v: (-deg[v], v))
    return NodeOrdering(np.array(perm, dtype=np.intp), OrderingMode.DEGREE)


def pagerank_scores(g: Graph, damping: float = 0.85, tol: float = 1e-10,
                    max_iters: int = 1000) -> np.ndarray:
    """Power iteration on the teleporting random-walk matrix.

    Dangling (degree-0) nodes redistribute their mass uniformly, so the
    scores always sum to 1.  Stops when the max-abs score change drops
    below ``tol``; raises NumericalError carrying the last residual if
    ``max_iters`` is exhausted first.
    """
    if not 0.0 < damping < 1.0:
        raise ValidationError("damping must be in (0, 1)")
    n = g.num_nodes
    if n == 0:
        return np.zeros(0)
    deg = g.degrees().astype(np.float64)
    src = np.array([u for u, v in g.edges] + [v for u, v in g.edges], dtype=np.intp)
    dst = np.array([v for u, v in g.edges] + [u for u, v in g.edges], dtype=np.intp)
    dangling = deg == 0
    p = np.full(n, 1.0 / n)
    residual = np.inf
    for _ in range(max_iters):
        out = np.where(dangling, 0.0, p / np.where(dangling, 1.0, deg))
        nxt = np.zeros(n)
        if len(src):
            np.add.at(nxt, dst, out[src])
        nxt = damping * nxt + (1.0 - damping) / n + damping * p[dangling].sum() / n
        residual = float(np.max(np.abs(nxt - p)))
        p = nxt
        if residual < tol:
            return p
    raise NumericalError(
        f"PageRank did not converge in {max_iters} iterations", residual=residual)


def ppr_ordering(g: Graph, damping: float = 0.85, tol: float = 1e-10,
                 max_iters: int = 1000) -> NodeOrdering:
    """Descending PageRank score, ties broken by ascending node id."""
    scores = pagerank_scores(g, damping=damping, tol=tol, max_iters=max_iters)
    perm = sorted(range(g.num_nodes), key=lambda v: (-scores[v], v))
    return NodeOrdering(np.array(perm, dtype=np.intp), OrderingMode.PPR)


def identity_ordering(g: Graph) -> NodeOrdering:
    return NodeOrdering(np.arange(g.num_nodes, dtype=np.intp), OrderingMode.IDENTITY)


def node_ordering(g: Graph, mode: OrderingMode | str) -> NodeOrdering:
    mode = OrderingMode(mode)
    if mode is OrderingMode.DEGREE:
        return degree_ordering(g)
    if mode is OrderingMode.PPR:
        return ppr_ordering(g)
    return identity_ordering(g)


# ---------------------------------------------------------------------------
# 1-WL color refinement


def wl_refine(g: Graph, max_rounds: int | None = None) -> WLColoring:
    """Iterative color refinement from uniform initial colors.

    Each round maps a node to the pair (own color, sorted multiset of
    neighbor colors); signatures are canonicalized by sorting so the
    resulting color ids are invariant under node relabeling.  Stops at
    the refinement fixpoint or after ``max_rounds``.
    """
    n = g.num_nodes
    if max_rounds is None:
        # Partition stabilizes within n rounds; allow one extra settling
        # round for the canonical id assignment.
        max_rounds = n + 2
    colors = np.zeros(n, dtype=np.intp)
    rounds = 0
    for _ in range(max_rounds):
        sigs = [
            (int(colors[v]), tuple(sorted(int(colors[u]) for u in g.neighbors[v])))
            for v in range(n)
        ]
        palette = {sig: i for i, sig in enumerate(sorted(set(sigs)))}
        new_colors = np.array([palette[s] for s in sigs], dtype=np.intp)
        if np.array_equal(new_colors, colors):
            break
        colors = new_colors
        rounds += 1
    return WLColoring(colors=colors, rounds=rounds)


def wl_histogram(coloring: WLColoring) -> dict[int, int]:
    values, counts = np.unique(coloring.colors, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def permute_graph(g: Graph, perm: np.ndarray) -> Graph:
    """Relabel nodes: new id of node v is perm[v]."""
    perm = np.asarray(perm, dtype=np.intp)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    feats = g.node_features[inv]
    edges = tuple((int(perm[u]), int(perm[v])) for u, v in g.edges)
    return Graph(num_nodes=g.num_nodes, edges=edges, node_features=feats,
                 edge_features=g.edge_features,
                 labels=None if g.labels is None else g.labels[inv],
                 graph_label=g.graph_label)
