"""Synthetic graphs and tasks for tests, benchmarks, and demos."""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ValidationError
from .graphs import Graph, make_graph
from .tokenizer import derive_rng

_TAG_DATA = 7


def cycle_graph(k: int, **kwargs) -> Graph:
    return make_graph(k, [(i, (i + 1) % k) for i in range(k)], **kwargs)


def path_graph(k: int, **kwargs) -> Graph:
    return make_graph(k, [(i, i + 1) for i in range(k - 1)], **kwargs)


def complete_graph(k: int, **kwargs) -> Graph:
    return make_graph(k, [(i, j) for i in range(k) for j in range(i + 1, k)], **kwargs)


def star_graph(leaves: int, **kwargs) -> Graph:
    return make_graph(leaves + 1, [(0, i + 1) for i in range(leaves)], **kwargs)


def cycles_vs_paths(count: int, k_min: int = 6, k_max: int = 12,
                    seed: int = 0) -> list[Graph]:
    """Binary graph-classification task: cycle C_k (label 1) vs path P_k
    (label 0), constant node features, so only structure separates them."""
    rng = derive_rng(_TAG_DATA, seed, 1)
    graphs = []
    for i in range(count):
        k = int(rng.integers(k_min, k_max + 1))
        if i % 2 == 0:
            graphs.append(make_graph(
                k, [(j, (j + 1) % k) for j in range(k)], graph_label=1.0))
        else:
            graphs.append(make_graph(
                k, [(j, j + 1) for j in range(k - 1)], graph_label=0.0))
    return graphs


def random_bounded_degree_graph(n: int, max_degree: int, seed: int,
                                target_edges: int | None = None) -> Graph:
    """Random connected-ish graph with every degree <= max_degree."""
    rng = derive_rng(_TAG_DATA, seed, 2)
    deg = np.zeros(n, dtype=np.intp)
    edges: set[tuple[int, int]] = set()
    # Random spanning tree first, degree-capped.
    order = rng.permutation(n)
    for i in range(1, n):
        candidates = [int(v) for v in order[:i] if deg[v] < max_degree]
        if not candidates:
            break
        u = int(order[i])
        v = candidates[int(rng.integers(len(candidates)))]
        edges.add((min(u, v), max(u, v)))
        deg[u] += 1
        deg[v] += 1
    if target_edges is None:
        target_edges = min(n * max_degree // 2, len(edges) + n // 2)
    attempts = 0
    while len(edges) < target_edges and attempts < 50 * n:
        attempts += 1
        u, v = int(rng.integers(n)), int(rng.integers(n))
        if u == v or deg[u] >= max_degree or deg[v] >= max_degree:
            continue
        key = (min(u, v), max(u, v))
        if key in edges:
            continue
        edges.add(key)
        deg[u] += 1
        deg[v] += 1
    return make_graph(n, sorted(edges))


def random_regular_graph(n: int, d: int, seed: int,
                         max_retries: int = 2000) -> Graph:
    """d-regular graph via the pairing model, resampled until simple."""
    if n * d % 2 != 0:
        raise ValidationError("n * d must be even for a d-regular graph")
    rng = derive_rng(_TAG_DATA, seed, 3)
    stubs = np.repeat(np.arange(n), d)
    for _ in range(max_retries):
        perm = rng.permutation(stubs)
        pairs = perm.reshape(-1, 2)
        edges = set()
        ok = True
        for u, v in pairs:
            u, v = int(u), int(v)
            if u == v:
                ok = False
                break
            key = (min(u, v), max(u, v))
            if key in edges:
                ok = False
                break
            edges.add(key)
        if ok:
            return make_graph(n, sorted(edges))
    raise NumericalError(
        f"pairing model failed to produce a simple {d}-regular graph "
        f"after {max_retries} tries")


def degree_parity_graph(n: int, seed: int, max_degree: int = 8) -> Graph:
    """Node-classification task: label = degree mod 2."""
    base = random_bounded_degree_graph(n, max_degree, seed,
                                       target_edges=int(1.5 * n))
    labels = base.degrees() % 2
    return Graph(num_nodes=base.num_nodes, edges=base.edges,
                 node_features=base.node_features, labels=labels)
