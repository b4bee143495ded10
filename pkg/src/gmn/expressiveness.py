"""Distinguishability harness: where walk-feature tokens see more than
1-WL color refinement or distance-shell encodings.

Signatures here use exhaustive walk enumeration (every walk of each
length up to a cap) rather than sampling, which is the large-sample limit
of the tokenizer: the multiset of walks from a node is a relabeling
invariant, so isomorphic graphs provably get equal signatures while the
fixtures below are separated by closed-walk structure that neither 1-WL
histograms nor per-distance node multisets can express.

Built-in fixtures:
  k33_prism        - K3,3 vs the triangular prism: 3-regular twins for
                     1-WL, separated by their triangles.
  distance_pair    - two graphs whose distance shells from an anchor
                     match exactly (sizes 1, 2, 2, 1) but whose anchor
                     walk tokens differ; one holds its extra edge inside
                     shell 1 (a triangle), the other inside shell 2.
  triangle_path    - a control pair that 1-WL already tells apart.
  relabel_soundness- an isomorphic pair; all signatures must agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore
from .encoders import RwfWeights, build_walk_features, encode_rwf
from .errors import ValidationError
from .graphs import Graph, make_graph, permute_graph, wl_histogram, wl_refine, bfs_distances
from .model import build_rwf_weights
from .tokenizer import derive_rng

_TAG_HARNESS = 8

HARNESS_MAX_LENGTH = 3
HARNESS_WINDOW = 4
HARNESS_DIM = 8
DISTINGUISH_GAP = 1e-6


# ---------------------------------------------------------------------------
# fixtures


def k33_graph() -> Graph:
    """Complete bipartite K3,3: parts {0,1,2} and {3,4,5}."""
    return make_graph(6, [(i, j) for i in range(3) for j in range(3, 6)])


def triangular_prism() -> Graph:
    """Two triangles joined by a perfect matching; 3-regular like K3,3."""
    return make_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5),
                          (0, 3), (1, 4), (2, 5)])


def distance_failure_pair() -> tuple[Graph, Graph, int]:
    """Anchored pair with identical distance shells but different wiring.

    Both graphs have shells of size 1, 2, 2, 1 around node 0 and six
    edges; the first closes a triangle inside shell 1, the second links
    the two shell-2 nodes instead.  Any encoder that only sees the
    multiset of node features per distance maps node 0 identically.
    """
    g_triangle = make_graph(6, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 5)])
    g_chordless = make_graph(6, [(0, 1), (0, 2), (1, 3), (2, 4), (3, 4), (3, 5)])
    return g_triangle, g_chordless, 0


# ---------------------------------------------------------------------------
# exhaustive walk signatures


def enumerate_walks(g: Graph, v: int, length: int) -> list[tuple[int, ...]]:
    """All walks of exactly ``length`` steps from v (dead ends stay put)."""
    walks = [(v,)]
    for _ in range(length):
        nxt = []
        for w in walks:
            nbrs = g.neighbors[w[-1]]
            if not nbrs:
                nxt.append(w + (w[-1],))
            else:
                nxt.extend(w + (u,) for u in nbrs)
        walks = nxt
    return walks


def harness_weights(feat_dim: int, seed: int = 0) -> RwfWeights:
    """Untrained, seed-fixed walk-feature encoder for signatures."""
    store = ParameterStore()
    rng = derive_rng(_TAG_HARNESS, seed)
    return build_rwf_weights(store, rng, "harness", feat_dim, HARNESS_DIM,
                             HARNESS_WINDOW)


def anchor_token_signature(g: Graph, v: int, weights: RwfWeights,
                           max_length: int = HARNESS_MAX_LENGTH) -> np.ndarray:
    """Concatenated per-length token vectors for one node, all walks."""
    parts = []
    with ad.no_grad():
        for length in range(max_length + 1):
            feats = [build_walk_features(g, w, weights.window)
                     for w in enumerate_walks(g, v, length)]
            parts.append(encode_rwf(feats, weights).data)
    return np.concatenate(parts)


def graph_token_signature(g: Graph, weights: RwfWeights,
                          max_length: int = HARNESS_MAX_LENGTH) -> np.ndarray:
    """Node-signature matrix in canonical (sorted-row) multiset form."""
    rows = np.stack([anchor_token_signature(g, v, weights, max_length)
                     for v in range(g.num_nodes)])
    order = np.lexsort(rows.T[::-1])
    return rows[order]


def signature_gap(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        return float("inf")
    return float(np.max(np.abs(a - b)))


def distance_shell_signature(g: Graph, anchor: int) -> tuple:
    """Per-distance multisets of node features, as distance encoders see them."""
    dist = bfs_distances(g, anchor)
    out = []
    for d in range(int(dist.max()) + 1):
        rows = sorted(tuple(g.node_features[v]) for v in range(g.num_nodes)
                      if dist[v] == d)
        out.append(tuple(rows))
    return tuple(out)


# ---------------------------------------------------------------------------
# brute-force isomorphism (fixture self-check)


def brute_force_isomorphic(g1: Graph, g2: Graph) -> bool:
    """Backtracking search over degree-compatible bijections; n <= ~10."""
    n = g1.num_nodes
    if n != g2.num_nodes or g1.num_edges != g2.num_edges:
        return False
    deg1 = [g1.degree(v) for v in range(n)]
    deg2 = [g2.degree(v) for v in range(n)]
    if sorted(deg1) != sorted(deg2):
        return False
    e2 = g2.edge_set()
    mapping = [-1] * n
    used = [False] * n

    def extend(v: int) -> bool:
        if v == n:
            return True
        for w in range(n):
            if used[w] or deg1[v] != deg2[w]:
                continue
            ok = True
            for u in range(v):
                adj1 = u in g1.neighbors[v]
                adj2 = (min(mapping[u], w), max(mapping[u], w)) in e2
                if adj1 != adj2:
                    ok = False
                    break
            if ok:
                mapping[v] = w
                used[w] = True
                if extend(v + 1):
                    return True
                used[w] = False
                mapping[v] = -1
        return False

    return extend(0)


# ---------------------------------------------------------------------------
# fixture runner


@dataclass
class FixtureOutcome:
    name: str
    passed: bool
    lines: list[str]

    def report(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        body = "\n".join(f"  {line}" for line in self.lines)
        return f"[{self.name}] {status}\n{body}"


def _check(lines: list[str], ok: bool, text: str) -> bool:
    lines.append(("ok  " if ok else "FAIL") + " " + text)
    return ok


def run_fixture(name: str, seed: int = 0) -> FixtureOutcome:
    lines: list[str] = []
    ok = True
    if name == "k33_prism":
        ga, gb = k33_graph(), triangular_prism()
        ok &= _check(lines, not brute_force_isomorphic(ga, gb),
                     "self-check: fixture graphs are non-isomorphic")
        ha, hb = wl_histogram(wl_refine(ga)), wl_histogram(wl_refine(gb))
        ok &= _check(lines, ha == hb,
                     f"1-WL: INDISTINGUISHABLE (histograms {ha} == {hb})")
        w = harness_weights(ga.feature_dim + 2 * (HARNESS_WINDOW - 1), seed)
        gap = signature_gap(graph_token_signature(ga, w),
                            graph_token_signature(gb, w))
        ok &= _check(lines, gap > DISTINGUISH_GAP,
                     f"walk tokens: DISTINGUISHED (gap {gap:.3e} > {DISTINGUISH_GAP:g})")
    elif name == "distance_pair":
        ga, gb, anchor = distance_failure_pair()
        ok &= _check(lines, not brute_force_isomorphic(ga, gb),
                     "self-check: fixture graphs are non-isomorphic")
        ok &= _check(lines,
                     distance_shell_signature(ga, anchor)
                     == distance_shell_signature(gb, anchor),
                     "distance shells from anchor: IDENTICAL")
        w = harness_weights(ga.feature_dim + 2 * (HARNESS_WINDOW - 1), seed)
        gap = signature_gap(anchor_token_signature(ga, anchor, w),
                            anchor_token_signature(gb, anchor, w))
        ok &= _check(lines, gap > DISTINGUISH_GAP,
                     f"anchor walk tokens: DISTINGUISHED (gap {gap:.3e})")
    elif name == "triangle_path":
        ga = make_graph(3, [(0, 1), (1, 2), (0, 2)])
        gb = make_graph(3, [(0, 1), (1, 2)])
        ha, hb = wl_histogram(wl_refine(ga)), wl_histogram(wl_refine(gb))
        ok &= _check(lines, ha != hb,
                     f"1-WL already distinguishes this pair ({ha} != {hb})")
    elif name == "relabel_soundness":
        ga = triangular_prism()
        perm = derive_rng(_TAG_HARNESS, seed, 99).permutation(ga.num_nodes)
        gb = permute_graph(ga, perm)
        ok &= _check(lines, brute_force_isomorphic(ga, gb),
                     "self-check: relabeled copy is isomorphic")
        ok &= _check(lines,
                     wl_histogram(wl_refine(ga)) == wl_histogram(wl_refine(gb)),
                     "1-WL histograms agree under relabeling")
        w = harness_weights(ga.feature_dim + 2 * (HARNESS_WINDOW - 1), seed)
        gap = signature_gap(graph_token_signature(ga, w),
                            graph_token_signature(gb, w))
        ok &= _check(lines, gap <= 1e-9,
                     f"walk-token signatures agree (gap {gap:.3e} <= 1e-9)")
    else:
        raise ValidationError(f"unknown fixture '{name}'")
    return FixtureOutcome(name=name, passed=bool(ok), lines=lines)


ALL_FIXTURES = ("k33_prism", "distance_pair", "triangle_path", "relabel_soundness")
