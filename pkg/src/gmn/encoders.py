"""Token encoders: map each sampled subgraph token to a d_model vector.

Two encoders are available.  The walk-feature encoder runs a small 1-D
convolution stack over per-step walk feature rows (node features plus
identity/adjacency window flags) and averages over steps and walks.  The
message-passing encoder runs mean-aggregation rounds on the token's
induced subgraph and averages the final node states.  Both use mean
(never sum) aggregation so the token scale does not depend on subgraph
size.

Internally both encoders are batched: all tokens of a graph are encoded
in a handful of array operations.  The public single-token entry points
wrap the batched path with a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ValidationError
from .graphs import Graph
from .tokenizer import TokenSequenceSpec, WalkSample


@dataclass(frozen=True)
class WalkFeatures:
    """Per-walk feature matrix: one row per step.

    Columns are [node features | edge features along the walk, when the
    graph has them | identity flags for offsets 1..w-1 | adjacency flags
    for offsets 1..w-1].  A flag is zero when its offset reaches past the
    start of the walk.
    """

    matrix: np.ndarray
    window: int


def build_walk_features(g: Graph, walk, w: int) -> WalkFeatures:
    walk = [int(v) for v in walk]
    if not walk:
        raise ValidationError("walk must be nonempty")
    if w < 1:
        raise ValidationError("window must be >= 1")
    for a, b in zip(walk, walk[1:]):
        if a == b:
            if g.degree(a) != 0:
                raise ValidationError(
                    f"walk repeats node {a} which is not a dead end")
        elif not g.has_edge(a, b):
            raise ValidationError(f"walk step {a}->{b} is not an edge")
    steps = len(walk)
    d_in = g.feature_dim
    d_e = 0 if g.edge_features is None else g.edge_features.shape[1]
    if d_e:
        edge_row = {(min(u, v), max(u, v)): i for i, (u, v) in enumerate(g.edges)}
    cols = d_in + d_e + 2 * (w - 1)
    mat = np.zeros((steps, cols))
    for t, v in enumerate(walk):
        mat[t, :d_in] = g.node_features[v]
        if d_e and t > 0 and walk[t - 1] != v:
            mat[t, d_in:d_in + d_e] = g.edge_features[
                edge_row[(min(walk[t - 1], v), max(walk[t - 1], v))]]
        for off in range(1, w):
            if t - off < 0:
                break
            prev = walk[t - off]
            if prev == v:
                mat[t, d_in + d_e + off - 1] = 1.0
            if g.has_edge(v, prev):
                mat[t, d_in + d_e + (w - 1) + off - 1] = 1.0
    return WalkFeatures(matrix=mat, window=w)


def walk_feature_dim(d_in: int, d_e: int, w: int) -> int:
    return d_in + d_e + 2 * (w - 1)


# ---------------------------------------------------------------------------
# walk-feature (RWF-style) encoder


@dataclass
class RwfWeights:
    """Two-layer 1-D convolution stack, kernel size = window."""

    window: int
    conv1_w: Tensor  # (w, F, hidden)
    conv1_b: Tensor
    conv2_w: Tensor  # (w, hidden, d_model)
    conv2_b: Tensor


def conv1d_causal(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Full (channel-mixing) causal 1-D convolution.

    x: (B, L, F); w: (k, F, O); left zero padding keeps step t a function
    of steps <= t only, so a one-step walk sees just its own row.
    """
    k = w.shape[0]
    B, L, _ = x.shape
    if k > 1:
        pad = Tensor(np.zeros((B, k - 1, x.shape[2])))
        xp = ad.concat([pad, x], axis=1)
    else:
        xp = x
    out = None
    for j in range(k):
        term = ad.matmul(xp[:, j:j + L, :], w[j])
        out = term if out is None else ad.add(out, term)
    return ad.add(out, b)


def _rwf_stack(x: Tensor, weights: RwfWeights) -> Tensor:
    """Conv stack + step mean: (B, L, F) -> (B, d_model)."""
    h = ad.silu(conv1d_causal(x, weights.conv1_w, weights.conv1_b))
    h = conv1d_causal(h, weights.conv2_w, weights.conv2_b)
    return ad.mean(h, axis=1)


def encode_rwf(walks: list[WalkFeatures], weights: RwfWeights) -> Tensor:
    """Token vector: conv features mean-pooled over steps, then walks."""
    if not walks:
        raise ValidationError("encode_rwf needs at least one walk")
    steps = {wf.matrix.shape[0] for wf in walks}
    if len(steps) != 1:
        raise ValidationError("walks of one token must share a length")
    x = Tensor(np.stack([wf.matrix for wf in walks]))
    per_walk = _rwf_stack(x, weights)          # (n_walks, d_model)
    return ad.mean(per_walk, axis=0)


@dataclass
class RwfTokenBatch:
    """All tokens of one graph, grouped by walk length for batching.

    ``groups`` holds (stacked walk matrices (G*M, steps, F), token row
    ids (G,)); ``gather`` maps token index -> row in the concatenated
    group outputs.
    """

    groups: list[tuple[np.ndarray, np.ndarray]]
    gather: np.ndarray
    num_tokens: int


def prepare_rwf_batch(g: Graph, tokens: list[WalkSample], window: int) -> RwfTokenBatch:
    by_steps: dict[int, list[int]] = {}
    for i, tok in enumerate(tokens):
        by_steps.setdefault(tok.length + 1, []).append(i)
    groups = []
    positions = np.empty(len(tokens), dtype=np.intp)
    pos = 0
    for steps in sorted(by_steps):
        idxs = np.array(by_steps[steps], dtype=np.intp)
        mats = []
        for i in idxs:
            for walk in tokens[i].walks:
                mats.append(build_walk_features(g, walk, window).matrix)
        stacked = np.stack(mats)  # (G * M, steps, F)
        groups.append((stacked, idxs))
        positions[idxs] = pos + np.arange(len(idxs))
        pos += len(idxs)
    return RwfTokenBatch(groups=groups, gather=positions, num_tokens=len(tokens))


def run_rwf_batch(batch: RwfTokenBatch, weights: RwfWeights) -> Tensor:
    """Encode every token: (num_tokens, d_model), in token order."""
    outs = []
    for stacked, idxs in batch.groups:
        n_tok = len(idxs)
        walks_per = stacked.shape[0] // n_tok
        per_walk = _rwf_stack(Tensor(stacked), weights)
        per_tok = ad.mean(ad.reshape(per_walk, (n_tok, walks_per, -1)), axis=1)
        outs.append(per_tok)
    merged = outs[0] if len(outs) == 1 else ad.concat(outs, axis=0)
    return ad.index_rows(merged, batch.gather)


# ---------------------------------------------------------------------------
# message-passing encoder


@dataclass
class MpnnWeights:
    """Mean-aggregation message passing; one weight triple per round."""

    w_self: list[Tensor]   # round r: (d_{r-1}, d_r)
    w_nbr: list[Tensor]
    bias: list[Tensor]
    activation: str = "silu"  # "silu" or "identity"

    @property
    def rounds(self) -> int:
        return len(self.w_self)


def _act(x: Tensor, kind: str) -> Tensor:
    if kind == "silu":
        return ad.silu(x)
    if kind == "identity":
        return x
    raise ValidationError(f"unknown activation '{kind}'")


def _mpnn_rounds(feats: Tensor, prop: Tensor, weights: MpnnWeights) -> Tensor:
    h = feats
    for w_s, w_n, b in zip(weights.w_self, weights.w_nbr, weights.bias):
        nbr = ad.matmul(prop, h)
        h = _act(ad.add(ad.add(ad.matmul(h, w_s), ad.matmul(nbr, w_n)), b), weights.activation)
    return h


def _mean_propagator(g: Graph) -> np.ndarray:
    """Row-stochastic neighbor-mean matrix; zero rows for isolated nodes."""
    n = g.num_nodes
    prop = np.zeros((n, n))
    for u in range(n):
        nbrs = g.neighbors[u]
        if nbrs:
            prop[u, list(nbrs)] = 1.0 / len(nbrs)
    return prop


def encode_mpnn(sub: Graph, rounds: int, weights: MpnnWeights) -> Tensor:
    """Token vector: mean over nodes of the final message-passing states."""
    if sub.num_nodes == 0:
        raise ValidationError("encode_mpnn needs a nonempty subgraph")
    if rounds != weights.rounds:
        raise ValidationError(
            f"weights carry {weights.rounds} rounds, {rounds} requested")
    if sub.feature_dim != weights.w_self[0].shape[0]:
        raise ValidationError(
            f"feature dim {sub.feature_dim} does not match encoder input "
            f"dim {weights.w_self[0].shape[0]}")
    h = _mpnn_rounds(Tensor(sub.node_features), Tensor(_mean_propagator(sub)), weights)
    return ad.mean(h, axis=0)


def mpnn_node_states(g: Graph, features: np.ndarray, weights: MpnnWeights) -> Tensor:
    """Per-node states after message passing on the whole graph (no pooling).

    The neighbor-mean propagator is dense, so this path is meant for
    desk-scale graphs.
    """
    if features.shape[0] != g.num_nodes:
        raise ValidationError("feature row count does not match graph")
    return _mpnn_rounds(Tensor(features), Tensor(_mean_propagator(g)), weights)


@dataclass
class MpnnTokenBatch:
    """Padded per-token arrays for batched message passing."""

    feats: np.ndarray   # (T, S, F)
    prop: np.ndarray    # (T, S, S)
    mask: np.ndarray    # (T, S, 1)
    counts: np.ndarray  # (T, 1)


def prepare_mpnn_batch(g: Graph, tokens: list[WalkSample]) -> MpnnTokenBatch:
    subs = []
    for tok in tokens:
        ids = sorted(tok.visited)
        local = {u: i for i, u in enumerate(ids)}
        nbrs = [[local[u] for u in g.neighbors[v] if u in local] for v in ids]
        subs.append((ids, nbrs))
    S = max(len(ids) for ids, _ in subs)
    T = len(tokens)
    F = g.feature_dim
    feats = np.zeros((T, S, F))
    prop = np.zeros((T, S, S))
    mask = np.zeros((T, S, 1))
    counts = np.empty((T, 1))
    for t, (ids, nbrs) in enumerate(subs):
        k = len(ids)
        feats[t, :k] = g.node_features[ids]
        mask[t, :k, 0] = 1.0
        counts[t, 0] = k
        for i, row in enumerate(nbrs):
            if row:
                prop[t, i, row] = 1.0 / len(row)
    return MpnnTokenBatch(feats=feats, prop=prop, mask=mask, counts=counts)


def run_mpnn_batch(batch: MpnnTokenBatch, weights: MpnnWeights) -> Tensor:
    """Encode every token: (num_tokens, d_model), in token order."""
    h = _mpnn_rounds(Tensor(batch.feats), Tensor(batch.prop), weights)
    total = ad.sum_(ad.mul(h, Tensor(batch.mask)), axis=1)
    return ad.div(total, Tensor(batch.counts))


# ---------------------------------------------------------------------------
# prepared per-graph token encoding


@dataclass
class PreparedTokens:
    """Constant arrays for one graph's frozen token sequences."""

    kind: str  # "rwf" or "mpnn"
    num_nodes: int
    seq_len: int
    rwf: RwfTokenBatch | None = None
    mpnn: MpnnTokenBatch | None = None


def prepare_tokens(g: Graph, specs: list[TokenSequenceSpec], kind: str,
                   window: int = 4) -> PreparedTokens:
    flat: list[WalkSample] = []
    seq_len = len(specs[0].ordered_tokens)
    for spec in specs:
        spec.validate()
        if len(spec.ordered_tokens) != seq_len:
            raise ValidationError("token sequences must share a length")
        flat.extend(spec.ordered_tokens)
    if kind == "rwf":
        return PreparedTokens(kind=kind, num_nodes=len(specs), seq_len=seq_len,
                              rwf=prepare_rwf_batch(g, flat, window))
    if kind == "mpnn":
        return PreparedTokens(kind=kind, num_nodes=len(specs), seq_len=seq_len,
                              mpnn=prepare_mpnn_batch(g, flat))
    raise ValidationError(f"unknown encoder kind '{kind}'")


def encode_prepared(prep: PreparedTokens, weights) -> Tensor:
    """(num_nodes, seq_len, d_model) token vectors in model-input order."""
    if prep.kind == "rwf":
        vecs = run_rwf_batch(prep.rwf, weights)
    else:
        vecs = run_mpnn_batch(prep.mpnn, weights)
    return ad.reshape(vecs, (prep.num_nodes, prep.seq_len, -1))
