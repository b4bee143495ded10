"""Random-walk neighborhood sampling and token ordering.

For each node v the tokenizer draws M uniform random walks at every
length 1..m, repeated s times, and keeps both the union of visited nodes
(the token's induced-subgraph support) and the raw walks (consumed by the
walk-feature encoder).  Sampling is seeded per (node, length, repeat) so
nodes can be tokenized independently and reproducibly.

Token model-input order is the reverse of construction order: longest
walks first, equal-length blocks shuffled with a seeded permutation, and
the length-0 token (the node itself) always last.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import GraphIOError, ValidationError
from .graphs import Graph, NodeOrdering

# Stream tags keep derived seeds for different purposes disjoint.
_TAG_WALK = 1
_TAG_ORDER = 2

TOKEN_CACHE_VERSION = "gmn_tokens_v1"


class OrderMode(str, Enum):
    REVERSE_HIERARCHY = "reverse_hierarchy"
    NODE_ONLY = "node_only"


@dataclass(frozen=True)
class WalkSample:
    """Union of M random walks of one length from one origin."""

    origin: int
    length: int
    repeat: int
    visited: frozenset[int]
    walks: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class TokenSequenceSpec:
    """Per-node token list in model-input order."""

    origin: int
    ordered_tokens: tuple[WalkSample, ...]
    order_mode: OrderMode

    def validate(self) -> None:
        toks = self.ordered_tokens
        if not toks:
            raise ValidationError("empty token sequence")
        if self.order_mode is OrderMode.REVERSE_HIERARCHY:
            lengths = [t.length for t in toks]
            if any(a < b for a, b in zip(lengths, lengths[1:])):
                raise ValidationError("token lengths must be non-increasing")
            if lengths[-1] != 0:
                raise ValidationError("the length-0 token must sit in the last slot")


def derive_rng(*keys: int) -> np.random.Generator:
    """Deterministic generator from a tuple of integer keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(keys))))


def sample_walks(g: Graph, v: int, length: int, M: int, rng_seed: int,
                 repeat: int = 0) -> WalkSample:
    """M uniform random walks of exactly ``length`` steps starting at v.

    Each step moves to a uniformly random neighbor; a walk that reaches a
    degree-0 node stays there for its remaining steps, so every walk has
    length + 1 entries.  All M walks advance in lockstep from one seeded
    stream, so the result is a pure function of (seed, v, length, repeat).
    """
    if not 0 <= v < g.num_nodes:
        raise ValidationError(f"origin {v} out of range")
    if length < 0 or M < 1:
        raise ValidationError("need length >= 0 and M >= 1")
    rng = derive_rng(_TAG_WALK, rng_seed, v, length, repeat)
    cur = np.full(M, v, dtype=np.intp)
    steps = [cur.copy()]
    if length > 0:
        flat, offset, deg = g.walk_arrays()
        for _ in range(length):
            u = rng.random(M)
            d = deg[cur]
            movable = d > 0
            safe_d = np.where(movable, d, 1)
            pick = np.minimum((u * safe_d).astype(np.intp), safe_d - 1)
            # Dead ends stay put; mask their flat index to a safe slot.
            idx = np.where(movable, offset[cur] + pick, 0)
            nxt = np.where(movable, flat[idx], cur) if flat.size else cur
            cur = nxt
            steps.append(cur.copy())
    mat = np.stack(steps, axis=1)  # (M, length + 1)
    visited = frozenset(int(x) for x in np.unique(mat))
    return WalkSample(origin=v, length=length, repeat=repeat, visited=visited,
                      walks=tuple(tuple(int(x) for x in row) for row in mat))


def build_token_sets(g: Graph, v: int, M: int, m: int, s: int,
                     rng_seed: int) -> list[WalkSample]:
    """One length-0 sample plus samples for every (length, repeat) pair.

    Returned in construction order: [T_0, T_1^1 .. T_1^s, ..., T_m^1 ..
    T_m^s], giving s*m + 1 samples.
    """
    if m < 1 or s < 1:
        raise ValidationError("build_token_sets requires m >= 1 and s >= 1")
    samples = [sample_walks(g, v, 0, M, rng_seed, repeat=0)]
    for m_hat in range(1, m + 1):
        for s_hat in range(1, s + 1):
            samples.append(sample_walks(g, v, m_hat, M, rng_seed, repeat=s_hat))
    return samples


def order_tokens(samples: list[WalkSample], rng_seed: int) -> TokenSequenceSpec:
    """Sort descending by walk length, shuffling equal-length blocks.

    The shuffle permutations are seeded per (origin, length) so replaying
    with the same seed reproduces the order exactly; the length-0 token
    lands in the final slot.
    """
    if not samples:
        raise ValidationError("no samples to order")
    origin = samples[0].origin
    by_length: dict[int, list[WalkSample]] = {}
    for smp in samples:
        by_length.setdefault(smp.length, []).append(smp)
    ordered: list[WalkSample] = []
    for length in sorted(by_length, reverse=True):
        block = by_length[length]
        if len(block) > 1:
            rng = derive_rng(_TAG_ORDER, rng_seed, origin, length)
            block = [block[i] for i in rng.permutation(len(block))]
        ordered.extend(block)
    spec = TokenSequenceSpec(origin=origin, ordered_tokens=tuple(ordered),
                             order_mode=OrderMode.REVERSE_HIERARCHY)
    spec.validate()
    return spec


def tokenize_graph(g: Graph, M: int, m: int, s: int,
                   rng_seed: int) -> list[TokenSequenceSpec]:
    """Frozen token sequences for every node of the graph."""
    return [
        order_tokens(build_token_sets(g, v, M, m, s, rng_seed), rng_seed)
        for v in range(g.num_nodes)
    ]


def node_token_mode(g: Graph, ordering: NodeOrdering) -> list[int]:
    """Whole-graph token sequence for node-as-token mode (m = 0)."""
    if len(ordering.permutation) != g.num_nodes:
        raise ValidationError("ordering does not match graph size")
    return [int(v) for v in ordering.permutation]


# ---------------------------------------------------------------------------
# cache IO


def cache_key(g: Graph, M: int, m: int, s: int, seed: int) -> dict:
    return {"graph_hash": g.structural_hash(), "M": M, "m": m, "s": s, "seed": seed}


def save_token_cache(path: str | Path, g: Graph, specs: list[TokenSequenceSpec],
                     M: int, m: int, s: int, seed: int) -> None:
    payload = {
        "version": TOKEN_CACHE_VERSION,
        **cache_key(g, M, m, s, seed),
        "tokens": [
            [
                {
                    "origin": t.origin,
                    "length": t.length,
                    "repeat": t.repeat,
                    "visited": sorted(t.visited),
                    "walks": [list(w) for w in t.walks],
                }
                for t in spec.ordered_tokens
            ]
            for spec in specs
        ],
    }
    Path(path).write_text(json.dumps(payload, separators=(",", ":"), sort_keys=True))


def load_token_cache(path: str | Path, g: Graph, M: int, m: int, s: int,
                     seed: int) -> list[TokenSequenceSpec]:
    """Load a cache and verify it matches (graph hash, M, m, s, seed)."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise GraphIOError(f"cannot read token cache {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise GraphIOError(f"{path}: invalid JSON: {exc}") from exc
    if payload.get("version") != TOKEN_CACHE_VERSION:
        raise ValidationError(f"unsupported token cache version in {path}")
    expected = cache_key(g, M, m, s, seed)
    actual = {k: payload.get(k) for k in expected}
    if actual != expected:
        raise ValidationError(
            f"token cache {path} does not match the requested "
            f"(graph, M, m, s, seed)")
    specs = []
    for node_tokens in payload["tokens"]:
        toks = tuple(
            WalkSample(origin=int(t["origin"]), length=int(t["length"]),
                       repeat=int(t["repeat"]),
                       visited=frozenset(int(x) for x in t["visited"]),
                       walks=tuple(tuple(int(x) for x in w) for w in t["walks"]))
            for t in node_tokens
        )
        spec = TokenSequenceSpec(origin=toks[0].origin, ordered_tokens=toks,
                                 order_mode=OrderMode.REVERSE_HIERARCHY)
        spec.validate()
        specs.append(spec)
    return specs
