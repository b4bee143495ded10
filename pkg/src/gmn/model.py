"""Bidirectional selective-SSM model over graph token sequences.

A directional block runs LayerNorm -> input projection -> causal
depthwise convolution -> SiLU -> input-dependent (B, C, delta)
projections -> zero-order-hold discretization -> recurrent scan ->
multiplicative SiLU gate -> output projection.  The bidirectional module
runs one block forward and one on the reversed sequence, reverses the
second output back, sums, and projects.

Assembly: per node, the ordered token vectors form a sequence whose last
slot is the length-0 token; after the token-layer stack the final
position is read out as the node encoding.  Node encodings, arranged by
a structural ordering, then flow through node-as-token layers that scan
the whole graph.  With m = 0 the token stage degenerates to a learned
projection of the (PE-augmented) node features and only the node layers
remain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .config import TrainConfig
from .encoders import (MpnnWeights, PreparedTokens, RwfWeights, encode_prepared,
                       mpnn_node_states, prepare_tokens, walk_feature_dim)
from .errors import GraphIOError, ValidationError
from .graphs import Graph, NodeOrdering, node_ordering
from .ssm import (SSMParams, discretize, init_a_log, init_delta_bias,
                  scan_recurrent, selective_projection)
from .tokenizer import TokenSequenceSpec, derive_rng, tokenize_graph

_TAG_INIT = 4

CHECKPOINT_VERSION = "gmn_ckpt_v1"


@dataclass
class MambaBlockWeights:
    ln_scale: Tensor
    ln_shift: Tensor
    w_input: Tensor    # (d_model, d_inner)
    conv_w: Tensor     # (conv_width, d_inner), depthwise over the sequence axis
    conv_b: Tensor
    w_b: Tensor        # (d_inner, d_state)
    w_c: Tensor
    w_delta: Tensor    # (d_inner, d_inner)
    ssm: SSMParams
    w_gate: Tensor     # (d_model, d_inner)
    w_out_proj: Tensor  # (d_inner, d_model)


@dataclass
class BiMambaWeights:
    forward_block: MambaBlockWeights
    backward_block: MambaBlockWeights
    w_out: Tensor  # (d_model, d_model)
    tie_directions: bool = False


@dataclass
class LayerNormWeights:
    scale: Tensor
    shift: Tensor


@dataclass
class HeadWeights:
    w: Tensor
    b: Tensor


def depthwise_conv_causal(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-channel causal convolution over the sequence axis.

    x: (B, L, D); w: (k, D).  Left zero padding only, so position t
    never sees positions > t.
    """
    k = w.shape[0]
    B, L, D = x.shape
    if k > 1:
        xp = ad.concat([Tensor(np.zeros((B, k - 1, D))), x], axis=1)
    else:
        xp = x
    out = None
    for j in range(k):
        term = ad.mul(xp[:, j:j + L, :], w[j])
        out = term if out is None else ad.add(out, term)
    return ad.add(out, b)


def _block_batched(x: Tensor, w: MambaBlockWeights) -> Tensor:
    ln = ad.layer_norm(x, w.ln_scale, w.ln_shift)
    proj = ad.matmul(ln, w.w_input)
    phi_in = ad.silu(depthwise_conv_causal(proj, w.conv_w, w.conv_b))
    sel = selective_projection(phi_in, w.w_b, w.w_c, w.w_delta, w.ssm)
    disc = discretize(w.ssm, sel.Delta, sel.B)
    y = scan_recurrent(disc, sel.C, phi_in)
    gate = ad.silu(ad.matmul(ln, w.w_gate))
    return ad.matmul(ad.mul(y, gate), w.w_out_proj)


def mamba_block(x, w: MambaBlockWeights) -> Tensor:
    """One directional module; residual connections live at the stack level."""
    x = ad.as_tensor(x)
    if x.ndim == 2:
        return ad.reshape(_block_batched(ad.reshape(x, (1,) + x.shape), w), x.shape)
    if x.ndim == 3:
        return _block_batched(x, w)
    raise ValidationError(f"mamba_block expects (L, D) or (B, L, D), got {x.shape}")


def bimamba(x, w: BiMambaWeights) -> Tensor:
    """Forward scan + reversed backward scan, summed and projected."""
    x = ad.as_tensor(x)
    y_f = mamba_block(x, w.forward_block)
    y_b = ad.flip(mamba_block(ad.flip(x, axis=-2), w.backward_block), axis=-2)
    return ad.matmul(ad.add(y_f, y_b), w.w_out)


def run_stack(x: Tensor, layers: list[BiMambaWeights],
              final_ln: LayerNormWeights | None) -> Tensor:
    for layer in layers:
        x = ad.add(x, bimamba(x, layer))
    if final_ln is not None:
        x = ad.layer_norm(x, final_ln.scale, final_ln.shift)
    return x


# ---------------------------------------------------------------------------
# model construction


@dataclass
class GMNModel:
    config: TrainConfig
    params: ParameterStore
    token_layers: list[BiMambaWeights]
    node_layers: list[BiMambaWeights]
    token_final_ln: LayerNormWeights | None
    node_final_ln: LayerNormWeights | None
    encoder: RwfWeights | MpnnWeights | None
    input_proj: Tensor | None
    mpnn: MpnnWeights | None
    head: HeadWeights
    d_in: int
    out_dim: int


def _reg_linear(params: ParameterStore, rng, name: str, d1: int, d2: int) -> Tensor:
    return params.add(name, rng.normal(0.0, 1.0 / np.sqrt(d1), size=(d1, d2)))


def _build_block(params: ParameterStore, rng, prefix: str,
                 cfg: TrainConfig) -> MambaBlockWeights:
    d, di, N, k = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.conv_width
    return MambaBlockWeights(
        ln_scale=params.add(f"{prefix}.ln_scale", np.ones(d)),
        ln_shift=params.add(f"{prefix}.ln_shift", np.zeros(d)),
        w_input=_reg_linear(params, rng, f"{prefix}.w_input", d, di),
        conv_w=params.add(f"{prefix}.conv_w",
                          rng.normal(0.0, 1.0 / np.sqrt(k), size=(k, di))),
        conv_b=params.add(f"{prefix}.conv_b", np.zeros(di)),
        w_b=_reg_linear(params, rng, f"{prefix}.w_b", di, N),
        w_c=_reg_linear(params, rng, f"{prefix}.w_c", di, N),
        w_delta=_reg_linear(params, rng, f"{prefix}.w_delta", di, di),
        ssm=SSMParams(
            a_log=params.add(f"{prefix}.a_log", init_a_log(di, N)),
            delta_bias=params.add(f"{prefix}.delta_bias", init_delta_bias(di, rng)),
        ),
        w_gate=_reg_linear(params, rng, f"{prefix}.w_gate", d, di),
        w_out_proj=_reg_linear(params, rng, f"{prefix}.w_out_proj", di, d),
    )


def build_bimamba(params: ParameterStore, rng, prefix: str, cfg: TrainConfig,
                  tie_directions: bool = False) -> BiMambaWeights:
    fwd = _build_block(params, rng, f"{prefix}.fwd", cfg)
    bwd = fwd if tie_directions else _build_block(params, rng, f"{prefix}.bwd", cfg)
    w_out = _reg_linear(params, rng, f"{prefix}.w_out", cfg.d_model, cfg.d_model)
    return BiMambaWeights(forward_block=fwd, backward_block=bwd, w_out=w_out,
                          tie_directions=tie_directions)


def _build_mpnn(params: ParameterStore, rng, prefix: str, d_in: int,
                d_model: int, rounds: int, activation: str = "silu") -> MpnnWeights:
    dims = [d_in] + [d_model] * rounds
    w_self, w_nbr, bias = [], [], []
    for r in range(rounds):
        w_self.append(_reg_linear(params, rng, f"{prefix}.{r}.w_self",
                                  dims[r], dims[r + 1]))
        w_nbr.append(_reg_linear(params, rng, f"{prefix}.{r}.w_nbr",
                                 dims[r], dims[r + 1]))
        bias.append(params.add(f"{prefix}.{r}.bias", np.zeros(dims[r + 1])))
    return MpnnWeights(w_self=w_self, w_nbr=w_nbr, bias=bias, activation=activation)


def build_rwf_weights(params: ParameterStore, rng, prefix: str, feat_dim: int,
                      d_model: int, window: int) -> RwfWeights:
    def conv_init(k, cin, cout):
        return rng.normal(0.0, 1.0 / np.sqrt(k * cin), size=(k, cin, cout))

    return RwfWeights(
        window=window,
        conv1_w=params.add(f"{prefix}.conv1_w", conv_init(window, feat_dim, d_model)),
        conv1_b=params.add(f"{prefix}.conv1_b", np.zeros(d_model)),
        conv2_w=params.add(f"{prefix}.conv2_w", conv_init(window, d_model, d_model)),
        conv2_b=params.add(f"{prefix}.conv2_b", np.zeros(d_model)),
    )


def build_model(cfg: TrainConfig, d_in: int, out_dim: int,
                d_edge: int = 0) -> GMNModel:
    """Construct and initialize all weights from the config seed.

    d_in is the node feature width after any PE concatenation; out_dim
    is the class count (classification) or target width (regression).
    """
    params = ParameterStore()
    rng = derive_rng(_TAG_INIT, cfg.seed)
    encoder: RwfWeights | MpnnWeights | None = None
    input_proj: Tensor | None = None
    if cfg.m >= 1:
        if cfg.encoder.kind == "rwf":
            feat = walk_feature_dim(d_in, d_edge, cfg.encoder.window)
            encoder = build_rwf_weights(params, rng, "encoder", feat,
                                        cfg.d_model, cfg.encoder.window)
        else:
            encoder = _build_mpnn(params, rng, "encoder", d_in, cfg.d_model,
                                  cfg.encoder.rounds)
    else:
        input_proj = _reg_linear(params, rng, "input_proj.w", d_in, cfg.d_model)
    token_layers = [build_bimamba(params, rng, f"token_layers.{i}", cfg)
                    for i in range(cfg.n_token_layers)]
    token_final_ln = None
    if token_layers:
        token_final_ln = LayerNormWeights(
            scale=params.add("token_final_ln.scale", np.ones(cfg.d_model)),
            shift=params.add("token_final_ln.shift", np.zeros(cfg.d_model)))
    node_layers = [build_bimamba(params, rng, f"node_layers.{i}", cfg)
                   for i in range(cfg.n_node_layers)]
    node_final_ln = None
    if node_layers:
        node_final_ln = LayerNormWeights(
            scale=params.add("node_final_ln.scale", np.ones(cfg.d_model)),
            shift=params.add("node_final_ln.shift", np.zeros(cfg.d_model)))
    mpnn = None
    if cfg.mpnn.enabled:
        mpnn = _build_mpnn(params, rng, "mpnn", d_in, cfg.d_model, cfg.mpnn.rounds)
    head = HeadWeights(
        w=_reg_linear(params, rng, "head.w", cfg.d_model, out_dim),
        b=params.add("head.b", np.zeros(out_dim)),
    )
    return GMNModel(config=cfg, params=params, token_layers=token_layers,
                    node_layers=node_layers, token_final_ln=token_final_ln,
                    node_final_ln=node_final_ln, encoder=encoder,
                    input_proj=input_proj, mpnn=mpnn, head=head,
                    d_in=d_in, out_dim=out_dim)


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class PreparedGraph:
    """Frozen per-graph arrays reused across epochs."""

    graph: Graph                 # PE-augmented
    tokens: PreparedTokens | None
    perm: np.ndarray
    inv_perm: np.ndarray


def prepare_graph(model: GMNModel, g: Graph,
                  specs: list[TokenSequenceSpec] | None = None,
                  ordering: NodeOrdering | None = None) -> PreparedGraph:
    """Tokenize (unless given) and build the constant forward-pass arrays.

    ``g`` must already carry any positional encoding in its features.
    """
    cfg = model.config
    if ordering is None:
        ordering = node_ordering(g, cfg.ordering)
    perm = ordering.permutation
    inv_perm = np.empty_like(perm)
    inv_perm[perm] = np.arange(len(perm))
    tokens = None
    if cfg.m >= 1:
        if specs is None:
            specs = tokenize_graph(g, cfg.M, cfg.m, cfg.s, cfg.seed)
        if len(specs) != g.num_nodes:
            raise ValidationError("one token sequence per node is required")
        for spec in specs:
            if len(spec.ordered_tokens) != cfg.seq_len:
                raise ValidationError(
                    f"token sequence length {len(spec.ordered_tokens)} does not "
                    f"match config s*m+1 = {cfg.seq_len}")
        tokens = prepare_tokens(g, specs, cfg.encoder.kind,
                                window=cfg.encoder.window)
    return PreparedGraph(graph=g, tokens=tokens, perm=perm, inv_perm=inv_perm)


def node_encodings(model: GMNModel, prep: PreparedGraph) -> Tensor:
    """Per-node encodings (n, d_model) for one prepared graph."""
    cfg = model.config
    g = prep.graph
    if cfg.m >= 1:
        tok = encode_prepared(prep.tokens, model.encoder)  # (n, L, d_model)
        out = run_stack(tok, model.token_layers, model.token_final_ln)
        enc = out[:, -1, :]  # the length-0 token slot
    else:
        enc = ad.matmul(Tensor(g.node_features), model.input_proj)
    if model.node_layers:
        h = ad.index_rows(enc, prep.perm)
        h = ad.reshape(h, (1,) + h.shape)
        h = run_stack(h, model.node_layers, model.node_final_ln)
        h = ad.reshape(h, (g.num_nodes, cfg.d_model))
        enc = ad.index_rows(h, prep.inv_perm)
    if model.mpnn is not None:
        enc = ad.add(enc, mpnn_node_states(g, g.node_features, model.mpnn))
    return enc


def gmn_forward(g: Graph, model: GMNModel,
                tokens: list[TokenSequenceSpec] | None = None,
                ordering: NodeOrdering | None = None) -> Tensor:
    """Full forward pass from a (PE-augmented) graph to node encodings."""
    return node_encodings(model, prepare_graph(model, g, tokens, ordering))


def mpnn_augment(g: Graph, features: np.ndarray, weights: MpnnWeights) -> Tensor:
    """Whole-graph message passing, no pooling; added to node encodings."""
    return mpnn_node_states(g, features, weights)


def readout(encodings: Tensor, task: str, head: HeadWeights) -> Tensor:
    """Task head: per-node or pooled predictions.

    node_class -> (n, C) softmax rows; graph_class -> (C,) softmax;
    graph_reg -> (out_dim,) raw values.
    """
    if task == "node_class":
        return ad.softmax(ad.add(ad.matmul(encodings, head.w), head.b))
    pooled = ad.mean(encodings, axis=0)
    logits = ad.add(ad.matmul(pooled, head.w), head.b)
    if task == "graph_class":
        return ad.softmax(logits)
    if task == "graph_reg":
        return logits
    raise ValidationError(f"unknown task {task!r}")


def head_logits(encodings: Tensor, task: str, head: HeadWeights) -> Tensor:
    """Pre-softmax head outputs, shared by the losses."""
    if task == "node_class":
        return ad.add(ad.matmul(encodings, head.w), head.b)
    pooled = ad.mean(encodings, axis=0)
    return ad.add(ad.matmul(pooled, head.w), head.b)


# ---------------------------------------------------------------------------
# checkpoint IO


def save_checkpoint(model: GMNModel, path: str | Path) -> None:
    payload = {
        "format": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "d_in": model.d_in,
        "out_dim": model.out_dim,
        "weights": {
            name: {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
            for name, p in model.params.items()
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_checkpoint(path: str | Path) -> GMNModel:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise GraphIOError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise GraphIOError(f"{path}: invalid JSON: {exc}") from exc
    if payload.get("format") != CHECKPOINT_VERSION:
        raise ValidationError(
            f"unsupported checkpoint format {payload.get('format')!r}")
    cfg = TrainConfig.from_dict(payload["config"])
    d_edge = 0
    weights = payload["weights"]
    if "encoder.conv1_w" in weights and cfg.m >= 1 and cfg.encoder.kind == "rwf":
        feat = weights["encoder.conv1_w"]["shape"][1]
        d_edge = feat - walk_feature_dim(payload["d_in"], 0, cfg.encoder.window)
    model = build_model(cfg, int(payload["d_in"]), int(payload["out_dim"]),
                        d_edge=d_edge)
    state = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in weights.items()
    }
    model.params.load_state_dict(state)
    return model
