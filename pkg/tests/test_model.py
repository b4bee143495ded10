"""Directional block, bidirectional module, full assembly, heads, and
checkpoints."""

import numpy as np
import pytest

from gmn import autodiff as ad
from gmn.autodiff import ParameterStore, Tensor
from gmn.config import EncoderConfig, PEConfig, TrainConfig
from gmn.datasets import complete_graph, cycle_graph
from gmn.errors import ValidationError
from gmn.graphs import make_graph, node_ordering
from gmn.model import (bimamba, build_bimamba, build_model, gmn_forward,
                       load_checkpoint, mamba_block, mpnn_augment,
                       node_encodings, prepare_graph, readout, run_stack,
                       save_checkpoint, HeadWeights)
from gmn.tokenizer import WalkSample, TokenSequenceSpec, OrderMode, derive_rng, tokenize_graph

RNG = np.random.default_rng(2718)


def small_cfg(**kw):
    base = dict(M=3, m=2, s=1, d_model=6, d_state=4, conv_width=3, expansion=2,
                n_token_layers=1, n_node_layers=1, task="node_class",
                pe=PEConfig(mode="none"), encoder=EncoderConfig(kind="rwf", window=3),
                seed=11)
    base.update(kw)
    return TrainConfig(**base)


def fresh_block(cfg=None, seed=0):
    cfg = cfg or small_cfg()
    return build_bimamba(ParameterStore(), derive_rng(55, seed), "blk", cfg)


def np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_silu(x):
    return x * np_sigmoid(x)


class TestMambaBlock:
    def test_zero_input_zero_output(self):
        w = fresh_block().forward_block
        w.ln_shift.data[:] = 0.0
        w.conv_b.data[:] = 0.0
        y = mamba_block(np.zeros((4, 6)), w)
        np.testing.assert_allclose(y.data, 0.0, atol=1e-15)

    def test_single_position_hand_composed_oracle(self):
        # Recompute the five stages with plain numpy for L = 1.
        w = fresh_block(seed=3).forward_block
        x = RNG.normal(size=(1, 6))
        ln_in = (x - x.mean(-1, keepdims=True)) / np.sqrt(
            x.var(-1, keepdims=True) + 1e-5)
        ln = ln_in * w.ln_scale.data + w.ln_shift.data
        proj = ln @ w.w_input.data
        conv = proj * w.conv_w.data[-1] + w.conv_b.data  # only causal tap
        phi_in = np_silu(conv)
        B = phi_in @ w.w_b.data
        C = phi_in @ w.w_c.data
        delta = np.log1p(np.exp(phi_in @ w.w_delta.data + w.ssm.delta_bias.data))
        a = -np.exp(w.ssm.a_log.data)
        t = delta[0, :, None] * a
        a_bar = np.exp(t)
        b_bar = delta[0, :, None] * B[0, None, :] * (np.expm1(t) / t)
        h = b_bar * phi_in[0, :, None]  # h_0 = 0, single step
        y = h @ C[0]
        gate = np_silu(ln @ w.w_gate.data)
        expected = (y * gate) @ w.w_out_proj.data
        got = mamba_block(x, w).data
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_causality_exact(self):
        w = fresh_block(seed=5).forward_block
        x = RNG.normal(size=(9, 6))
        base = mamba_block(x, w).data
        t_cut = 4
        x2 = x.copy()
        x2[t_cut:] += RNG.normal(size=(9 - t_cut, 6))
        pert = mamba_block(x2, w).data
        np.testing.assert_array_equal(base[:t_cut], pert[:t_cut])
        assert np.any(base[t_cut:] != pert[t_cut:])


class TestBiMamba:
    def test_single_position_tied_doubles_block(self):
        cfg = small_cfg()
        w = build_bimamba(ParameterStore(), derive_rng(55, 9), "b", cfg,
                          tie_directions=True)
        x = RNG.normal(size=(1, 6))
        blk = mamba_block(x, w.forward_block).data
        expected = (2.0 * blk) @ w.w_out.data
        np.testing.assert_allclose(bimamba(x, w).data, expected, atol=1e-13)

    def test_reversal_equivariance_with_tied_weights(self):
        cfg = small_cfg()
        w = build_bimamba(ParameterStore(), derive_rng(55, 10), "b", cfg,
                          tie_directions=True)
        for trial in range(5):
            x = np.random.default_rng(trial).normal(size=(7, 6))
            lhs = bimamba(x[::-1].copy(), w).data
            rhs = bimamba(x, w).data[::-1]
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_untied_bidirectional_differs_from_forward_only(self):
        w = fresh_block(seed=12)
        x = np.zeros((5, 6))
        x[0, 0] = 1.0  # asymmetric sequence
        fwd_only = mamba_block(x, w.forward_block).data @ w.w_out.data
        bi = bimamba(x, w).data
        assert np.max(np.abs(fwd_only - bi)) > 1e-8


class TestForwardAssembly:
    def test_output_shape_contract(self):
        for n, m, s in ((1, 1, 1), (5, 2, 2), (4, 3, 1)):
            cfg = small_cfg(m=m, s=s)
            edges = [(i, i + 1) for i in range(n - 1)]
            g = make_graph(n, edges)
            model = build_model(cfg, 1, 2)
            enc = gmn_forward(g, model)
            assert enc.shape == (n, cfg.d_model)

    def test_m0_matches_node_layer_only_pipeline(self):
        cfg = small_cfg(m=0, s=1, n_token_layers=0, n_node_layers=2)
        g = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 3)])
        model = build_model(cfg, 1, 2)
        got = gmn_forward(g, model).data
        # Independent composition: projection, ordered node stack, unpermute.
        ordering = node_ordering(g, cfg.ordering)
        inv = np.empty_like(ordering.permutation)
        inv[ordering.permutation] = np.arange(5)
        enc = Tensor(g.node_features) @ model.input_proj
        h = ad.reshape(ad.index_rows(enc, ordering.permutation), (1, 5, cfg.d_model))
        h = run_stack(h, model.node_layers, model.node_final_ln)
        expected = ad.index_rows(ad.reshape(h, (5, cfg.d_model)), inv).data
        np.testing.assert_array_equal(got, expected)

    def test_single_node_m0_is_bimamba_composition(self):
        cfg = small_cfg(m=0, s=1, n_token_layers=0, n_node_layers=1)
        g = make_graph(1, [])
        model = build_model(cfg, 1, 2)
        got = gmn_forward(g, model).data
        x = ad.reshape(Tensor(g.node_features) @ model.input_proj, (1, 1, cfg.d_model))
        x = ad.add(x, bimamba(x, model.node_layers[0]))
        x = ad.layer_norm(x, model.node_final_ln.scale, model.node_final_ln.shift)
        np.testing.assert_allclose(got, x.data.reshape(1, cfg.d_model), atol=1e-14)

    def test_twin_nodes_equal_encodings_without_node_layers(self):
        # Two disjoint triangles; node 3 mirrors node 0's token walks.
        cfg = small_cfg(m=2, s=1, n_token_layers=2, n_node_layers=0)
        g = make_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
        model = build_model(cfg, 1, 2)
        specs = tokenize_graph(g, cfg.M, cfg.m, cfg.s, cfg.seed)

        def mirror(spec):
            toks = tuple(
                WalkSample(origin=t.origin + 3, length=t.length, repeat=t.repeat,
                           visited=frozenset(u + 3 for u in t.visited),
                           walks=tuple(tuple(u + 3 for u in w) for w in t.walks))
                for t in spec.ordered_tokens)
            return TokenSequenceSpec(origin=spec.origin + 3, ordered_tokens=toks,
                                     order_mode=OrderMode.REVERSE_HIERARCHY)

        specs[3] = mirror(specs[0])
        enc = gmn_forward(g, model, tokens=specs).data
        np.testing.assert_allclose(enc[0], enc[3], atol=1e-14)

    def test_length_zero_token_must_sit_last(self):
        cfg = small_cfg()
        g = cycle_graph(5)
        model = build_model(cfg, 1, 2)
        specs = tokenize_graph(g, cfg.M, cfg.m, cfg.s, cfg.seed)
        bad = list(specs)
        toks = list(bad[0].ordered_tokens)
        toks[0], toks[-1] = toks[-1], toks[0]
        bad[0] = TokenSequenceSpec(origin=bad[0].origin, ordered_tokens=tuple(toks),
                                   order_mode=OrderMode.REVERSE_HIERARCHY)
        with pytest.raises(ValidationError):
            gmn_forward(g, model, tokens=bad)

    def test_permuting_nonfinal_tokens_changes_encoding(self):
        cfg = small_cfg(m=2, s=2, M=1, n_node_layers=0)
        # Distinct nonzero per-node features so different walk unions
        # encode differently (on a constant-feature cycle they would not).
        g = make_graph(8, [(i, (i + 1) % 8) for i in range(8)],
                       node_features=np.arange(1.0, 9.0).reshape(8, 1))
        model = build_model(cfg, 1, 2)
        specs = tokenize_graph(g, cfg.M, cfg.m, cfg.s, cfg.seed)
        enc = gmn_forward(g, model, tokens=specs).data
        toks = list(specs[0].ordered_tokens)
        assert toks[2].visited != toks[3].visited  # M=1 unions differ
        toks[2], toks[3] = toks[3], toks[2]  # same length block, new order
        swapped = list(specs)
        swapped[0] = TokenSequenceSpec(origin=specs[0].origin,
                                       ordered_tokens=tuple(toks),
                                       order_mode=OrderMode.REVERSE_HIERARCHY)
        enc2 = gmn_forward(g, model, tokens=swapped).data
        assert np.max(np.abs(enc[0] - enc2[0])) > 1e-10

    def test_zeroed_selection_ignores_nonfinal_token_content(self):
        cfg = small_cfg(m=2, s=1, M=2, n_token_layers=2, n_node_layers=1)
        g = cycle_graph(9)
        model = build_model(cfg, 1, 2)
        for name in model.params.names():
            if name.endswith(".w_b") or name.endswith(".w_c"):
                model.params[name].data[:] = 0.0
        enc_a = gmn_forward(g, model,
                            tokens=tokenize_graph(g, 2, 2, 1, rng_seed=1)).data
        enc_b = gmn_forward(g, model,
                            tokens=tokenize_graph(g, 2, 2, 1, rng_seed=2)).data
        np.testing.assert_allclose(enc_a, enc_b, atol=1e-14)


class TestMpnnAugment:
    def test_zero_weights_change_nothing(self):
        from gmn.config import MpnnConfig

        cfg = small_cfg(mpnn=MpnnConfig(enabled=True, rounds=2))
        g = cycle_graph(6)
        model = build_model(cfg, 1, 2)
        for name in model.params.names():
            if name.startswith("mpnn."):
                model.params[name].data[:] = 0.0
        with_zero = gmn_forward(g, model).data
        mpnn_weights = model.mpnn
        model.mpnn = None
        without = gmn_forward(g, model).data
        model.mpnn = mpnn_weights
        np.testing.assert_array_equal(with_zero, without)

    def test_k2_hand_computed_states(self):
        from gmn.encoders import MpnnWeights

        g = make_graph(2, [(0, 1)], node_features=np.array([[1.0], [3.0]]))
        w = MpnnWeights(w_self=[Tensor(np.ones((1, 1)))],
                        w_nbr=[Tensor(np.ones((1, 1)))],
                        bias=[Tensor(np.zeros(1))], activation="identity")
        out = mpnn_augment(g, g.node_features, w).data
        np.testing.assert_allclose(out, [[4.0], [4.0]])

    def test_edgeless_graph_only_self_path(self):
        from gmn.encoders import MpnnWeights

        g = make_graph(3, [], node_features=np.array([[1.0], [2.0], [3.0]]))
        w = MpnnWeights(w_self=[Tensor(np.full((1, 1), 2.0))],
                        w_nbr=[Tensor(np.full((1, 1), 555.0))],
                        bias=[Tensor(np.zeros(1))], activation="identity")
        out = mpnn_augment(g, g.node_features, w).data
        np.testing.assert_allclose(out, [[2.0], [4.0], [6.0]])


class TestReadout:
    def test_zero_head_uniform_probabilities(self):
        head = HeadWeights(w=Tensor(np.zeros((6, 4))), b=Tensor(np.zeros(4)))
        enc = Tensor(RNG.normal(size=(5, 6)))
        probs = readout(enc, "node_class", head).data
        np.testing.assert_allclose(probs, 0.25, atol=1e-15)

    def test_softmax_rows_sum_to_one(self):
        head = HeadWeights(w=Tensor(RNG.normal(size=(6, 3)) * 10),
                           b=Tensor(RNG.normal(size=3)))
        probs = readout(Tensor(RNG.normal(size=(7, 6)) * 5), "node_class", head).data
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)

    def test_graph_reg_pooling_fixed_point(self):
        head = HeadWeights(w=Tensor(RNG.normal(size=(6, 1))),
                           b=Tensor(RNG.normal(size=1)))
        e = RNG.normal(size=6)
        enc = Tensor(np.tile(e, (4, 1)))
        pred = readout(enc, "graph_reg", head).data
        np.testing.assert_allclose(pred, e @ head.w.data + head.b.data, atol=1e-12)

    def test_unknown_task_rejected(self):
        head = HeadWeights(w=Tensor(np.zeros((2, 2))), b=Tensor(np.zeros(2)))
        with pytest.raises(ValidationError):
            readout(Tensor(np.zeros((2, 2))), "link_pred", head)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        cfg = small_cfg(pe=PEConfig(mode="rwse", k=3))
        model = build_model(cfg, 4, 3)
        path = tmp_path / "ckpt.json"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.params.names() == model.params.names()
        for name, p in model.params.items():
            np.testing.assert_array_equal(p.data, loaded.params[name].data)
        assert loaded.config == model.config
        assert path.read_text().find("gmn_ckpt_v1") >= 0

    def test_loaded_model_reproduces_forward(self, tmp_path):
        cfg = small_cfg()
        g = cycle_graph(6)
        model = build_model(cfg, 1, 2)
        enc = gmn_forward(g, model).data
        save_checkpoint(model, tmp_path / "c.json")
        loaded = load_checkpoint(tmp_path / "c.json")
        np.testing.assert_array_equal(gmn_forward(g, loaded).data, enc)

    def test_bad_format_rejected(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text('{"format": "other_v9"}')
        with pytest.raises(ValidationError):
            load_checkpoint(p)
