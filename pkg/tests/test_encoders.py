"""Walk feature construction and both token encoders."""

import numpy as np
import pytest

from gmn import autodiff as ad
from gmn.autodiff import ParameterStore, Tensor
from gmn.datasets import complete_graph, cycle_graph, path_graph
from gmn.encoders import (MpnnWeights, build_walk_features, encode_mpnn,
                          encode_prepared, encode_rwf, prepare_tokens,
                          walk_feature_dim)
from gmn.errors import ValidationError
from gmn.graphs import induce_subgraph, make_graph, permute_graph
from gmn.model import build_rwf_weights
from gmn.tokenizer import derive_rng, tokenize_graph


def rwf_weights(feat_dim, d_model=6, window=3, seed=0):
    return build_rwf_weights(ParameterStore(), derive_rng(123, seed), "w",
                             feat_dim, d_model, window)


def mpnn_weights_from(arrays, activation="silu"):
    w_self, w_nbr, bias = [], [], []
    for ws, wn, b in arrays:
        w_self.append(Tensor(np.asarray(ws, dtype=float), requires_grad=True))
        w_nbr.append(Tensor(np.asarray(wn, dtype=float), requires_grad=True))
        bias.append(Tensor(np.asarray(b, dtype=float), requires_grad=True))
    return MpnnWeights(w_self=w_self, w_nbr=w_nbr, bias=bias, activation=activation)


class TestWalkFeatures:
    def test_single_node_walk_all_flags_zero(self):
        g = cycle_graph(5)
        wf = build_walk_features(g, [2], w=4)
        assert wf.matrix.shape == (1, 1 + 2 * 3)
        np.testing.assert_array_equal(wf.matrix[0, 1:], 0.0)
        np.testing.assert_array_equal(wf.matrix[0, :1], 1.0)

    def test_triangle_closure_sets_offset3_identity(self):
        g = complete_graph(3)
        wf = build_walk_features(g, [0, 1, 2, 0], w=4)
        d = 1  # feature width
        id_cols = slice(d, d + 3)
        # row 3 revisits the node from 3 steps earlier
        assert wf.matrix[3, id_cols.start + 2] == 1.0
        # and is adjacent to both earlier walk nodes
        adj_cols_start = d + 3
        np.testing.assert_array_equal(wf.matrix[3, adj_cols_start:adj_cols_start + 2],
                                      [1.0, 1.0])

    def test_p3_backtrack_flags(self):
        g = path_graph(3)
        wf = build_walk_features(g, [0, 1, 0], w=3)
        d = 1
        # row 2: same node as two steps back, adjacent to one step back
        assert wf.matrix[2, d + 1] == 1.0       # identity offset 2
        assert wf.matrix[2, d + 2] == 1.0       # adjacency offset 1
        assert wf.matrix[2, d + 0] == 0.0       # identity offset 1
        assert wf.matrix[2, d + 3] == 0.0       # adjacency offset 2 (self)

    def test_flags_zero_beyond_prefix(self):
        g = path_graph(4)
        wf = build_walk_features(g, [0, 1], w=4)
        # offsets 2 and 3 reach past the walk start on row 1
        d = 1
        np.testing.assert_array_equal(wf.matrix[1, d + 1:d + 3], 0.0)

    def test_nonadjacent_step_rejected(self):
        g = path_graph(4)
        with pytest.raises(ValidationError):
            build_walk_features(g, [0, 2], w=3)
        with pytest.raises(ValidationError):
            build_walk_features(g, [0, 0], w=3)  # 0 is not a dead end

    def test_dead_end_repeat_allowed(self):
        g = make_graph(2, [])
        wf = build_walk_features(g, [0, 0, 0], w=3)
        assert wf.matrix.shape[0] == 3
        # staying put is a revisit at every offset
        assert wf.matrix[1, 1] == 1.0 and wf.matrix[2, 2] == 1.0

    def test_edge_features_inserted_along_walk(self):
        g = make_graph(3, [(0, 1), (1, 2)],
                       edge_features=np.array([[10.0], [20.0]]))
        wf = build_walk_features(g, [0, 1, 2], w=2)
        assert wf.matrix.shape[1] == walk_feature_dim(1, 1, 2)
        np.testing.assert_array_equal(wf.matrix[:, 1], [0.0, 10.0, 20.0])

    def test_flags_invariant_under_relabeling(self):
        g = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)])
        perm = np.array([3, 0, 4, 1, 2])
        relabeled = permute_graph(g, perm)
        walk = [0, 1, 2, 1]
        mapped = [int(perm[v]) for v in walk]
        np.testing.assert_array_equal(build_walk_features(g, walk, 4).matrix,
                                      build_walk_features(relabeled, mapped, 4).matrix)


class TestMpnnEncoder:
    def test_zero_weights_zero_token(self):
        g = make_graph(1, [])
        w = mpnn_weights_from([(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(3))],
                              activation="identity")
        vec = encode_mpnn(g, 1, w)
        np.testing.assert_array_equal(vec.data, np.zeros(3))

    def test_identity_bypass_is_feature_mean(self):
        g = make_graph(3, [(0, 1), (1, 2)],
                       node_features=np.array([[1.0], [5.0], [9.0]]))
        w = mpnn_weights_from([(np.eye(1), np.zeros((1, 1)), np.zeros(1))],
                              activation="identity")
        np.testing.assert_allclose(encode_mpnn(g, 1, w).data, [5.0])

    def test_k2_hand_computed(self):
        # W_self = W_nbr = [1], identity act: states 1+3=4 and 3+1=4.
        g = make_graph(2, [(0, 1)], node_features=np.array([[1.0], [3.0]]))
        w = mpnn_weights_from([(np.ones((1, 1)), np.ones((1, 1)), np.zeros(1))],
                              activation="identity")
        np.testing.assert_allclose(encode_mpnn(g, 1, w).data, [4.0])

    def test_isolated_node_uses_zero_neighbor_term(self):
        g = make_graph(2, [], node_features=np.array([[2.0], [4.0]]))
        w = mpnn_weights_from([(np.eye(1) * 3, np.ones((1, 1)) * 100, np.zeros(1))],
                              activation="identity")
        np.testing.assert_allclose(encode_mpnn(g, 1, w).data, [9.0])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        g = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)],
                       node_features=rng.normal(size=(5, 2)))
        w = mpnn_weights_from([
            (rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), rng.normal(size=4)),
            (rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), rng.normal(size=4)),
        ])
        base = encode_mpnn(g, 2, w).data
        for _ in range(4):
            perm = rng.permutation(5)
            np.testing.assert_allclose(
                encode_mpnn(permute_graph(g, perm), 2, w).data, base, atol=1e-12)

    def test_rounds_mismatch_rejected(self):
        g = complete_graph(3)
        w = mpnn_weights_from([(np.ones((1, 2)), np.ones((1, 2)), np.zeros(2))])
        with pytest.raises(ValidationError):
            encode_mpnn(g, 2, w)

    def test_feature_dim_mismatch_rejected(self):
        g = make_graph(2, [(0, 1)], node_features=np.ones((2, 3)))
        w = mpnn_weights_from([(np.ones((1, 2)), np.ones((1, 2)), np.zeros(2))])
        with pytest.raises(ValidationError):
            encode_mpnn(g, 1, w)


class TestRwfEncoder:
    def test_zero_features_zero_bias_zero_token(self):
        g = make_graph(3, [(0, 1), (1, 2)], node_features=np.zeros((3, 2)))
        # Zero the flag columns' influence by a zero-feature straight walk.
        wf = build_walk_features(g, [0, 1, 2], w=2)
        wf.matrix[:, :] = 0.0
        w = rwf_weights(wf.matrix.shape[1], window=2)
        vec = encode_rwf([wf], w)
        np.testing.assert_allclose(vec.data, 0.0, atol=1e-15)

    def test_single_origin_walk_is_projection_of_origin(self):
        g = make_graph(4, [(0, 1), (1, 2), (2, 3)],
                       node_features=np.array([[2.0], [7.0], [1.0], [3.0]]))
        w = rwf_weights(walk_feature_dim(1, 0, 3), window=3)
        wf = build_walk_features(g, [1], w=3)
        vec = encode_rwf([wf], w).data
        # Hand-composed: with causal padding only the last kernel tap sees
        # the single row; conv -> SiLU -> conv on that row alone.
        row = wf.matrix[0]
        h = row @ w.conv1_w.data[-1] + w.conv1_b.data
        h = h / (1.0 + np.exp(-h)) * 1.0  # silu = x * sigmoid(x)
        expected = h @ w.conv2_w.data[-1] + w.conv2_b.data
        np.testing.assert_allclose(vec, expected, atol=1e-12)

    def test_empty_walk_list_rejected(self):
        w = rwf_weights(5)
        with pytest.raises(ValidationError):
            encode_rwf([], w)

    def test_triangle_vs_c6_walk_multisets_differ(self):
        # Length-3 walks on K3 can close a triangle (identity flag at
        # offset 3); on C6 they never can.  Enumerate all walks of
        # length 3 from one node and compare flag-pattern multisets.
        from gmn.expressiveness import enumerate_walks

        tri, c6 = complete_graph(3), cycle_graph(6)
        def multiset(g):
            mats = [tuple(build_walk_features(g, w, 4).matrix.ravel())
                    for w in enumerate_walks(g, 0, 3)]
            return sorted(mats)

        assert multiset(tri) != multiset(c6)
        tri_flags = np.array(multiset(tri))
        # identity-offset-3 column on row 3 is hot for some triangle walk
        d = 1
        col = 3 * (d + 6) + d + 2
        assert tri_flags[:, col].max() == 1.0
        c6_flags = np.array(multiset(c6))
        assert c6_flags[:, col].max() == 0.0

    def test_token_vector_width_and_mean_over_walks(self):
        g = complete_graph(4)
        w = rwf_weights(walk_feature_dim(1, 0, 3), d_model=5, window=3)
        walks = [build_walk_features(g, [0, 1, 2], 3),
                 build_walk_features(g, [0, 2, 3], 3)]
        both = encode_rwf(walks, w).data
        singles = [encode_rwf([wf], w).data for wf in walks]
        np.testing.assert_allclose(both, np.mean(singles, axis=0), atol=1e-12)
        assert both.shape == (5,)


class TestBatchedEncoding:
    def test_batch_matches_single_token_calls(self):
        g = make_graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3)],
                       node_features=np.random.default_rng(3).normal(size=(6, 2)))
        specs = tokenize_graph(g, M=3, m=2, s=2, rng_seed=17)
        w = rwf_weights(walk_feature_dim(2, 0, 3), d_model=4, window=3)
        prep = prepare_tokens(g, specs, "rwf", window=3)
        batched = encode_prepared(prep, w).data
        assert batched.shape == (6, 5, 4)
        for v in range(6):
            for j, tok in enumerate(specs[v].ordered_tokens):
                feats = [build_walk_features(g, wk, 3) for wk in tok.walks]
                single = encode_rwf(feats, w).data
                np.testing.assert_allclose(batched[v, j], single, atol=1e-12)

    def test_mpnn_batch_matches_single_token_calls(self):
        rng = np.random.default_rng(9)
        g = make_graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3)],
                       node_features=rng.normal(size=(6, 2)))
        specs = tokenize_graph(g, M=3, m=2, s=1, rng_seed=4)
        w = mpnn_weights_from([
            (rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), rng.normal(size=4)),
            (rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), rng.normal(size=4)),
        ])
        prep = prepare_tokens(g, specs, "mpnn")
        batched = encode_prepared(prep, w).data
        for v in range(6):
            for j, tok in enumerate(specs[v].ordered_tokens):
                sub = induce_subgraph(g, tok.visited)
                single = encode_mpnn(sub, 2, w).data
                np.testing.assert_allclose(batched[v, j], single, atol=1e-12)
