"""Encoder tests: adjacency normalization, propagation oracles, pooling."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grefgame.errors import ConfigurationError, ShapeError
from grefgame.gnn import (
    GcnEncoder,
    GcnLayer,
    encode,
    encode_features,
    glorot,
    new_encoder,
    normalized_adjacency,
    star_adjacency,
)
from grefgame.tensor import Tensor
from grefgame.world import ObjectSpec, build_graph

from conftest import check_grad

RNG = np.random.default_rng


def identity_encoder(dim: int, n_layers: int = 1, pooling: str = "mean") -> GcnEncoder:
    layers = [GcnLayer(Tensor(np.eye(dim), requires_grad=True), "identity") for _ in range(n_layers)]
    return GcnEncoder(layers, pooling=pooling)


def test_star_adjacency_hand_values():
    # 3 leaves + center: leaf self 1/2, center self 1/4, spokes 1/sqrt(8)
    got = star_adjacency(3)
    s = 1.0 / np.sqrt(8.0)
    want = np.array(
        [
            [0.5, 0.0, 0.0, s],
            [0.0, 0.5, 0.0, s],
            [0.0, 0.0, 0.5, s],
            [s, s, s, 0.25],
        ]
    )
    assert np.max(np.abs(got - want)) < 1e-12


def test_single_node_adjacency_is_one():
    graph = build_graph(ObjectSpec((0,)), 1, 1)
    solo = normalized_adjacency(
        type(graph)(num_nodes=1, edges=(), features=np.zeros((1, 2)))
    )
    assert solo.data.shape == (1, 1)
    assert solo.data[0, 0] == 1.0


@pytest.mark.parametrize("p", [1, 2, 3, 5])
def test_star_adjacency_symmetric_and_cached(p):
    a = star_adjacency(p)
    assert np.array_equal(a, a.T)
    assert star_adjacency(p) is a  # cached
    with pytest.raises(ValueError):
        a[0, 0] = 9.0  # read-only


def test_graph_adjacency_matches_star_helper():
    graph = build_graph(ObjectSpec((1, 3, 0)), 3, 4)
    assert np.array_equal(normalized_adjacency(graph).data, star_adjacency(3))


def test_one_layer_identity_weight_matches_dense_oracle():
    graph = build_graph(ObjectSpec((2, 0, 1)), 3, 4)
    enc = identity_encoder(graph.features.shape[1])
    got = encode(enc, graph).data
    a = star_adjacency(3)
    want = (a @ graph.features).mean(axis=0)
    assert np.max(np.abs(got - want)) < 1e-9


def test_two_layer_relu_matches_dense_oracle():
    rng = RNG(7)
    graph = build_graph(ObjectSpec((3, 1, 2)), 3, 4)
    enc = new_encoder(rng, in_dim=7, hidden_dim=5, out_dim=4)
    a = star_adjacency(3)
    h = np.maximum(a @ graph.features @ enc.layers[0].weight.data, 0.0)
    want = (a @ h @ enc.layers[1].weight.data).mean(axis=0)
    assert np.max(np.abs(encode(enc, graph).data - want)) < 1e-9


def test_new_encoder_keeps_last_layer_linear():
    enc = new_encoder(RNG(0), in_dim=6, hidden_dim=5, out_dim=3, n_layers=3)
    assert [layer.activation for layer in enc.layers] == ["relu", "relu", "identity"]
    assert [layer.weight.shape for layer in enc.layers] == [(6, 5), (5, 5), (5, 3)]
    solo = new_encoder(RNG(0), in_dim=6, hidden_dim=5, out_dim=3, n_layers=1)
    assert [layer.activation for layer in solo.layers] == ["identity"]
    with pytest.raises(ConfigurationError):
        new_encoder(RNG(0), in_dim=6, hidden_dim=5, out_dim=3, n_layers=0)


@given(perm=st.permutations(range(4)))
def test_node_relabeling_leaves_embedding_unchanged(perm):
    rng = RNG(13)
    graph = build_graph(ObjectSpec((0, 2, 3)), 3, 4)
    enc = new_encoder(rng, in_dim=7, hidden_dim=6, out_dim=5)
    base = encode(enc, graph).data
    perm = np.asarray(perm)
    feats = graph.features[perm]
    adj = star_adjacency(3)[np.ix_(perm, perm)]
    relabeled = encode_features(enc, feats, adj).data
    assert np.max(np.abs(base - relabeled)) < 1e-9


def test_batched_encode_matches_per_graph():
    rng = RNG(21)
    specs = [ObjectSpec(tuple(rng.integers(0, 4, size=3))) for _ in range(6)]
    graphs = [build_graph(s, 3, 4) for s in specs]
    enc = new_encoder(rng, in_dim=7, hidden_dim=5, out_dim=4)
    stacked = np.stack([g.features for g in graphs])
    batched = encode_features(enc, stacked, star_adjacency(3)).data
    assert batched.shape == (6, 4)
    for row, graph in zip(batched, graphs):
        assert np.array_equal(row, encode(enc, graph).data)


def test_pooling_variants_hand_values():
    graph = build_graph(ObjectSpec((0,)), 1, 2)
    # A_hat is all 0.5; propagated rows are both [0.5, 0.5, 0]
    for pooling, want in [("mean", 0.5), ("sum", 1.0), ("max", 0.5)]:
        enc = identity_encoder(3, pooling=pooling)
        got = encode(enc, graph).data
        assert np.allclose(got, [want, want, 0.0], atol=1e-12)


def test_feature_width_mismatch_is_shape_error():
    enc = identity_encoder(4)
    with pytest.raises(ShapeError, match="width"):
        encode_features(enc, np.zeros((2, 3, 7)), np.eye(3))


def test_layer_widths_must_chain():
    w1 = Tensor(np.zeros((3, 4)), requires_grad=True)
    w2 = Tensor(np.zeros((5, 2)), requires_grad=True)
    with pytest.raises(ShapeError, match="chain"):
        GcnEncoder([GcnLayer(w1), GcnLayer(w2)])


def test_unknown_activation_and_pooling_rejected():
    w = Tensor(np.zeros((3, 3)), requires_grad=True)
    with pytest.raises(ConfigurationError):
        GcnLayer(w, "sigmoid")
    with pytest.raises(ConfigurationError):
        GcnEncoder([GcnLayer(w)], pooling="median")


def test_glorot_bounds():
    w = glorot(RNG(3), 30, 50)
    limit = np.sqrt(6.0 / 80.0)
    assert w.shape == (30, 50)
    assert w.requires_grad
    assert np.all(np.abs(w.data) <= limit)


@pytest.mark.parametrize("pooling", ["mean", "sum", "max"])
def test_encoder_gradients_match_finite_differences(pooling):
    rng = RNG(5)
    enc = new_encoder(rng, in_dim=7, hidden_dim=4, out_dim=3, pooling=pooling)
    feats = np.stack(
        [build_graph(ObjectSpec(tuple(rng.integers(0, 4, size=3))), 3, 4).features for _ in range(3)]
    )
    probe = rng.normal(size=(3, 3))

    def build_loss():
        emb = encode_features(enc, feats, star_adjacency(3))
        return (emb * Tensor(probe)).sum()

    for layer in enc.layers:
        assert check_grad(build_loss, layer.weight) < 1e-4
