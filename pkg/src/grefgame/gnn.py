"""Graph convolutional encoder with symmetric-normalized propagation.

Each layer computes act(A_hat @ H @ W) where A_hat is the
degree-normalized adjacency with self-loops; node rows are then pooled
into one embedding per graph. Mean pooling is the default readout.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, ShapeError
from .tensor import Tensor, matmul, mean_rows
from .world import PropertyGraph

ACTIVATIONS = ("relu", "identity")
POOLINGS = ("mean", "sum", "max")


@dataclass
class GcnLayer:
    weight: Tensor  # (d_in, d_out)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")


class GcnEncoder:
    """Stack of GCN layers plus a pooling readout."""

    def __init__(self, layers: list[GcnLayer], pooling: str = "mean"):
        if pooling not in POOLINGS:
            raise ConfigurationError(f"unknown pooling {pooling!r}")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ShapeError(
                    f"layer widths do not chain: {prev.weight.shape} then {nxt.weight.shape}"
                )
        self.layers = layers
        self.pooling = pooling

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def parameters(self) -> list[Tensor]:
        return [layer.weight for layer in self.layers]


def glorot(rng: np.random.Generator, d_in: int, d_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return Tensor(rng.uniform(-limit, limit, size=(d_in, d_out)), requires_grad=True)


def new_encoder(
    rng: np.random.Generator,
    in_dim: int,
    hidden_dim: int,
    out_dim: int,
    n_layers: int = 2,
    activation: str = "relu",
    pooling: str = "mean",
) -> GcnEncoder:
    """Glorot-initialized encoder; hidden layers share `hidden_dim`.

    The activation sits between layers only; the last layer is linear
    so embeddings span the full space (a final relu would confine them
    to the positive orthant and cap dot-product scores at zero).
    """
    if n_layers < 1:
        raise ConfigurationError("encoder needs at least one layer")
    widths = [in_dim] + [hidden_dim] * (n_layers - 1) + [out_dim]
    layers = [
        GcnLayer(glorot(rng, widths[i], widths[i + 1]),
                 activation if i < n_layers - 1 else "identity")
        for i in range(n_layers)
    ]
    return GcnEncoder(layers, pooling=pooling)


def normalized_adjacency(graph: PropertyGraph) -> Tensor:
    """D^-1/2 (A + I) D^-1/2 for the graph (self-loops added)."""
    return Tensor(_normalized_adjacency_array(graph.num_nodes, graph.edges))


def _normalized_adjacency_array(num_nodes: int, edges) -> np.ndarray:
    a = np.eye(num_nodes)
    for i, j in edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    inv_sqrt_deg = 1.0 / np.sqrt(a.sum(axis=1))
    return a * np.outer(inv_sqrt_deg, inv_sqrt_deg)


@lru_cache(maxsize=64)
def star_adjacency(p: int) -> np.ndarray:
    """Normalized adjacency shared by every p-property star graph."""
    arr = _normalized_adjacency_array(p + 1, tuple((i, p) for i in range(p)))
    arr.setflags(write=False)
    return arr


def encode_features(encoder: GcnEncoder, features, adjacency) -> Tensor:
    """Encode stacked graphs: features (..., n, f), adjacency (n, n).

    Leading axes batch over graphs; each slice is propagated
    independently, so the result per graph matches the single-graph
    path. Returns (..., out_dim) pooled embeddings.
    """
    h = features if isinstance(features, Tensor) else Tensor(features)
    a = adjacency if isinstance(adjacency, Tensor) else Tensor(adjacency)
    if h.shape[-1] != encoder.in_dim:
        raise ShapeError(
            f"feature width {h.shape[-1]} does not match encoder input width {encoder.in_dim}"
        )
    for layer in encoder.layers:
        h = matmul(a, matmul(h, layer.weight))
        if layer.activation == "relu":
            h = h.relu()
    if encoder.pooling == "mean":
        return mean_rows(h)
    if encoder.pooling == "sum":
        return h.sum(axis=-2)
    return h.amax(axis=-2)


def encode(encoder: GcnEncoder, graph: PropertyGraph) -> Tensor:
    """Embed one property graph into a (out_dim,) vector."""
    return encode_features(encoder, graph.features, normalized_adjacency(graph))
