"""Sender and receiver agents and the discrete one-symbol channel.

The sender encodes the target graph and emits one vocabulary symbol
through a straight-through Gumbel-Softmax channel (hard one-hot forward,
soft gradients backward). The receiver embeds the message, scores every
candidate graph by dot product against it, and answers with a softmax
over candidates. Scoring reads only each candidate's content, never its
position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError
from .gnn import GcnEncoder, encode_features, glorot, new_encoder, normalized_adjacency
from .tensor import Tensor, matmul, softmax, straight_through_onehot
from .world import PropertyGraph

GUMBEL_EPS = 1e-20
CHANNEL_MODES = ("train", "eval", "soft")


def validate_vocab(size: int) -> int:
    if size < 2:
        raise ConfigurationError(f"vocabulary needs at least 2 symbols, got {size}")
    return size


@dataclass
class Message:
    """One transmitted symbol as a vector over the vocabulary."""

    vector: Tensor
    form: str  # 'straight_through_onehot' | 'argmax_onehot'

    @property
    def index(self) -> int:
        return int(np.argmax(self.vector.data))


class Sender:
    def __init__(self, encoder: GcnEncoder, head: Tensor):
        if encoder.out_dim != head.shape[0]:
            raise ConfigurationError(
                f"sender head expects {head.shape[0]} inputs, encoder emits {encoder.out_dim}"
            )
        self.encoder = encoder
        self.head = head  # (d_emb, |V|)

    @property
    def vocab_size(self) -> int:
        return self.head.shape[1]

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + [self.head]


class Receiver:
    def __init__(self, encoder: GcnEncoder, message_embedding: Tensor):
        if encoder.out_dim != message_embedding.shape[1]:
            raise ConfigurationError(
                f"message embedding width {message_embedding.shape[1]} does not match "
                f"encoder width {encoder.out_dim}"
            )
        self.encoder = encoder
        self.message_embedding = message_embedding  # (|V|, d_emb)

    @property
    def vocab_size(self) -> int:
        return self.message_embedding.shape[0]

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + [self.message_embedding]


def new_sender(
    rng: np.random.Generator,
    in_dim: int,
    vocab_size: int,
    hidden_dim: int = 32,
    embedding_dim: int = 32,
    activation: str = "relu",
    pooling: str = "mean",
) -> Sender:
    validate_vocab(vocab_size)
    encoder = new_encoder(rng, in_dim, hidden_dim, embedding_dim, 2, activation, pooling)
    return Sender(encoder, glorot(rng, embedding_dim, vocab_size))


def new_receiver(
    rng: np.random.Generator,
    in_dim: int,
    vocab_size: int,
    hidden_dim: int = 32,
    embedding_dim: int = 32,
    activation: str = "relu",
    pooling: str = "mean",
) -> Receiver:
    validate_vocab(vocab_size)
    encoder = new_encoder(rng, in_dim, hidden_dim, embedding_dim, 2, activation, pooling)
    return Receiver(encoder, glorot(rng, vocab_size, embedding_dim))


def named_parameters(sender: Sender, receiver: Receiver) -> dict[str, Tensor]:
    """Stable parameter naming used by the optimizer and checkpoints."""
    params: dict[str, Tensor] = {}
    for i, layer in enumerate(sender.encoder.layers):
        params[f"sender.gcn.{i}.weight"] = layer.weight
    params["sender.head.weight"] = sender.head
    for i, layer in enumerate(receiver.encoder.layers):
        params[f"receiver.gcn.{i}.weight"] = layer.weight
    params["receiver.message_embedding.weight"] = receiver.message_embedding
    return params


# -- channel -----------------------------------------------------------


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(u + GUMBEL_EPS) + GUMBEL_EPS)


def gumbel_softmax_st(
    logits: Tensor,
    temperature: float,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> Message:
    """Sample a hard one-hot message with straight-through gradients.

    Forward value is exactly one-hot; the backward pass sees the
    gradient of the underlying soft sample. Pass `noise` to freeze the
    Gumbel draw (gradient checks); otherwise it is drawn from `rng`.
    """
    vec = channel_messages(logits, temperature, "train", rng=rng, noise=noise)
    return Message(vector=vec, form="straight_through_onehot")


def channel_messages(
    logits: Tensor,
    temperature: float,
    mode: str,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> Tensor:
    """Message vectors for a batch of logits (..., |V|).

    train: straight-through Gumbel-Softmax (hard forward, soft grads).
    eval: deterministic argmax one-hot, no noise, no gradients.
    soft: the bare Gumbel-Softmax relaxation; this is the surrogate the
    straight-through estimator differentiates, kept accessible so
    finite-difference checks can probe the full composite.
    """
    if mode not in CHANNEL_MODES:
        raise ConfigurationError(f"unknown channel mode {mode!r}")
    if mode == "eval":
        idx = np.argmax(logits.data, axis=-1)
        hard = np.zeros_like(logits.data)
        np.put_along_axis(hard, np.expand_dims(idx, -1), 1.0, axis=-1)
        return Tensor(hard)
    if temperature <= 0:
        raise ConfigurationError(f"channel temperature must be positive, got {temperature}")
    if noise is None:
        if rng is None:
            raise ConfigurationError("train-mode channel needs an rng (or frozen noise)")
        noise = gumbel_noise(rng, logits.shape)
    y = softmax((logits + Tensor(noise)) * (1.0 / temperature), axis=-1)
    if mode == "soft":
        return y
    return straight_through_onehot(y, axis=-1)


# -- sender ------------------------------------------------------------


def sender_logits(sender: Sender, features, adjacency) -> Tensor:
    """Vocabulary logits for stacked targets: (..., n, f) -> (..., |V|)."""
    emb = encode_features(sender.encoder, features, adjacency)
    if emb.ndim == 1:
        return matmul(emb.reshape((1, -1)), sender.head).reshape((sender.vocab_size,))
    return matmul(emb, sender.head)


def send(
    sender: Sender,
    target: PropertyGraph,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    temperature: float = 1.0,
    noise: np.ndarray | None = None,
) -> Message:
    """Produce the message for one target graph."""
    logits = sender_logits(sender, target.features, normalized_adjacency(target))
    if mode == "train":
        return gumbel_softmax_st(logits, temperature, rng=rng, noise=noise)
    vec = channel_messages(logits, temperature, "eval")
    return Message(vector=vec, form="argmax_onehot")


# -- receiver ----------------------------------------------------------


def receiver_scores(receiver: Receiver, messages: Tensor, cand_features, adjacency) -> Tensor:
    """Candidate scores for a batch: messages (B, |V|), features (B, C, n, f).

    Score of candidate j is the dot product of its graph embedding with
    the embedded message; each candidate is scored by identical
    operations on its own content, so candidate order cannot leak in.
    """
    emb = encode_features(receiver.encoder, cand_features, adjacency)  # (B, C, e)
    mu = matmul(messages, receiver.message_embedding)  # (B, e)
    mu = mu.reshape((mu.shape[0], 1, mu.shape[1]))
    return (emb * mu).sum(axis=-1)  # (B, C)


def receive(receiver: Receiver, message: Message, candidates: list[PropertyGraph]) -> Tensor:
    """Softmax distribution over the K+1 candidates for one episode."""
    if not candidates:
        raise ContractError("receive needs at least one candidate")
    nodes = candidates[0].num_nodes
    if any(c.num_nodes != nodes or c.edges != candidates[0].edges for c in candidates):
        raise ContractError("candidates must share one graph topology")
    feats = np.stack([c.features for c in candidates])  # (C, n, f)
    emb = encode_features(receiver.encoder, feats, normalized_adjacency(candidates[0]))
    mu = matmul(message.vector.reshape((1, -1)), receiver.message_embedding)  # (1, e)
    scores = matmul(emb, mu.reshape((-1, 1))).reshape((len(candidates),))
    return softmax(scores, axis=-1)


def eval_symbols(sender: Sender, features, adjacency) -> np.ndarray:
    """Deterministic argmax symbols for stacked targets (no tape)."""
    logits = sender_logits(sender, features, adjacency)
    return np.argmax(logits.data, axis=-1)


# -- checkpoints -------------------------------------------------------

CHECKPOINT_FORMAT = "grefgame-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    sender: Sender,
    receiver: Receiver,
    model: dict,
    extra: dict | None = None,
) -> None:
    """Write every named weight with its shape; JSON floats round-trip exactly."""
    params = {
        name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
        for name, t in named_parameters(sender, receiver).items()
    }
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model,
        "extra": extra or {},
        "params": params,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[Sender, Receiver, dict]:
    """Rebuild agents from a checkpoint; returns (sender, receiver, model_meta)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    model = doc["model"]
    rng = np.random.default_rng(0)  # shapes are overwritten below
    kwargs = dict(
        in_dim=model["p"] + model["t"],
        vocab_size=model["vocab_size"],
        hidden_dim=model["hidden_dim"],
        embedding_dim=model["embedding_dim"],
        activation=model["activation"],
        pooling=model["pooling"],
    )
    sender = new_sender(rng, **kwargs)
    receiver = new_receiver(rng, **kwargs)
    named = named_parameters(sender, receiver)
    stored = doc["params"]
    if set(named) != set(stored):
        raise ConfigurationError(f"{path}: parameter names do not match this model layout")
    for name, tensor in named.items():
        entry = stored[name]
        data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if tuple(data.shape) != tensor.shape:
            raise ConfigurationError(
                f"{path}: parameter {name} has shape {data.shape}, expected {tensor.shape}"
            )
        tensor.data = data
    return sender, receiver, {"model": model, "extra": doc["extra"]}
