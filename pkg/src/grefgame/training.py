"""End-to-end optimization of the sender/receiver pair.

One training step stacks a minibatch of episodes into dense arrays,
plays the game once per episode (message through the straight-through
channel), and minimizes the mean cross-entropy of the receiver's
candidate distribution against the true target position. Evaluation
replays splits with the deterministic argmax channel.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .agents import (
    Receiver,
    Sender,
    channel_messages,
    named_parameters,
    new_receiver,
    new_sender,
    receive,
    receiver_scores,
    send,
    sender_logits,
)
from .errors import ConfigurationError, ContractError, DivergenceError
from .gnn import ACTIVATIONS, POOLINGS, star_adjacency
from .rng import stream
from .tensor import Tensor, backward, log_softmax, zero_grads
from .world import Dataset, Episode, World, build_graph, features_array, parse_split_mode

METRICS_COLUMNS = ("epoch", "split", "accuracy", "loss", "distinct_symbols")


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run besides the dataset bytes."""

    p: int = 3
    t: int = 4
    k: int = 2
    vocab_size: int = 25
    n_episodes: int = 10_000
    seed: int = 0
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 1e-3
    temperature: float = 1.0
    hidden_dim: int = 64
    embedding_dim: int = 64
    activation: str = "relu"
    pooling: str = "mean"
    sample_mode: str = "uniform"
    split_mode: str = "episode"
    eval_cadence: int = 10
    patience: int = 20

    def validate(self) -> "TrainConfig":
        positive = (
            ("p", self.p), ("t", self.t), ("k", self.k), ("vocab_size", self.vocab_size),
            ("n_episodes", self.n_episodes), ("epochs", self.epochs),
            ("batch_size", self.batch_size), ("learning_rate", self.learning_rate),
            ("temperature", self.temperature), ("hidden_dim", self.hidden_dim),
            ("embedding_dim", self.embedding_dim), ("eval_cadence", self.eval_cadence),
            ("patience", self.patience),
        )
        for name, value in positive:
            if value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        if self.vocab_size < 2:
            raise ConfigurationError(f"vocab_size must be at least 2, got {self.vocab_size}")
        if self.k + 1 > self.t**self.p:
            raise ConfigurationError(
                f"k+1 = {self.k + 1} candidates exceed the {self.t**self.p} distinct objects"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.pooling not in POOLINGS:
            raise ConfigurationError(f"unknown pooling {self.pooling!r}")
        parse_split_mode(self.split_mode)
        return self

    def as_dict(self) -> dict:
        return asdict(self)


def config_hash(config: TrainConfig) -> str:
    """12-hex digest of the canonical config encoding; names run artifacts."""
    blob = json.dumps(config.as_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class Metrics:
    epoch: int
    split: str
    accuracy: float
    loss: float
    distinct_symbols: int

    def row(self) -> list:
        return [self.epoch, self.split, repr(self.accuracy), repr(self.loss), self.distinct_symbols]


def write_metrics_header(path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerow(METRICS_COLUMNS)


def append_metrics(path: str | Path, rows: list[Metrics]) -> None:
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for m in rows:
            writer.writerow(m.row())


def read_metrics(path: str | Path) -> list[Metrics]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out.append(
                Metrics(
                    epoch=int(rec["epoch"]),
                    split=rec["split"],
                    accuracy=float(rec["accuracy"]),
                    loss=float(rec["loss"]),
                    distinct_symbols=int(rec["distinct_symbols"]),
                )
            )
    return out


# -- episode batching --------------------------------------------------


@dataclass
class Batch:
    """Dense arrays for a set of episodes over one star-graph world."""

    targets: np.ndarray  # (N, p+1, p+t)
    candidates: np.ndarray  # (N, K+1, p+1, p+t)
    positions: np.ndarray  # (N,)
    adjacency: np.ndarray  # (p+1, p+1), normalized

    def __len__(self) -> int:
        return self.targets.shape[0]

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(self.targets[idx], self.candidates[idx], self.positions[idx], self.adjacency)


def featurize(episodes, p: int, t: int) -> Batch:
    """Stack episodes into the arrays one forward pass consumes."""
    episodes = list(episodes)
    if not episodes:
        raise ContractError("cannot featurize an empty episode list")
    targets = features_array([ep.target for ep in episodes], p, t)
    cands = np.stack([features_array(ep.candidates(), p, t) for ep in episodes])
    positions = np.array([ep.target_position for ep in episodes], dtype=np.int64)
    return Batch(targets, cands, positions, np.asarray(star_adjacency(p)))


# -- the game ----------------------------------------------------------


def game_loss(
    sender: Sender,
    receiver: Receiver,
    episode: Episode,
    mode: str = "train",
    rng: np.random.Generator | None = None,
    temperature: float = 1.0,
    p: int | None = None,
    t: int | None = None,
) -> tuple[Tensor, bool]:
    """Play one episode; returns (cross-entropy loss, receiver correct?).

    World dims (p, t) default to what the target spec itself implies
    only for p; t must be given when type indices do not reach t-1, so
    callers that know the world should pass both.
    """
    if p is None:
        p = len(episode.target.types)
    if t is None:
        t = max(max(s.types) for s in episode.candidates()) + 1
    graph = build_graph(episode.target, p, t)
    message = send(sender, graph, mode=mode, rng=rng, temperature=temperature)
    cand_graphs = [build_graph(s, p, t) for s in episode.candidates()]
    probs = receive(receiver, message, cand_graphs)
    mask = np.zeros(len(cand_graphs))
    mask[episode.target_position] = 1.0
    p_target = (probs * Tensor(mask)).sum()
    loss = -p_target.log()
    correct = int(np.argmax(probs.data)) == episode.target_position
    return loss, correct


def batch_forward(
    sender: Sender,
    receiver: Receiver,
    batch: Batch,
    mode: str,
    rng: np.random.Generator | None = None,
    temperature: float = 1.0,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """One stacked game pass: (mean loss, chosen positions, symbols sent)."""
    logits = sender_logits(sender, batch.targets, batch.adjacency)  # (N, |V|)
    messages = channel_messages(logits, temperature, mode, rng=rng)
    scores = receiver_scores(receiver, messages, batch.candidates, batch.adjacency)  # (N, C)
    logp = log_softmax(scores, axis=-1)
    mask = np.zeros(scores.shape)
    mask[np.arange(len(batch)), batch.positions] = 1.0
    loss = -(logp * Tensor(mask)).sum() * (1.0 / len(batch))
    choices = np.argmax(scores.data, axis=-1)
    symbols = np.argmax(messages.data, axis=-1)
    return loss, choices, symbols


@dataclass
class EvalResult:
    accuracy: float
    loss: float
    distinct_symbols: int
    choices: np.ndarray
    correct: np.ndarray
    symbols: np.ndarray


def evaluate(sender: Sender, receiver: Receiver, batch: Batch) -> EvalResult:
    """Deterministic argmax-channel replay of a whole split."""
    loss, choices, symbols = batch_forward(sender, receiver, batch, mode="eval")
    correct = choices == batch.positions
    return EvalResult(
        accuracy=float(correct.mean()),
        loss=float(loss.data),
        distinct_symbols=int(np.unique(symbols).size),
        choices=choices,
        correct=correct,
        symbols=symbols,
    )


# -- optimizer ---------------------------------------------------------


def adam_state(params: dict[str, np.ndarray]) -> dict:
    return {
        "step": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], dict]:
    """Bias-corrected Adam update; returns new (params, state), inputs untouched."""
    if set(params) != set(grads):
        raise ContractError("params and grads must carry the same names")
    step = state["step"] + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ContractError(f"gradient shape {g.shape} != param shape {w.shape} for {name}")
        m = beta1 * state["m"][name] + (1.0 - beta1) * g
        v = beta2 * state["v"][name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        new_params[name] = w - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, {"step": step, "m": new_m, "v": new_v}


# -- training loop -----------------------------------------------------


@dataclass
class TrainResult:
    sender: Sender
    receiver: Receiver
    config: TrainConfig
    history: list[Metrics]
    best_epoch: int
    best_val_accuracy: float
    test: EvalResult
    epochs_run: int
    stopped_early: bool
    diverged: bool = False


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for k, t in params.items():
        t.data = snap[k].copy()


def train(
    config: TrainConfig,
    dataset: Dataset,
    on_metrics: Callable[[list[Metrics]], None] | None = None,
) -> TrainResult:
    """Optimize fresh agents on the dataset's train split.

    Evaluates validation and test every `eval_cadence` epochs with the
    argmax channel, keeps the weights with the best validation
    accuracy (earliest epoch wins ties), and stops after `patience`
    evaluations without improvement. Deterministic for a fixed
    (config, dataset) pair. Raises DivergenceError on non-finite loss,
    with the partial result attached.
    """
    config.validate()
    if (config.p, config.t, config.k) != dataset.world_params:
        raise ConfigurationError(
            f"config world (p={config.p}, t={config.t}, k={config.k}) does not match "
            f"dataset world (p={dataset.p}, t={dataset.t}, k={dataset.k})"
        )
    in_dim = World(config.p, config.t).feature_dim
    init_rng = stream(config.seed, "init")
    channel_rng = stream(config.seed, "channel")
    shuffle_rng = stream(config.seed, "shuffle")
    kwargs = dict(
        in_dim=in_dim,
        vocab_size=config.vocab_size,
        hidden_dim=config.hidden_dim,
        embedding_dim=config.embedding_dim,
        activation=config.activation,
        pooling=config.pooling,
    )
    sender = new_sender(init_rng, **kwargs)
    receiver = new_receiver(init_rng, **kwargs)
    params = named_parameters(sender, receiver)
    state = adam_state({k: t.data for k, t in params.items()})

    train_batch = featurize(dataset.train, config.p, config.t)
    val_batch = featurize(dataset.validation, config.p, config.t)
    test_batch = featurize(dataset.test, config.p, config.t)

    history: list[Metrics] = []
    best = _snapshot(params)
    best_val, best_epoch = -1.0, 0
    evals_since_best = 0
    stopped_early = False
    epochs_run = 0

    def run_eval(epoch: int) -> float:
        nonlocal best, best_val, best_epoch, evals_since_best
        val = evaluate(sender, receiver, val_batch)
        test = evaluate(sender, receiver, test_batch)
        rows = [
            Metrics(epoch, "validation", val.accuracy, val.loss, val.distinct_symbols),
            Metrics(epoch, "test", test.accuracy, test.loss, test.distinct_symbols),
        ]
        history.extend(rows)
        if on_metrics is not None:
            on_metrics(rows)
        if val.accuracy > best_val:
            best, best_val, best_epoch = _snapshot(params), val.accuracy, epoch
            evals_since_best = 0
        else:
            evals_since_best += 1
        return val.accuracy

    run_eval(0)
    n_train = len(train_batch)
    n_batches = math.ceil(n_train / config.batch_size)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n_train)
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            loss, _, _ = batch_forward(
                sender,
                receiver,
                train_batch.take(idx),
                mode="train",
                rng=channel_rng,
                temperature=config.temperature,
            )
            if not np.isfinite(loss.data):
                _restore(params, best)
                partial = TrainResult(
                    sender, receiver, config, history, best_epoch, best_val,
                    evaluate(sender, receiver, test_batch), epoch, False, diverged=True,
                )
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {b}", result=partial
                )
            backward(loss)
            new_data, state = adam_step(
                {k: t.data for k, t in params.items()},
                {k: t.grad for k, t in params.items()},
                state,
                config.learning_rate,
            )
            for k, t in params.items():
                t.data = new_data[k]
            zero_grads(params.values())
        epochs_run = epoch
        if epoch % config.eval_cadence == 0 or epoch == config.epochs:
            run_eval(epoch)
            if evals_since_best >= config.patience:
                stopped_early = True
                break

    _restore(params, best)
    final_test = evaluate(sender, receiver, test_batch)
    return TrainResult(
        sender=sender,
        receiver=receiver,
        config=config,
        history=history,
        best_epoch=best_epoch,
        best_val_accuracy=best_val,
        test=final_test,
        epochs_run=epochs_run,
        stopped_early=stopped_early,
    )
