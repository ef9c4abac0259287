"""Post-hoc analyses of a trained sender/receiver pair.

All analyses run the deterministic argmax channel. They answer three
questions about the learnt protocol: how much of the vocabulary the
sender actually uses, whether the receiver genuinely conditions on the
symbol (forced-substitution robustness), and whether candidate order
leaks into the receiver's choice (it cannot, by construction, and the
permutation test asserts exactly that).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import Receiver, Sender, eval_symbols, receiver_scores
from .errors import ConfigurationError, ContractError
from .tensor import Tensor
from .training import Batch, TrainConfig, evaluate, train
from .world import World, make_dataset, parse_sample_mode, parse_split_mode

# -- symbol usage ------------------------------------------------------


@dataclass(frozen=True)
class SymbolUsageReport:
    vocab_size: int
    counts: tuple[int, ...]  # messages per symbol over the split
    n_episodes: int

    @property
    def distinct_count(self) -> int:
        return int(sum(1 for c in self.counts if c > 0))

    @property
    def percent_of_vocab(self) -> float:
        return 100.0 * self.distinct_count / self.vocab_size

    @property
    def used_symbols(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.counts) if c > 0)

    def to_json_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "n_episodes": self.n_episodes,
            "counts": list(self.counts),
            "distinct_count": self.distinct_count,
            "percent_of_vocab": self.percent_of_vocab,
        }

    def to_rows(self) -> list[list]:
        rows = [["symbol", "count"]]
        rows += [[i, c] for i, c in enumerate(self.counts)]
        return rows


def symbol_usage(sender: Sender, batch: Batch) -> SymbolUsageReport:
    """Histogram the argmax symbols the sender emits for a split's targets."""
    symbols = eval_symbols(sender, batch.targets, batch.adjacency)
    counts = np.bincount(symbols, minlength=sender.vocab_size)
    return SymbolUsageReport(
        vocab_size=sender.vocab_size,
        counts=tuple(int(c) for c in counts),
        n_episodes=len(batch),
    )


# -- forced-symbol robustness ------------------------------------------


@dataclass
class RobustnessMatrix:
    """R[s, s'] = correctness on D_s when the message is forced to s'.

    D_s is the set of split episodes the pair already wins with the
    sender's own symbol s, so the diagonal is 1 wherever defined. Rows
    with empty D_s hold NaN and are listed in `empty_rows`.
    """

    vocab_size: int
    matrix: np.ndarray  # (|V|, |V|), NaN on empty rows
    support: np.ndarray  # (|V|,) = |D_s|

    @property
    def empty_rows(self) -> tuple[int, ...]:
        return tuple(int(s) for s in np.flatnonzero(self.support == 0))

    @property
    def defined_rows(self) -> tuple[int, ...]:
        return tuple(int(s) for s in np.flatnonzero(self.support > 0))

    def diagonal_is_argmax(self) -> bool:
        """True when every defined row attains its maximum on its own symbol."""
        for s in self.defined_rows:
            if self.matrix[s, s] < np.nanmax(self.matrix[s]):
                return False
        return True

    def to_json_dict(self) -> dict:
        cells = [
            [None if not np.isfinite(x) else float(x) for x in row] for row in self.matrix
        ]
        return {
            "vocab_size": self.vocab_size,
            "matrix": cells,
            "support": [int(x) for x in self.support],
            "empty_rows": list(self.empty_rows),
            "diagonal_is_argmax": self.diagonal_is_argmax(),
        }

    def to_rows(self) -> list[list]:
        header = ["sender_symbol", "support"] + [f"forced_{s}" for s in range(self.vocab_size)]
        rows = [header]
        for s in range(self.vocab_size):
            vals = ["" if not np.isfinite(x) else repr(float(x)) for x in self.matrix[s]]
            rows.append([s, int(self.support[s])] + vals)
        return rows


def robustness_matrix(sender: Sender, receiver: Receiver, batch: Batch) -> RobustnessMatrix:
    """Replay every episode once per forced symbol, candidate order untouched."""
    base = evaluate(sender, receiver, batch)
    vocab = sender.vocab_size
    support = np.zeros(vocab, dtype=np.int64)
    groups: list[np.ndarray] = []
    for s in range(vocab):
        idx = np.flatnonzero(base.correct & (base.symbols == s))
        groups.append(idx)
        support[s] = idx.size
    # correctness of every episode under each forced symbol: (|V|, N)
    forced_correct = np.zeros((vocab, len(batch)), dtype=bool)
    for forced in range(vocab):
        onehot = np.zeros((len(batch), vocab))
        onehot[:, forced] = 1.0
        scores = receiver_scores(receiver, Tensor(onehot), batch.candidates, batch.adjacency)
        forced_correct[forced] = np.argmax(scores.data, axis=-1) == batch.positions
    matrix = np.full((vocab, vocab), np.nan)
    for s in range(vocab):
        if support[s]:
            matrix[s] = forced_correct[:, groups[s]].mean(axis=1)
    return RobustnessMatrix(vocab_size=vocab, matrix=matrix, support=support)


# -- candidate-permutation invariance ----------------------------------


@dataclass(frozen=True)
class PermutationReport:
    n_episodes: int
    n_permutations: int
    agreement: float  # fraction of (episode, shuffle) pairs matching base correctness
    base_accuracy: float
    shuffled_accuracies: tuple[float, ...]

    @property
    def max_accuracy_delta(self) -> float:
        return max((abs(a - self.base_accuracy) for a in self.shuffled_accuracies), default=0.0)

    def to_json_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "n_permutations": self.n_permutations,
            "agreement": self.agreement,
            "base_accuracy": self.base_accuracy,
            "shuffled_accuracies": list(self.shuffled_accuracies),
            "max_accuracy_delta": self.max_accuracy_delta,
        }

    def to_rows(self) -> list[list]:
        rows = [["round", "accuracy", "agreement_with_base"]]
        rows.append(["base", repr(self.base_accuracy), ""])
        for i, a in enumerate(self.shuffled_accuracies):
            rows.append([i, repr(a), ""])
        rows.append(["overall_agreement", "", repr(self.agreement)])
        return rows


def permutation_test(
    sender: Sender,
    receiver: Receiver,
    batch: Batch,
    n_permutations: int,
    rng: np.random.Generator,
) -> PermutationReport:
    """Shuffle candidate order per episode and compare correctness.

    The receiver scores each candidate by content alone, so per-episode
    correctness must agree exactly with the unshuffled run; agreement
    below 1.0 indicates a position leak in the scoring path.
    """
    if n_permutations < 1:
        raise ConfigurationError(f"need at least one permutation, got {n_permutations}")
    base = evaluate(sender, receiver, batch)
    n, c = len(batch), batch.candidates.shape[1]
    agree = 0
    accs = []
    for _ in range(n_permutations):
        perms = np.stack([rng.permutation(c) for _ in range(n)])
        shuffled = np.take_along_axis(
            batch.candidates, perms[:, :, None, None], axis=1
        )
        # the target moves to wherever its old position landed
        new_pos = np.argmax(perms == batch.positions[:, None], axis=1)
        round_batch = Batch(batch.targets, shuffled, new_pos, batch.adjacency)
        res = evaluate(sender, receiver, round_batch)
        agree += int(np.sum(res.correct == base.correct))
        accs.append(res.accuracy)
    return PermutationReport(
        n_episodes=n,
        n_permutations=n_permutations,
        agreement=agree / (n * n_permutations),
        base_accuracy=base.accuracy,
        shuffled_accuracies=tuple(accs),
    )


# -- vocab x distractor sweep ------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    vocab_size: int
    k: int
    seeds: tuple[int, ...]
    accuracies: tuple[float, ...]
    distinct_counts: tuple[int, ...]
    failed_seeds: tuple[int, ...] = ()

    @property
    def n_runs(self) -> int:
        return len(self.accuracies)

    @property
    def missing(self) -> bool:
        return self.n_runs == 0

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def se_accuracy(self) -> float:
        return _standard_error(self.accuracies)

    @property
    def mean_distinct(self) -> float:
        return float(np.mean(self.distinct_counts)) if self.distinct_counts else float("nan")

    @property
    def se_distinct(self) -> float:
        return _standard_error(self.distinct_counts)


def _standard_error(values) -> float:
    """Sample standard error of the mean; 0 for a single value."""
    if not values:
        return float("nan")
    if len(values) == 1:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


@dataclass(frozen=True)
class SweepReport:
    cells: tuple[SweepCell, ...]
    vocab_sizes: tuple[int, ...]
    ks: tuple[int, ...]
    seeds: tuple[int, ...]

    def cell(self, vocab_size: int, k: int) -> SweepCell:
        for c in self.cells:
            if c.vocab_size == vocab_size and c.k == k:
                return c
        raise ContractError(f"no sweep cell for vocab={vocab_size}, k={k}")

    @property
    def missing_cells(self) -> tuple[tuple[int, int], ...]:
        return tuple((c.vocab_size, c.k) for c in self.cells if c.missing)

    def to_rows(self) -> list[list]:
        rows = [[
            "vocab_size", "k", "n_seeds", "mean_accuracy", "se_accuracy",
            "mean_distinct_symbols", "se_distinct_symbols", "percent_vocab_used",
            "failed_seeds",
        ]]
        for c in self.cells:
            pct = 100.0 * c.mean_distinct / c.vocab_size if not c.missing else float("nan")
            rows.append([
                c.vocab_size, c.k, c.n_runs,
                repr(c.mean_accuracy), repr(c.se_accuracy),
                repr(c.mean_distinct), repr(c.se_distinct), repr(pct),
                " ".join(str(s) for s in c.failed_seeds),
            ])
        return rows

    def to_json_dict(self) -> dict:
        def fin(x: float) -> float | None:
            return float(x) if np.isfinite(x) else None

        return {
            "vocab_sizes": list(self.vocab_sizes),
            "ks": list(self.ks),
            "seeds": list(self.seeds),
            "missing_cells": [list(mc) for mc in self.missing_cells],
            "cells": [
                {
                    "vocab_size": c.vocab_size,
                    "k": c.k,
                    "seeds": list(c.seeds),
                    "accuracies": list(c.accuracies),
                    "distinct_counts": list(c.distinct_counts),
                    "failed_seeds": list(c.failed_seeds),
                    "mean_accuracy": fin(c.mean_accuracy),
                    "se_accuracy": fin(c.se_accuracy),
                    "mean_distinct": fin(c.mean_distinct),
                    "se_distinct": fin(c.se_distinct),
                }
                for c in self.cells
            ],
        }


def sweep(
    base: TrainConfig,
    vocab_sizes,
    ks,
    seeds,
    dataset_seed: int | None = None,
    on_cell=None,
) -> SweepReport:
    """Train every (|V|, K, seed) combination and aggregate per cell.

    One dataset is generated per K (shared by all vocab sizes and
    seeds, so cells differ only in what the spec varies). A diverged
    run is recorded in the cell's failed_seeds instead of aborting the
    sweep; a cell with no surviving run is reported missing.
    """
    from .errors import DivergenceError  # local to avoid import cycle confusion

    vocab_sizes = tuple(int(v) for v in vocab_sizes)
    ks = tuple(int(k) for k in ks)
    seeds = tuple(int(s) for s in seeds)
    if not vocab_sizes or not ks or not seeds:
        raise ConfigurationError("sweep needs at least one vocab size, k, and seed")
    if dataset_seed is None:
        dataset_seed = base.seed
    world = World(base.p, base.t)
    sample_name, k_diff = parse_sample_mode(base.sample_mode)
    split_name, fraction = parse_split_mode(base.split_mode)
    datasets = {
        k: make_dataset(
            world, k, base.n_episodes, dataset_seed,
            sample_mode=sample_name, k_diff=k_diff,
            split_mode=split_name, holdout_fraction=fraction,
        )
        for k in ks
    }
    cells = []
    for vocab in vocab_sizes:
        for k in ks:
            accs, distincts, done_seeds, failed = [], [], [], []
            for seed in seeds:
                cfg = TrainConfig(**{
                    **base.as_dict(), "vocab_size": vocab, "k": k, "seed": seed,
                })
                try:
                    result = train(cfg, datasets[k])
                except DivergenceError:
                    failed.append(seed)
                    continue
                accs.append(result.test.accuracy)
                distincts.append(result.test.distinct_symbols)
                done_seeds.append(seed)
            cell = SweepCell(
                vocab_size=vocab,
                k=k,
                seeds=tuple(done_seeds),
                accuracies=tuple(accs),
                distinct_counts=tuple(distincts),
                failed_seeds=tuple(failed),
            )
            cells.append(cell)
            if on_cell is not None:
                on_cell(cell)
    return SweepReport(
        cells=tuple(cells), vocab_sizes=vocab_sizes, ks=ks, seeds=seeds
    )
