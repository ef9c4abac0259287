"""Object world, property graphs, and episode datasets.

An object assigns one of t types to each of p properties. Each object is
rendered as a star graph: one leaf node per property carrying a one-hot
(property, type) feature pair, plus a featureless central node. Episodes
pair a target object with K distinct distractors at a random position.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, InfeasibleWorldError, WorldTooLargeError
from .rng import stream

WORLD_SIZE_GUARD = 1_000_000
EVAL_FRACTION = 0.2  # validation and test each; train takes the remainder


@dataclass(frozen=True)
class ObjectSpec:
    """One type per property; the combinatorial identity of an object."""

    types: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.types)

    def hamming(self, other: "ObjectSpec") -> int:
        return sum(a != b for a, b in zip(self.types, other.types))


@dataclass(frozen=True, eq=False)
class PropertyGraph:
    """Star graph for one object: leaves 0..p-1, central node p."""

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    features: np.ndarray  # (p+1, p+t)


@dataclass(frozen=True)
class Episode:
    target: ObjectSpec
    distractors: tuple[ObjectSpec, ...]
    target_position: int  # in [0, K]

    def candidates(self) -> tuple[ObjectSpec, ...]:
        """Presented ordering: distractors with the target inserted."""
        pos = self.target_position
        return self.distractors[:pos] + (self.target,) + self.distractors[pos:]


@dataclass(frozen=True)
class World:
    p: int
    t: int

    def __post_init__(self):
        if self.p < 1 or self.t < 1:
            raise ConfigurationError(f"world needs p >= 1 and t >= 1, got p={self.p}, t={self.t}")
        if self.t ** self.p > WORLD_SIZE_GUARD:
            raise WorldTooLargeError(
                f"world has t^p = {self.t}^{self.p} = {self.t ** self.p} objects, "
                f"guard is {WORLD_SIZE_GUARD}"
            )

    @property
    def size(self) -> int:
        return self.t ** self.p

    @property
    def feature_dim(self) -> int:
        return self.p + self.t

    def objects(self) -> list[ObjectSpec]:
        return list(_enumerate_cached(self.p, self.t))


@lru_cache(maxsize=32)
def _enumerate_cached(p: int, t: int) -> tuple[ObjectSpec, ...]:
    return tuple(ObjectSpec(types) for types in product(range(t), repeat=p))


def enumerate_objects(p: int, t: int) -> list[ObjectSpec]:
    """All t^p object specs in lexicographic order."""
    return World(p, t).objects()


def build_graph(spec: ObjectSpec, p: int, t: int) -> PropertyGraph:
    """Render an object spec as its star property graph."""
    if len(spec.types) != p:
        raise ContractError(f"spec has {len(spec.types)} properties, world has {p}")
    if any(not 0 <= v < t for v in spec.types):
        raise ContractError(f"spec {spec.types} has a type outside [0, {t})")
    features = np.zeros((p + 1, p + t))
    for i, type_idx in enumerate(spec.types):
        features[i, i] = 1.0
        features[i, p + type_idx] = 1.0
    edges = tuple((i, p) for i in range(p))
    return PropertyGraph(num_nodes=p + 1, edges=edges, features=features)


def features_array(specs, p: int, t: int) -> np.ndarray:
    """Stack feature matrices for many specs: (n, p+1, p+t)."""
    out = np.zeros((len(specs), p + 1, p + t))
    for row, spec in enumerate(specs):
        out[row] = build_graph(spec, p, t).features
    return out


def parse_sample_mode(token: str) -> tuple[str, int | None]:
    """'uniform' -> ('uniform', None); 'k_diff:2' -> ('k_diff', 2)."""
    if token == "uniform":
        return "uniform", None
    if token.startswith("k_diff:"):
        raw = token.split(":", 1)[1]
        try:
            return "k_diff", int(raw)
        except ValueError:
            raise ConfigurationError(f"bad k_diff value {raw!r}") from None
    raise ConfigurationError(f"unknown sampling mode {token!r}")


def format_sample_mode(mode: str, k_diff: int | None) -> str:
    return "uniform" if mode == "uniform" else f"k_diff:{k_diff}"


def parse_split_mode(token: str) -> tuple[str, float | None]:
    """'episode' -> ('episode', None); 'holdout_targets:0.2' -> ('holdout_targets', 0.2)."""
    if token == "episode":
        return "episode", None
    if token.startswith("holdout_targets:"):
        raw = token.split(":", 1)[1]
        try:
            return "holdout_targets", float(raw)
        except ValueError:
            raise ConfigurationError(f"bad holdout fraction {raw!r}") from None
    raise ConfigurationError(f"unknown split mode {token!r}")


def format_split_mode(mode: str, fraction: float | None) -> str:
    return "episode" if mode == "episode" else f"holdout_targets:{fraction!r}"


def sample_episode(
    rng: np.random.Generator,
    world: World,
    k: int,
    mode: str = "uniform",
    k_diff: int | None = None,
    allowed_targets: np.ndarray | None = None,
) -> Episode:
    """Draw one episode: target + K distinct distractors + position.

    uniform: the K+1 specs are a uniform without-replacement draw.
    k_diff: every distractor sits at Hamming distance exactly k_diff
    from the target.
    """
    objects = _enumerate_cached(world.p, world.t)
    size = world.size
    if allowed_targets is None:
        target_idx = int(rng.integers(size))
    else:
        target_idx = int(allowed_targets[int(rng.integers(len(allowed_targets)))])
    target = objects[target_idx]

    if mode == "uniform":
        if k + 1 > size:
            raise InfeasibleWorldError(
                f"episode needs {k + 1} distinct specs, world has only {size}"
            )
        draw = rng.choice(size - 1, size=k, replace=False)
        distractors = tuple(objects[int(j) + (j >= target_idx)] for j in draw)
    elif mode == "k_diff":
        if k_diff is None or not 1 <= k_diff <= world.p:
            raise ConfigurationError(f"k_diff must be in [1, p={world.p}], got {k_diff}")
        pool = [o for o in objects if target.hamming(o) == k_diff]
        if len(pool) < k:
            raise InfeasibleWorldError(
                f"only {len(pool)} specs at Hamming distance {k_diff} from target, need {k}"
            )
        draw = rng.choice(len(pool), size=k, replace=False)
        distractors = tuple(pool[int(j)] for j in draw)
    else:
        raise ConfigurationError(f"unknown sampling mode {mode!r}")

    position = int(rng.integers(k + 1))
    return Episode(target=target, distractors=distractors, target_position=position)


def split_sizes(n_episodes: int) -> tuple[int, int, int]:
    """60/20/20 episode split; rounded, train takes the remainder."""
    n_val = int(n_episodes * EVAL_FRACTION + 0.5)
    n_test = n_val
    return n_episodes - n_val - n_test, n_val, n_test


def holdout_targets(world: World, seed: int, fraction: float) -> np.ndarray:
    """The spec indices withheld from train/validation targets.

    This is the first draw on the dataset stream, so it can be
    re-derived from (world, seed, fraction) alone.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"holdout fraction must be in (0, 1), got {fraction}")
    count = math.ceil(fraction * world.size)
    rng = stream(seed, "dataset")
    return np.sort(rng.choice(world.size, size=count, replace=False))


@dataclass
class Dataset:
    """Episodes plus the parameters that regenerate them bit-identically."""

    episodes: tuple[Episode, ...]
    p: int
    t: int
    k: int
    seed: int
    sample_mode: str = "uniform"
    k_diff: int | None = None
    split_mode: str = "episode"
    holdout_fraction: float | None = None
    held_out: np.ndarray | None = field(default=None, repr=False)

    @property
    def world(self) -> World:
        return World(self.p, self.t)

    @property
    def world_params(self) -> tuple[int, int, int]:
        return (self.p, self.t, self.k)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return split_sizes(len(self.episodes))

    @property
    def train(self) -> tuple[Episode, ...]:
        return self.episodes[: self.sizes[0]]

    @property
    def validation(self) -> tuple[Episode, ...]:
        n_train, n_val, _ = self.sizes
        return self.episodes[n_train : n_train + n_val]

    @property
    def test(self) -> tuple[Episode, ...]:
        return self.episodes[self.sizes[0] + self.sizes[1] :]

    def split(self, name: str) -> tuple[Episode, ...]:
        try:
            return {"train": self.train, "validation": self.validation, "test": self.test}[name]
        except KeyError:
            raise ConfigurationError(f"unknown split {name!r}") from None


def make_dataset(
    world: World,
    k: int,
    n_episodes: int,
    seed: int,
    split_mode: str = "episode",
    holdout_fraction: float | None = None,
    sample_mode: str = "uniform",
    k_diff: int | None = None,
) -> Dataset:
    """Generate a reproducible episode dataset with 60/20/20 splits.

    holdout_targets mode keeps a fraction of specs out of the target
    role for train/validation episodes; they may still appear as
    distractors, and test targets are unrestricted.
    """
    if n_episodes < 10:
        raise ConfigurationError(f"need at least 10 episodes, got {n_episodes}")
    if k < 1:
        raise ConfigurationError(f"need at least 1 distractor, got k={k}")
    if k + 1 > world.size:
        raise InfeasibleWorldError(
            f"episode needs {k + 1} distinct specs, world has only {world.size}"
        )

    held: np.ndarray | None = None
    allowed: np.ndarray | None = None
    if split_mode == "holdout_targets":
        if holdout_fraction is None:
            raise ConfigurationError("holdout_targets split needs a fraction")
        held = holdout_targets(world, seed, holdout_fraction)
        if world.size - len(held) < k + 1:
            raise InfeasibleWorldError(
                f"holding out {len(held)} of {world.size} specs leaves fewer than k+1={k + 1} "
                "training targets"
            )
        allowed = np.setdiff1d(np.arange(world.size), held)
    elif split_mode != "episode":
        raise ConfigurationError(f"unknown split mode {split_mode!r}")

    rng = stream(seed, "dataset")
    if split_mode == "holdout_targets":
        rng.choice(world.size, size=len(held), replace=False)  # consume the holdout draw

    n_train, n_val, n_test = split_sizes(n_episodes)
    episodes = []
    for i in range(n_episodes):
        restrict = allowed if i < n_train + n_val else None
        episodes.append(
            sample_episode(rng, world, k, mode=sample_mode, k_diff=k_diff, allowed_targets=restrict)
        )
    return Dataset(
        episodes=tuple(episodes),
        p=world.p,
        t=world.t,
        k=k,
        seed=seed,
        sample_mode=sample_mode,
        k_diff=k_diff,
        split_mode=split_mode,
        holdout_fraction=holdout_fraction,
        held_out=held,
    )


# -- dataset files -----------------------------------------------------

_HEADER_PREFIX = "# grefgame-dataset v1"


def _fmt_spec(spec: ObjectSpec) -> str:
    return ",".join(str(v) for v in spec.types)


def _parse_spec(text: str) -> ObjectSpec:
    return ObjectSpec(tuple(int(v) for v in text.split(",")))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the line-delimited dataset file (bit-exact round-trip)."""
    lines = [
        f"{_HEADER_PREFIX} p={dataset.p} t={dataset.t} k={dataset.k} "
        f"episodes={len(dataset.episodes)} seed={dataset.seed} "
        f"mode={format_sample_mode(dataset.sample_mode, dataset.k_diff)} "
        f"split={format_split_mode(dataset.split_mode, dataset.holdout_fraction)}"
    ]
    for ep in dataset.episodes:
        distractors = " ".join(_fmt_spec(d) for d in ep.distractors)
        lines.append(f"{_fmt_spec(ep.target)} | {distractors} | {ep.target_position}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    """Parse and validate a dataset file written by save_dataset."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith(_HEADER_PREFIX):
        raise ConfigurationError(f"{path}: not a grefgame dataset file")
    fields = dict(tok.split("=", 1) for tok in lines[0][len(_HEADER_PREFIX) :].split())
    p, t, k = int(fields["p"]), int(fields["t"]), int(fields["k"])
    n_episodes, seed = int(fields["episodes"]), int(fields["seed"])
    sample_mode, k_diff = parse_sample_mode(fields["mode"])
    split_mode, fraction = parse_split_mode(fields["split"])

    episodes = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            target_text, distractor_text, pos_text = line.split(" | ")
            target = _parse_spec(target_text)
            distractors = tuple(_parse_spec(d) for d in distractor_text.split(" "))
            episode = Episode(target, distractors, int(pos_text))
        except (ValueError, KeyError) as exc:
            raise ConfigurationError(f"{path}:{lineno}: malformed episode line") from exc
        _validate_episode(episode, p, t, k, f"{path}:{lineno}")
        episodes.append(episode)
    if len(episodes) != n_episodes:
        raise ConfigurationError(
            f"{path}: header claims {n_episodes} episodes, file has {len(episodes)}"
        )
    held = (
        holdout_targets(World(p, t), seed, fraction) if split_mode == "holdout_targets" else None
    )
    return Dataset(
        episodes=tuple(episodes),
        p=p,
        t=t,
        k=k,
        seed=seed,
        sample_mode=sample_mode,
        k_diff=k_diff,
        split_mode=split_mode,
        holdout_fraction=fraction,
        held_out=held,
    )


def _validate_episode(ep: Episode, p: int, t: int, k: int, where: str) -> None:
    specs = (ep.target,) + ep.distractors
    if len(ep.distractors) != k:
        raise ConfigurationError(f"{where}: expected {k} distractors, got {len(ep.distractors)}")
    if not 0 <= ep.target_position <= k:
        raise ConfigurationError(f"{where}: target position {ep.target_position} outside [0, {k}]")
    if len(set(specs)) != len(specs):
        raise ConfigurationError(f"{where}: episode specs are not pairwise distinct")
    for spec in specs:
        if len(spec.types) != p or any(not 0 <= v < t for v in spec.types):
            raise ConfigurationError(f"{where}: spec {spec.types} invalid for p={p}, t={t}")


def dataset_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
