"""Named, seedable random streams.

Every stochastic subsystem draws from its own stream so that, e.g.,
changing the number of Gumbel samples consumed during training can never
perturb dataset generation. Streams are derived from a single user seed
via ``SeedSequence(entropy=seed, spawn_key=(stream_id,))``, which is
stable across platforms and numpy versions.
"""

import numpy as np

# Fixed stream ids; appending new streams is safe, renumbering is not.
STREAMS = {
    "dataset": 0,
    "init": 1,
    "channel": 2,
    "shuffle": 3,
    "permutation": 4,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the named generator for this seed."""
    if name not in STREAMS:
        raise KeyError(f"unknown rng stream {name!r}; known: {sorted(STREAMS)}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name],))
    return np.random.default_rng(seq)
