"""Reproducible RNG substream derivation.

A single 64-bit master seed drives every random draw in a run.  Substreams
are derived from integer paths fed to ``numpy.random.SeedSequence`` so that
any unit of work (a simulated dataset, a model fit) can rebuild its own
stream from ``(master_seed, path...)`` without coordination.  Two distinct
paths yield statistically independent streams, and the same path always
yields the same stream, which is what makes replicate-level results
independent of execution order and worker count.

Path layout:

* dataset for replicate ``r`` of scenario ``m``:  ``(DATA, m, r)``
* fit randomness for scenario ``m``, one model:   ``(FIT, m, family, scope_mask)``
* inside a single (non-batched) fit: one child per basket, keyed by the
  basket's index, plus one shared child for the common-mean / spread
  updates.
"""

from __future__ import annotations

from typing import Iterable, Sequence, Union

import numpy as np

DOMAIN_DATA = 1
DOMAIN_FIT = 2

# family codes used in fit stream paths
FAMILY_INDEPENDENT = 1
FAMILY_BHM = 2
FAMILY_EXNEX = 3

FAMILY_CODES = {
    "independent": FAMILY_INDEPENDENT,
    "bhm": FAMILY_BHM,
    "exnex": FAMILY_EXNEX,
}

# child id of the shared-parameter stream inside a single fit; basket
# children use ``basket_index + 1`` so 0 stays free for the shared stream
SHARED_CHILD = 0

SeedLike = Union[int, np.random.SeedSequence]


def seed_path(master_seed: int, *path: int) -> np.random.SeedSequence:
    """SeedSequence for an integer path under the master seed."""
    entropy = [int(master_seed)] + [int(p) for p in path]
    return np.random.SeedSequence(entropy)


def generator(master_seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(seed_path(master_seed, *path))


def child(seq: np.random.SeedSequence, *path: int) -> np.random.SeedSequence:
    """Child SeedSequence reached by appending ``path`` to the spawn key."""
    key = tuple(seq.spawn_key) + tuple(int(p) for p in path)
    return np.random.SeedSequence(entropy=seq.entropy, spawn_key=key)


def as_seedseq(rng: SeedLike) -> np.random.SeedSequence:
    """Accept a raw int seed or a SeedSequence."""
    if isinstance(rng, np.random.SeedSequence):
        return rng
    return np.random.SeedSequence(int(rng))


def scope_mask(scope: Iterable[int]) -> int:
    """Bitmask identifying a basket subset; stable under ordering."""
    mask = 0
    for b in scope:
        mask |= 1 << int(b)
    return mask


def data_stream(master_seed: int, scenario_key: int, replicate: int) -> np.random.Generator:
    """Generator owning all data-generation randomness of one replicate."""
    return generator(master_seed, DOMAIN_DATA, scenario_key, replicate)


def fit_stream(
    master_seed: int, scenario_key: int, family: str, scope: Sequence[int]
) -> np.random.Generator:
    """Generator owning all fit randomness of one (scenario, model) batch."""
    return generator(
        master_seed, DOMAIN_FIT, scenario_key, FAMILY_CODES[family], scope_mask(scope)
    )
