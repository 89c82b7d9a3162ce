# src/streams.py
#
# Label-keyed random streams.
# Every node of a genealogical tree owns a 64-bit key: the root key comes from
# the seed, a child key from its parent key and child index, both through
# numpy's SeedSequence hashing. Uniforms for a node are a pure function of
# (key, stream, column), so the same node receives the same randomness
# whatever the threshold, the batch it is processed in, or the order of
# processing.

from __future__ import annotations

from typing import Iterable

import numpy as np


_TWO_M53 = 2.0 ** -53

# stream tags
SPLIT = 1
LIFETIME = 2
NOISE = 3

# spawn-key namespaces
_CHILD = 0
_DRAW = 1
_REKEY = 2


def _state(entropy: int, *spawn_key: int) -> int:
    return int(np.random.SeedSequence(entropy, spawn_key=spawn_key).generate_state(1, dtype=np.uint64)[0])


def _keyed(keys, *extra: Iterable[int]) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64).tolist()
    columns = [np.broadcast_to(np.asarray(e, dtype=np.int64), (len(keys),)).tolist() for e in extra]
    return np.fromiter(
        (_state(k, *spawn) for k, *spawn in zip(keys, *columns)),
        dtype=np.uint64,
        count=len(keys),
    )


def root_key(seed: int) -> np.uint64:
    """Key of the root node (empty label) for a given seed."""
    state = np.random.SeedSequence(int(seed)).generate_state(1, dtype=np.uint64)
    return state[0]


def root_keys(seeds) -> np.ndarray:
    return np.array([root_key(s) for s in seeds], dtype=np.uint64)


def child_keys(parent_keys: np.ndarray, child_index: np.ndarray) -> np.ndarray:
    """Key of label (parent_label, i) from the parent key and child index i."""
    return _keyed(parent_keys, _CHILD, child_index)


def uniforms(keys: np.ndarray, stream: int, column: int = 0) -> np.ndarray:
    """Uniform draws in the open interval (0,1), one per key."""
    bits = _keyed(keys, _DRAW, int(stream), int(column)) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * _TWO_M53


def rekey(keys: np.ndarray, seed: int) -> np.ndarray:
    """Same labels, independent family of streams indexed by `seed` (used for noise)."""
    return _keyed(keys, _REKEY, int(seed))


def replicate_seeds(root_seed: int, count: int) -> list:
    """Deterministic per-replicate integer seeds spawned from one root seed."""
    children = np.random.SeedSequence(int(root_seed)).spawn(int(count))
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]
