"""Random operation sequences for differential tests against the oracle."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from indexbench.core import KEY_MAX, OrderedIndex

READ, UPDATE, INSERT, DELETE = 0, 1, 2, 3

Ops = Tuple[List[int], List[int], List[int]]


def random_ops(seed: int, n: int) -> Ops:
    """``n`` mixed operations whose key distribution depends on the seed:
    small dense ranges (many hits and collisions), wide 64-bit keys (deep
    radix prefixes) and ascending insert runs (append-only paths)."""
    rng = np.random.default_rng(seed)
    style = seed % 4
    kinds = rng.choice(4, size=n, p=[0.35, 0.15, 0.35, 0.15])
    if style == 0:
        space = int(rng.integers(500, 5000))
        keys = rng.integers(0, space, size=n, dtype=np.uint64)
    elif style == 1:
        space = int(rng.integers(20_000, 2_000_000))
        keys = rng.integers(0, space, size=n, dtype=np.uint64)
    elif style == 2:
        keys = rng.integers(0, KEY_MAX, size=n, dtype=np.uint64, endpoint=True)
        # reuse earlier keys so reads, updates and deletes hit
        reuse = rng.random(n) < 0.5
        src = rng.integers(0, np.arange(1, n + 1))
        keys[reuse] = keys[src[reuse]]
    else:
        space = int(rng.integers(1000, 100_000))
        keys = rng.integers(0, space, size=n, dtype=np.uint64)
        ins = np.flatnonzero(kinds == INSERT)
        ascending = ins[rng.random(ins.size) < 0.7]
        keys[ascending] = space + np.arange(ascending.size, dtype=np.uint64) * np.uint64(rng.integers(1, 4))
    values = rng.integers(0, KEY_MAX, size=n, dtype=np.uint64, endpoint=True)
    return kinds.tolist(), keys.tolist(), values.tolist()


def replay_ops(index: OrderedIndex, ops: Ops) -> list:
    read, update, insert, delete = index.read, index.update, index.insert, index.delete
    return [read(k) if c == READ else update(k, v) if c == UPDATE else insert(k, v) if c == INSERT else delete(k)
            for c, k, v in zip(*ops)]


def apply_op(index: OrderedIndex, kind: int, key: int, value: int):
    if kind == READ:
        return index.read(key)
    if kind == UPDATE:
        return index.update(key, value)
    if kind == INSERT:
        return index.insert(key, value)
    return index.delete(key)
