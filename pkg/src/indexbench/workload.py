"""Seeded generation of population keys and YCSB-like request streams.

Streams are produced in fixed-size chunks from a PCG64 generator, so a
stream consumed lazily chunk by chunk is identical to the materialised one.
Each stream (population, requests, warm-up) draws from its own child of a
``SeedSequence`` so that changing one never perturbs the others.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from .core import KEY_MAX, Request, RequestKind

PRNG_NAME = "numpy.PCG64"
CHUNK = 1 << 16
DEFAULT_WARMUP = 100_000
# insert ranges up to this size may be enumerated when nearly full
DENSE_INSERT_SPAN = 1 << 27

RECORD_DTYPE = np.dtype([("kind", "u1"), ("key", "<u8"), ("value", "<u8")])


class Pattern(str, enum.Enum):
    CONSECUTIVE = "consecutive"
    RANDOM = "random"


@dataclass(frozen=True)
class MixSpec:
    read_pct: float
    update_pct: float
    insert_pct: float
    delete_pct: float

    def __post_init__(self) -> None:
        parts = self.as_tuple()
        if any(p < 0 for p in parts):
            raise ValueError(f"negative percentage in mix {parts}")
        if abs(sum(parts) - 100.0) > 1e-9:
            raise ValueError(f"mix percentages sum to {sum(parts)}, not 100")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.read_pct, self.update_pct, self.insert_pct, self.delete_pct)

    def probabilities(self) -> np.ndarray:
        p = np.asarray(self.as_tuple(), dtype=np.float64) / 100.0
        return p / p.sum()


BUILTIN_MIXES = {
    "read-only": MixSpec(100, 0, 0, 0),
    "read-heavy": MixSpec(80, 10, 10, 0),
    "write-heavy": MixSpec(40, 30, 20, 10),
    "insert-only": MixSpec(0, 0, 100, 0),
}
MIX_ORDER = tuple(BUILTIN_MIXES)


def builtin_mix(name: str) -> MixSpec:
    """Look up a preset by name; ``ReadHeavy``, ``read_heavy`` and
    ``read-heavy`` all resolve to the same mix."""
    norm = _normalise_name(name)
    for key, mix in BUILTIN_MIXES.items():
        if key.replace("-", "") == norm:
            return mix
    raise KeyError(f"unknown mix {name!r}; choose from {', '.join(BUILTIN_MIXES)}")


def _normalise_name(name: str) -> str:
    return name.lower().replace("-", "").replace("_", "")


def mix_name(mix: MixSpec) -> str:
    for key, preset in BUILTIN_MIXES.items():
        if preset == mix:
            return key
    return "custom-" + "-".join(f"{p:g}" for p in mix.as_tuple())


@dataclass(frozen=True)
class WorkloadConfig:
    population_count: int
    request_count: int
    mix: MixSpec
    read_bounds: Tuple[int, int]
    insert_bounds: Tuple[int, int]
    pattern: Pattern
    seed: int
    population_bounds: Optional[Tuple[int, int]] = None

    def __post_init__(self) -> None:
        if self.population_count < 0 or self.request_count < 0:
            raise ValueError("counts must be non-negative")
        for name in ("read_bounds", "insert_bounds", "pop_bounds"):
            lo, hi = getattr(self, name)
            if not 0 <= lo < hi <= KEY_MAX + 1:
                raise ValueError(f"{name} must be a non-empty range within [0, 2**64): got [{lo}, {hi})")
        lo, hi = self.pop_bounds
        if self.pattern is Pattern.RANDOM and self.population_count > hi - lo:
            raise ValueError("random population larger than its key range")
        if self.pattern is Pattern.CONSECUTIVE and lo + self.population_count > KEY_MAX + 1:
            raise ValueError("consecutive population overflows 64-bit keys")

    @property
    def pop_bounds(self) -> Tuple[int, int]:
        """Key range for the initial population (defaults to the read range)."""
        return self.population_bounds or self.read_bounds

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed)

    def streams(self) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
        pop, req, warm = self.seed_sequence().spawn(3)
        return (np.random.Generator(np.random.PCG64(pop)),
                np.random.Generator(np.random.PCG64(req)),
                np.random.Generator(np.random.PCG64(warm)))


def _uniform(rng: np.random.Generator, lo: int, hi: int, size: int) -> np.ndarray:
    # numpy's int64 path cannot express bounds up to 2**64; uint64 can
    return rng.integers(lo, hi, size=size, dtype=np.uint64, endpoint=False) if hi <= KEY_MAX else \
        rng.integers(lo, hi - 1, size=size, dtype=np.uint64, endpoint=True)


def generate_population(config: WorkloadConfig) -> np.ndarray:
    """Sorted population keys as a uint64 array."""
    lo, hi = config.pop_bounds
    n = config.population_count
    if config.pattern is Pattern.CONSECUTIVE:
        return np.arange(lo, lo + n, dtype=np.uint64)
    rng = config.streams()[0]
    width = hi - lo
    if n * 4 >= width:
        # dense draw: a partial shuffle of the whole range
        picks = rng.choice(width, size=n, replace=False, shuffle=False).astype(np.uint64)
    else:
        picks = np.empty(0, dtype=np.uint64)
        while picks.size < n:
            extra = _uniform(rng, 0, width, n - picks.size + 64)
            picks = np.unique(np.concatenate([picks, extra]))
        picks = rng.permutation(picks)[:n]
    keys = np.sort(picks) + np.uint64(lo)
    return keys


@dataclass
class RequestStream:
    kinds: np.ndarray
    keys: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return int(self.kinds.size)

    def __iter__(self) -> Iterator[Request]:
        for kind, key, value in zip(self.kinds.tolist(), self.keys.tolist(), self.values.tolist()):
            k = RequestKind(kind)
            carries = k in (RequestKind.UPDATE, RequestKind.INSERT)
            yield Request(k, key, value if carries else None)

    def counts(self) -> dict:
        tally = np.bincount(self.kinds, minlength=4)
        return {k.name.lower(): int(tally[k]) for k in RequestKind}

    def to_records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        rec["kind"] = self.kinds
        rec["key"] = self.keys
        rec["value"] = self.values
        return rec

    def to_bytes(self) -> bytes:
        """Little-endian packed records: kind u8, key u64, value u64."""
        return self.to_records().tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "RequestStream":
        if len(data) % RECORD_DTYPE.itemsize:
            raise ValueError("truncated request stream")
        rec = np.frombuffer(data, dtype=RECORD_DTYPE)
        return cls(rec["kind"].copy(), rec["key"].astype(np.uint64), rec["value"].astype(np.uint64))

    def dump(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "RequestStream":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def concat(cls, chunks) -> "RequestStream":
        chunks = list(chunks)
        if not chunks:
            empty = np.empty(0, dtype=np.uint64)
            return cls(np.empty(0, dtype=np.uint8), empty, empty.copy())
        return cls(np.concatenate([c.kinds for c in chunks]),
                   np.concatenate([c.keys for c in chunks]),
                   np.concatenate([c.values for c in chunks]))


def iter_request_chunks(config: WorkloadConfig, population: np.ndarray) -> Iterator[RequestStream]:
    """Lazily generate the request stream in chunks of ``CHUNK`` requests.

    The chunk size is fixed because draws are interleaved per chunk; any
    other size would yield a different (equally valid) stream."""
    rng = config.streams()[1]
    probs = config.mix.probabilities()
    r_lo, r_hi = config.read_bounds
    i_lo, i_hi = config.insert_bounds
    consecutive = config.pattern is Pattern.CONSECUTIVE
    pop_sorted = np.asarray(population, dtype=np.uint64)
    next_key = max(int(pop_sorted[-1]) + 1 if pop_sorted.size else i_lo, i_lo)
    inserts = _InsertState()
    remaining = config.request_count
    while remaining > 0:
        n = min(CHUNK, remaining)
        remaining -= n
        kinds = rng.choice(4, size=n, p=probs).astype(np.uint8)
        keys = _uniform(rng, r_lo, r_hi, n)
        values = _uniform(rng, 0, KEY_MAX + 1, n)
        ins = np.flatnonzero(kinds == RequestKind.INSERT)
        if ins.size:
            if consecutive:
                if next_key + ins.size > KEY_MAX + 1:
                    raise ValueError("consecutive inserts overflow 64-bit keys")
                keys[ins] = np.arange(next_key, next_key + ins.size, dtype=np.uint64)
                next_key += ins.size
            else:
                keys[ins] = _fresh_keys(rng, i_lo, i_hi, ins.size, pop_sorted, inserts)
        yield RequestStream(kinds, keys, values)


class _InsertState:
    """Keys issued so far and, once the range is nearly full, a shuffled
    list of the keys still free (consumed front to back)."""

    def __init__(self) -> None:
        self.issued: set = set()
        self.pool: Optional[np.ndarray] = None
        self.pool_pos = 0


def _fresh_keys(rng: np.random.Generator, lo: int, hi: int, n: int,
                population: np.ndarray, state: _InsertState) -> np.ndarray:
    """Draw ``n`` keys from [lo, hi) absent from the population and from all
    previously issued inserts.

    Equivalent to redrawing on every collision: each new key is uniform over
    the keys still free.  Candidates are drawn in oversized batches, and once
    fewer than a quarter of a small range is free the free keys are listed
    once, shuffled, and handed out in order."""
    if state.pool is not None:
        if state.pool.size - state.pool_pos < n:
            raise ValueError("insert range exhausted")
        picks = state.pool[state.pool_pos:state.pool_pos + n]
        state.pool_pos += n
        return picks
    issued = state.issued
    span = hi - lo
    in_range = int(np.searchsorted(population, hi, "left") - np.searchsorted(population, lo, "left")) \
        if hi <= KEY_MAX else int(population.size - np.searchsorted(population, lo, "left"))
    free = span - in_range - len(issued)
    if free < n:
        raise ValueError("insert range exhausted")
    out: list = []
    while len(out) < n:
        need = n - len(out)
        free = span - in_range - len(issued)
        if span <= DENSE_INSERT_SPAN and free * 4 < span:
            taken = np.concatenate([population, np.fromiter(issued, np.uint64, len(issued))])
            state.pool = rng.permutation(np.setdiff1d(np.arange(lo, hi, dtype=np.uint64), taken))
            state.issued = set()
            state.pool_pos = need
            out.extend(state.pool[:need].tolist())
            break
        cand = _uniform(rng, lo, hi, int(need * span / free * 1.25) + 16)
        if population.size:
            pos = np.searchsorted(population, cand)
            pos[pos == population.size] = 0
            cand = cand[population[pos] != cand]
        for key in cand.tolist():
            if key in issued:
                continue
            issued.add(key)
            out.append(key)
            if len(out) == n:
                break
    return np.asarray(out, dtype=np.uint64)


def generate_requests(config: WorkloadConfig, population: np.ndarray) -> RequestStream:
    return RequestStream.concat(iter_request_chunks(config, population))


def warmup_stream(count: int, read_bounds: Tuple[int, int], seed: int = 0,
                  rng: Optional[np.random.Generator] = None) -> RequestStream:
    """``count`` uniform reads over ``read_bounds``."""
    if rng is None:
        rng = WorkloadConfig(0, 0, builtin_mix("read-only"), read_bounds, read_bounds,
                             Pattern.RANDOM, seed).streams()[2]
    lo, hi = read_bounds
    keys = _uniform(rng, lo, hi, count)
    return RequestStream(np.zeros(count, dtype=np.uint8), keys, np.zeros(count, dtype=np.uint64))
