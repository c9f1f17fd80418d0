"""Common contract for the ordered key-value indexes and the reference oracle.

Keys and values are unsigned 64-bit integers represented as Python ints.
All write operations report their outcome as a bool instead of raising, so
that the benchmark loop can tally anomalies without exception overhead:

* ``insert`` returns False when the key already exists (nothing changes),
* ``update`` and ``delete`` return False when the key is absent,
* ``read`` returns None for a missing key.
"""

from __future__ import annotations

import abc
import enum
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Tuple

KEY_MIN = 0
KEY_MAX = (1 << 64) - 1


class InvariantError(AssertionError):
    """Raised by ``check_invariants`` when a structure is corrupt."""


class RequestKind(enum.IntEnum):
    READ = 0
    UPDATE = 1
    INSERT = 2
    DELETE = 3


@dataclass(frozen=True)
class Request:
    kind: RequestKind
    key: int
    value: Optional[int] = None

    def __post_init__(self) -> None:
        needs_value = self.kind in (RequestKind.UPDATE, RequestKind.INSERT)
        if needs_value != (self.value is not None):
            raise ValueError(f"{self.kind.name} request must {'' if needs_value else 'not '}carry a value")
        if not KEY_MIN <= self.key <= KEY_MAX:
            raise ValueError(f"key out of 64-bit range: {self.key}")


def check_sorted_pairs(pairs: Sequence[Tuple[int, int]]) -> None:
    """Reject bulk-load input that is not strictly ascending by key."""
    prev = -1
    for key, _ in pairs:
        if key <= prev:
            raise ValueError(f"bulk_load input not strictly ascending at key {key}")
        prev = key
    if pairs and not (KEY_MIN <= pairs[0][0] and pairs[-1][0] <= KEY_MAX):
        raise ValueError("bulk_load keys outside the unsigned 64-bit range")


class OrderedIndex(abc.ABC):
    """Interface shared by ALEX, ART, the B+Tree and the oracle."""

    name: str = "index"

    @abc.abstractmethod
    def insert(self, key: int, value: int) -> bool: ...

    @abc.abstractmethod
    def read(self, key: int) -> Optional[int]: ...

    @abc.abstractmethod
    def update(self, key: int, value: int) -> bool: ...

    @abc.abstractmethod
    def delete(self, key: int) -> bool: ...

    @abc.abstractmethod
    def bulk_load(self, pairs: Sequence[Tuple[int, int]]) -> None:
        """Populate an empty index from pairs sorted strictly ascending by key."""

    @abc.abstractmethod
    def items(self) -> Iterator[Tuple[int, int]]:
        """Yield all pairs in ascending key order."""

    @abc.abstractmethod
    def __len__(self) -> int: ...

    def keys(self) -> Iterator[int]:
        for key, _ in self.items():
            yield key

    def check_invariants(self) -> None:
        """Raise InvariantError if the structure is inconsistent."""

    def stats(self) -> dict:
        return {}

    def apply(self, request: Request):
        """Execute one request and return the operation's result."""
        kind = request.kind
        if kind is RequestKind.READ:
            return self.read(request.key)
        if kind is RequestKind.UPDATE:
            return self.update(request.key, request.value)
        if kind is RequestKind.INSERT:
            return self.insert(request.key, request.value)
        return self.delete(request.key)


class OracleIndex(OrderedIndex):
    """Ground truth: a dict for membership plus sorting on iteration."""

    name = "oracle"

    def __init__(self) -> None:
        self._entries: dict[int, int] = {}

    def insert(self, key: int, value: int) -> bool:
        if key in self._entries:
            return False
        self._entries[key] = value
        return True

    def read(self, key: int) -> Optional[int]:
        return self._entries.get(key)

    def update(self, key: int, value: int) -> bool:
        if key not in self._entries:
            return False
        self._entries[key] = value
        return True

    def delete(self, key: int) -> bool:
        return self._entries.pop(key, None) is not None

    def bulk_load(self, pairs: Sequence[Tuple[int, int]]) -> None:
        if self._entries:
            raise ValueError("bulk_load requires an empty index")
        check_sorted_pairs(pairs)
        self._entries = dict(pairs)

    def items(self) -> Iterator[Tuple[int, int]]:
        for key in sorted(self._entries):
            yield key, self._entries[key]

    def __len__(self) -> int:
        return len(self._entries)


class NullIndex(OrderedIndex):
    """Does nothing; used to measure the cost of the dispatch loop itself."""

    name = "null"

    def insert(self, key: int, value: int) -> bool:
        return True

    def read(self, key: int) -> Optional[int]:
        return key

    def update(self, key: int, value: int) -> bool:
        return True

    def delete(self, key: int) -> bool:
        return True

    def bulk_load(self, pairs: Sequence[Tuple[int, int]]) -> None:
        pass

    def items(self) -> Iterator[Tuple[int, int]]:
        return iter(())

    def __len__(self) -> int:
        return 0


def replay(index: OrderedIndex, requests: Iterable[Request]) -> list:
    """Apply requests in order and collect each result."""
    return [index.apply(r) for r in requests]
