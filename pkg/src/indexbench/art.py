"""Adaptive radix tree over 8-byte big-endian keys.

Inner nodes come in four sizes (4, 16, 48, 256 children) and are grown
before they overflow and shrunk after deletes.  Each inner node stores the
compressed path bytes it skips (path compression) and a subtree holding a
single key is just a leaf hung directly off its parent (lazy expansion).
"""

from __future__ import annotations

from bisect import bisect_left
from typing import Iterator, List, Optional, Sequence, Tuple

from .core import InvariantError, OrderedIndex, check_sorted_pairs

KEY_BYTES = 8


def key_to_radix_bytes(key: int) -> bytes:
    """Order-preserving encoding: big-endian, so byte order == integer order."""
    return key.to_bytes(KEY_BYTES, "big")


class Leaf:
    __slots__ = ("key", "value")

    def __init__(self, key: int, value: int) -> None:
        self.key = key
        self.value = value


class Node4:
    __slots__ = ("prefix", "keys", "children")
    capacity = 4
    min_children = 2

    def __init__(self, prefix: bytes = b"") -> None:
        self.prefix = prefix
        self.keys = bytearray()
        self.children: list = []

    def __len__(self) -> int:
        return len(self.keys)

    def find(self, byte: int):
        i = self.keys.find(byte)
        return self.children[i] if i >= 0 else None

    def add(self, byte: int, child) -> None:
        i = bisect_left(self.keys, byte)
        self.keys.insert(i, byte)
        self.children.insert(i, child)

    def replace(self, byte: int, child) -> None:
        self.children[self.keys.find(byte)] = child

    def remove(self, byte: int) -> None:
        i = self.keys.find(byte)
        del self.keys[i]
        del self.children[i]

    def items(self) -> Iterator[Tuple[int, object]]:
        return zip(self.keys, self.children)


class Node16(Node4):
    __slots__ = ()
    capacity = 16
    min_children = 4

    def find(self, byte: int):
        keys = self.keys
        i = bisect_left(keys, byte)
        if i < len(keys) and keys[i] == byte:
            return self.children[i]
        return None


class Node48:
    """256-entry byte index into 48 child slots (0 marks an absent byte)."""

    __slots__ = ("prefix", "index", "children", "count")
    capacity = 48
    min_children = 13

    def __init__(self, prefix: bytes = b"") -> None:
        self.prefix = prefix
        self.index = bytearray(256)
        self.children: list = [None] * 48
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def find(self, byte: int):
        slot = self.index[byte]
        return self.children[slot - 1] if slot else None

    def add(self, byte: int, child) -> None:
        slot = self.children.index(None)
        self.children[slot] = child
        self.index[byte] = slot + 1
        self.count += 1

    def replace(self, byte: int, child) -> None:
        self.children[self.index[byte] - 1] = child

    def remove(self, byte: int) -> None:
        self.children[self.index[byte] - 1] = None
        self.index[byte] = 0
        self.count -= 1

    def items(self) -> Iterator[Tuple[int, object]]:
        index, children = self.index, self.children
        return ((b, children[index[b] - 1]) for b in range(256) if index[b])


class Node256:
    __slots__ = ("prefix", "children", "count")
    capacity = 256
    min_children = 38

    def __init__(self, prefix: bytes = b"") -> None:
        self.prefix = prefix
        self.children: list = [None] * 256
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def find(self, byte: int):
        return self.children[byte]

    def add(self, byte: int, child) -> None:
        self.children[byte] = child
        self.count += 1

    def replace(self, byte: int, child) -> None:
        self.children[byte] = child

    def remove(self, byte: int) -> None:
        self.children[byte] = None
        self.count -= 1

    def items(self) -> Iterator[Tuple[int, object]]:
        return ((b, c) for b, c in enumerate(self.children) if c is not None)


_GROW = {Node4: Node16, Node16: Node48, Node48: Node256}
# shrink once the count falls to these values; the gap to the grow point
# keeps a node from flapping between two kinds
_SHRINK = {Node256: (37, Node48), Node48: (12, Node16), Node16: (3, Node4)}

INNER_KINDS = (Node4, Node16, Node48, Node256)


def _convert(node, kind):
    new = kind(node.prefix)
    for byte, child in node.items():
        new.add(byte, child)
    return new


class ArtIndex(OrderedIndex):
    name = "art"

    def __init__(self) -> None:
        self.root = None
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def _set_child(self, parent, byte: int, node) -> None:
        if parent is None:
            self.root = node
        else:
            parent.replace(byte, node)

    def read(self, key: int) -> Optional[int]:
        node = self.root
        if node is None:
            return None
        kb = key.to_bytes(KEY_BYTES, "big")
        depth = 0
        while type(node) is not Leaf:
            prefix = node.prefix
            if prefix:
                end = depth + len(prefix)
                if kb[depth:end] != prefix:
                    return None
                depth = end
            node = node.find(kb[depth])
            if node is None:
                return None
            depth += 1
        return node.value if node.key == key else None

    def _leaf(self, key: int) -> Optional[Leaf]:
        node = self.root
        if node is None:
            return None
        kb = key.to_bytes(KEY_BYTES, "big")
        depth = 0
        while type(node) is not Leaf:
            prefix = node.prefix
            if prefix:
                end = depth + len(prefix)
                if kb[depth:end] != prefix:
                    return None
                depth = end
            node = node.find(kb[depth])
            if node is None:
                return None
            depth += 1
        return node if node.key == key else None

    def update(self, key: int, value: int) -> bool:
        leaf = self._leaf(key)
        if leaf is None:
            return False
        leaf.value = value
        return True

    def insert(self, key: int, value: int) -> bool:
        node = self.root
        if node is None:
            self.root = Leaf(key, value)
            self._count += 1
            return True
        kb = key.to_bytes(KEY_BYTES, "big")
        parent = None
        pbyte = 0
        depth = 0
        while True:
            if type(node) is Leaf:
                if node.key == key:
                    return False
                lb = node.key.to_bytes(KEY_BYTES, "big")
                i = depth
                while lb[i] == kb[i]:
                    i += 1
                inner = Node4(kb[depth:i])
                inner.add(lb[i], node)
                inner.add(kb[i], Leaf(key, value))
                self._set_child(parent, pbyte, inner)
                break
            prefix = node.prefix
            if prefix:
                end = depth + len(prefix)
                if kb[depth:end] != prefix:
                    m = 0
                    while prefix[m] == kb[depth + m]:
                        m += 1
                    inner = Node4(prefix[:m])
                    node.prefix = prefix[m + 1:]
                    inner.add(prefix[m], node)
                    inner.add(kb[depth + m], Leaf(key, value))
                    self._set_child(parent, pbyte, inner)
                    break
                depth = end
            byte = kb[depth]
            child = node.find(byte)
            if child is None:
                if len(node) >= node.capacity:
                    node = _convert(node, _GROW[type(node)])
                    self._set_child(parent, pbyte, node)
                node.add(byte, Leaf(key, value))
                break
            parent, pbyte = node, byte
            node = child
            depth += 1
        self._count += 1
        return True

    def delete(self, key: int) -> bool:
        node = self.root
        if node is None:
            return False
        kb = key.to_bytes(KEY_BYTES, "big")
        # (node, byte leading to it) from the root down
        path: List[Tuple[object, int]] = []
        depth = 0
        while type(node) is not Leaf:
            prefix = node.prefix
            if prefix:
                end = depth + len(prefix)
                if kb[depth:end] != prefix:
                    return False
                depth = end
            byte = kb[depth]
            child = node.find(byte)
            if child is None:
                return False
            path.append((node, byte))
            node = child
            depth += 1
        if node.key != key:
            return False
        self._count -= 1
        if not path:
            self.root = None
            return True
        parent, byte = path.pop()
        grand, gbyte = path[-1] if path else (None, 0)
        parent.remove(byte)
        n = len(parent)
        if type(parent) is Node4:
            if n == 1:
                # collapse the single-child node back into a compressed path
                only_byte, only = next(iter(parent.items()))
                if type(only) is not Leaf:
                    only.prefix = parent.prefix + bytes((only_byte,)) + only.prefix
                self._set_child(grand, gbyte, only)
        else:
            limit, kind = _SHRINK[type(parent)]
            if n <= limit:
                self._set_child(grand, gbyte, _convert(parent, kind))
        return True

    def bulk_load(self, pairs: Sequence[Tuple[int, int]]) -> None:
        if self._count:
            raise ValueError("bulk_load requires an empty index")
        check_sorted_pairs(pairs)
        for key, value in pairs:
            self.insert(key, value)

    def bulk_load_arrays(self, keys: List[int], values: List[int]) -> None:
        if self._count:
            raise ValueError("bulk_load requires an empty index")
        insert = self.insert
        for key, value in zip(keys, values):
            insert(key, value)

    def items(self) -> Iterator[Tuple[int, int]]:
        if self.root is None:
            return
        stack = [self.root]
        while stack:
            node = stack.pop()
            if type(node) is Leaf:
                yield node.key, node.value
            else:
                stack.extend(reversed([c for _, c in node.items()]))

    def node_counts(self) -> dict:
        counts = {"Leaf": 0, "Node4": 0, "Node16": 0, "Node48": 0, "Node256": 0}
        stack = [self.root] if self.root is not None else []
        while stack:
            node = stack.pop()
            counts[type(node).__name__] += 1
            if type(node) is not Leaf:
                stack.extend(c for _, c in node.items())
        return counts

    def stats(self) -> dict:
        return self.node_counts()

    def check_invariants(self) -> None:
        """Every leaf's key spells its root-to-leaf path, child counts stay in
        their kind's range and iteration is ordered."""
        leaf_keys: List[int] = []
        stack = [(self.root, b"")] if self.root is not None else []
        while stack:
            node, path = stack.pop()
            if type(node) is Leaf:
                if not key_to_radix_bytes(node.key).startswith(path):
                    raise InvariantError(f"leaf {node.key} not on its radix path")
                leaf_keys.append(node.key)
                continue
            if type(node) not in INNER_KINDS:
                raise InvariantError(f"unknown node type {type(node).__name__}")
            n = len(node)
            if n > node.capacity:
                raise InvariantError(f"{type(node).__name__} over capacity ({n})")
            if n < node.min_children:
                raise InvariantError(f"{type(node).__name__} under-filled ({n}); should shrink or collapse")
            here = path + node.prefix
            if len(here) >= KEY_BYTES:
                raise InvariantError("inner node deeper than the key length")
            items = list(node.items())
            bytes_seen = [b for b, _ in items]
            if len(items) != n or any(a >= b for a, b in zip(bytes_seen, bytes_seen[1:])):
                raise InvariantError("child bytes not unique and ordered")
            if isinstance(node, Node48):
                live = sum(1 for c in node.children if c is not None)
                if live != node.count or sum(1 for s in node.index if s) != node.count:
                    raise InvariantError("Node48 index and slots disagree")
            if isinstance(node, Node256) and sum(1 for c in node.children if c is not None) != node.count:
                raise InvariantError("Node256 count stale")
            for byte, child in reversed(items):
                if child is None:
                    raise InvariantError("dangling child reference")
                stack.append((child, here + bytes((byte,))))
        if len(leaf_keys) != self._count:
            raise InvariantError(f"count {self._count} != leaves {len(leaf_keys)}")
        if any(a >= b for a, b in zip(leaf_keys, leaf_keys[1:])):
            raise InvariantError("in-order traversal not ascending")
