"""In-memory B+Tree with linked leaves.

Every node except the root holds between ceil(B/2) and B keys.  Inner keys
are separators: child ``i`` holds keys in ``[keys[i-1], keys[i])``.
Deletes rebalance by borrowing from a sibling first and merging otherwise.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from typing import Iterator, List, Optional, Sequence, Tuple

from .core import InvariantError, OrderedIndex, check_sorted_pairs


class _Leaf:
    __slots__ = ("keys", "values", "next")

    def __init__(self, keys: list, values: list) -> None:
        self.keys = keys
        self.values = values
        self.next: Optional[_Leaf] = None


class _Inner:
    __slots__ = ("keys", "children")

    def __init__(self, keys: list, children: list) -> None:
        self.keys = keys
        self.children = children


class BPlusTree(OrderedIndex):
    name = "btree"

    def __init__(self, fanout: int = 16) -> None:
        # even fanout keeps a merged inner node (2 * ceil(B/2) keys) within B
        if fanout < 4 or fanout % 2:
            raise ValueError("fanout must be an even number >= 4")
        self.fanout = fanout
        self.min_keys = -(-fanout // 2)
        self.root = _Leaf([], [])
        self._count = 0

    def __len__(self) -> int:
        return self._count

    @property
    def height(self) -> int:
        h = 1
        node = self.root
        while type(node) is _Inner:
            node = node.children[0]
            h += 1
        return h

    def _leaf_for(self, key: int) -> _Leaf:
        node = self.root
        while type(node) is _Inner:
            node = node.children[bisect_right(node.keys, key)]
        return node

    def read(self, key: int) -> Optional[int]:
        leaf = self._leaf_for(key)
        keys = leaf.keys
        i = bisect_left(keys, key)
        if i < len(keys) and keys[i] == key:
            return leaf.values[i]
        return None

    def update(self, key: int, value: int) -> bool:
        leaf = self._leaf_for(key)
        keys = leaf.keys
        i = bisect_left(keys, key)
        if i < len(keys) and keys[i] == key:
            leaf.values[i] = value
            return True
        return False

    def insert(self, key: int, value: int) -> bool:
        path = []
        node = self.root
        while type(node) is _Inner:
            i = bisect_right(node.keys, key)
            path.append((node, i))
            node = node.children[i]
        keys = node.keys
        i = bisect_left(keys, key)
        if i < len(keys) and keys[i] == key:
            return False
        keys.insert(i, key)
        node.values.insert(i, value)
        self._count += 1
        if len(keys) <= self.fanout:
            return True

        # leaf overflow: left keeps the larger half
        mid = (len(keys) + 1) // 2
        right = _Leaf(keys[mid:], node.values[mid:])
        del keys[mid:]
        del node.values[mid:]
        right.next = node.next
        node.next = right
        sep = right.keys[0]
        child = right
        while path:
            parent, i = path.pop()
            parent.keys.insert(i, sep)
            parent.children.insert(i + 1, child)
            if len(parent.keys) <= self.fanout:
                return True
            mid = len(parent.keys) // 2
            sep = parent.keys[mid]
            child = _Inner(parent.keys[mid + 1:], parent.children[mid + 1:])
            del parent.keys[mid:]
            del parent.children[mid + 1:]
        self.root = _Inner([sep], [self.root, child])
        return True

    def delete(self, key: int) -> bool:
        path = []
        node = self.root
        while type(node) is _Inner:
            i = bisect_right(node.keys, key)
            path.append((node, i))
            node = node.children[i]
        keys = node.keys
        i = bisect_left(keys, key)
        if i >= len(keys) or keys[i] != key:
            return False
        del keys[i]
        del node.values[i]
        self._count -= 1

        min_keys = self.min_keys
        while path and len(node.keys) < min_keys:
            parent, i = path.pop()
            self._rebalance(parent, i)
            node = parent
        root = self.root
        if type(root) is _Inner and not root.keys:
            self.root = root.children[0]
        return True

    def _rebalance(self, parent: _Inner, i: int) -> None:
        node = parent.children[i]
        left = parent.children[i - 1] if i > 0 else None
        right = parent.children[i + 1] if i + 1 < len(parent.children) else None
        leaf = type(node) is _Leaf
        if left is not None and len(left.keys) > self.min_keys:
            if leaf:
                node.keys.insert(0, left.keys.pop())
                node.values.insert(0, left.values.pop())
                parent.keys[i - 1] = node.keys[0]
            else:
                node.keys.insert(0, parent.keys[i - 1])
                parent.keys[i - 1] = left.keys.pop()
                node.children.insert(0, left.children.pop())
            return
        if right is not None and len(right.keys) > self.min_keys:
            if leaf:
                node.keys.append(right.keys.pop(0))
                node.values.append(right.values.pop(0))
                parent.keys[i] = right.keys[0]
            else:
                node.keys.append(parent.keys[i])
                parent.keys[i] = right.keys.pop(0)
                node.children.append(right.children.pop(0))
            return
        if left is not None:
            self._merge(parent, i - 1)
        else:
            self._merge(parent, i)

    def _merge(self, parent: _Inner, i: int) -> None:
        """Fold child ``i + 1`` into child ``i``."""
        a = parent.children[i]
        b = parent.children[i + 1]
        if type(a) is _Leaf:
            a.keys.extend(b.keys)
            a.values.extend(b.values)
            a.next = b.next
        else:
            a.keys.append(parent.keys[i])
            a.keys.extend(b.keys)
            a.children.extend(b.children)
        del parent.keys[i]
        del parent.children[i + 1]

    def bulk_load(self, pairs: Sequence[Tuple[int, int]]) -> None:
        check_sorted_pairs(pairs)
        self.bulk_load_arrays([k for k, _ in pairs], [v for _, v in pairs])

    def bulk_load_arrays(self, keys: List[int], values: List[int]) -> None:
        """Pack sorted pairs bottom-up into full leaves, spreading the
        remainder so that every node meets the minimum occupancy."""
        if self._count:
            raise ValueError("bulk_load requires an empty index")
        n = len(keys)
        if n <= self.fanout:
            self.root = _Leaf(list(keys), list(values))
            self._count = n
            return
        bounds = _even_chunks(n, self.fanout)
        leaves = [_Leaf(keys[a:b], values[a:b]) for a, b in bounds]
        for x, y in zip(leaves, leaves[1:]):
            x.next = y
        level = leaves
        firsts = [leaf.keys[0] for leaf in leaves]
        while len(level) > 1:
            # an inner node with B separators has B + 1 children
            bounds = _even_chunks(len(level), self.fanout + 1)
            parents = []
            parent_firsts = []
            for a, b in bounds:
                parents.append(_Inner(firsts[a + 1:b], level[a:b]))
                parent_firsts.append(firsts[a])
            level, firsts = parents, parent_firsts
        self.root = level[0]
        self._count = n

    def leaves(self) -> Iterator[_Leaf]:
        node = self.root
        while type(node) is _Inner:
            node = node.children[0]
        while node is not None:
            yield node
            node = node.next

    def items(self) -> Iterator[Tuple[int, int]]:
        for leaf in self.leaves():
            yield from zip(leaf.keys, leaf.values)

    def stats(self) -> dict:
        return {"height": self.height, "leaves": sum(1 for _ in self.leaves())}

    def check_invariants(self) -> None:
        min_keys, fanout = self.min_keys, self.fanout
        in_order: List[_Leaf] = []
        leaf_depths = set()

        def walk(node, lo: Optional[int], hi: Optional[int], depth: int, is_root: bool) -> None:
            keys = node.keys
            if any(a >= b for a, b in zip(keys, keys[1:])):
                raise InvariantError("node keys not strictly increasing")
            if len(keys) > fanout:
                raise InvariantError(f"node over capacity ({len(keys)} > {fanout})")
            if not is_root and len(keys) < min_keys:
                raise InvariantError(f"node under-filled ({len(keys)} < {min_keys})")
            if keys and ((lo is not None and keys[0] < lo) or (hi is not None and keys[-1] >= hi)):
                raise InvariantError("keys escape their separator range")
            if type(node) is _Leaf:
                if len(node.values) != len(keys):
                    raise InvariantError("leaf keys/values length mismatch")
                in_order.append(node)
                leaf_depths.add(depth)
                return
            if len(node.children) != len(keys) + 1:
                raise InvariantError("inner node child count != keys + 1")
            if is_root and not keys:
                raise InvariantError("inner root without separators")
            bounds = [lo] + keys + [hi]
            for j, child in enumerate(node.children):
                walk(child, bounds[j], bounds[j + 1], depth + 1, False)

        walk(self.root, None, None, 0, True)
        if len(leaf_depths) > 1:
            raise InvariantError("leaves at different depths")
        chained = list(self.leaves())
        if len(chained) != len(in_order) or any(a is not b for a, b in zip(chained, in_order)):
            raise InvariantError("leaf chain disagrees with tree order")
        prev = None
        total = 0
        for leaf in chained:
            if leaf.keys and prev is not None and leaf.keys[0] <= prev:
                raise InvariantError("leaf chain not sorted")
            if leaf.keys:
                prev = leaf.keys[-1]
            total += len(leaf.keys)
        if total != self._count:
            raise InvariantError(f"count {self._count} != stored {total}")


def _even_chunks(n: int, max_size: int) -> List[Tuple[int, int]]:
    """Split ``range(n)`` into the fewest chunks of at most ``max_size``,
    with sizes differing by at most one."""
    parts = -(-n // max_size)
    base, extra = divmod(n, parts)
    out = []
    start = 0
    for j in range(parts):
        end = start + base + (1 if j < extra else 0)
        out.append((start, end))
        start = end
    return out
