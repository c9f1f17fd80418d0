"""ALEX-style updatable learned index.

Internal nodes route with a linear model over their children and data nodes
are gapped arrays whose model predicts a slot; exponential search from the
predicted slot corrects the prediction.  Inserts shift toward the nearest
gap, nodes expand (retraining their model) once the upper density bound is
reached, and nodes at maximum capacity split sideways into their parent.

Gaps are stored as ``None`` in the slot lists, so an empty slot never
carries a key.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .core import KEY_MIN, InvariantError, OrderedIndex, check_sorted_pairs


@dataclass(slots=True)
class LinearModel:
    slope: float
    intercept: float

    def predict(self, key: int) -> float:
        return self.slope * key + self.intercept


def train_linear_model(keys: Sequence[int], positions: Sequence[float]) -> LinearModel:
    """Least-squares fit of positions against keys.

    A single point yields a flat model through that position.
    """
    n = len(keys)
    if n == 0 or n != len(positions):
        raise ValueError("need equally many keys and positions, at least one")
    if n == 1:
        return LinearModel(0.0, float(positions[0]))
    # offsetting by the smallest key in integer arithmetic, then centring,
    # keeps clusters of huge keys from collapsing onto one float
    base = int(min(keys))
    x = (np.asarray(keys, dtype=np.uint64) - np.uint64(base)).astype(np.float64)
    y = np.asarray(positions, dtype=np.float64)
    x_mean = x.mean()
    y_mean = y.mean()
    dx = x - x_mean
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        return LinearModel(0.0, float(y_mean))
    slope = float(np.dot(dx, y - y_mean)) / sxx
    return LinearModel(slope, float(y_mean - slope * x_mean) - slope * base)


def predict_slot(model: LinearModel, key: int, capacity: int) -> int:
    """Round half up, then clamp into ``[0, capacity - 1]``."""
    if capacity < 1:
        raise ValueError("capacity must be at least 1")
    pos = math.floor(model.slope * key + model.intercept + 0.5)
    if pos < 0:
        return 0
    if pos >= capacity:
        return capacity - 1
    return pos


@dataclass
class AlexConfig:
    density_lower: float = 0.6
    density_upper: float = 0.8
    expansion_factor: int = 2
    append_window: int = 32
    max_node_capacity: int = 1 << 14
    min_node_capacity: int = 16
    fanout: int = 16
    max_internal_fanout: int = 256

    def __post_init__(self) -> None:
        if not 0.0 < self.density_lower < self.density_upper < 1.0:
            raise ValueError("density bounds must satisfy 0 < lower < upper < 1")
        if self.expansion_factor < 2:
            raise ValueError("expansion_factor must be >= 2")
        if self.append_window < 1:
            raise ValueError("append_window must be >= 1")
        if self.min_node_capacity < 4 or self.max_node_capacity < self.min_node_capacity:
            raise ValueError("need 4 <= min_node_capacity <= max_node_capacity")
        if self.max_node_capacity * self.density_upper < 4:
            raise ValueError("max_node_capacity too small to split")
        if self.fanout < 2 or self.max_internal_fanout < max(self.fanout, 3):
            raise ValueError("fanout must be >= 2 and max_internal_fanout >= fanout")


@dataclass
class AlexStats:
    model_retrains: int = 0
    node_expansions: int = 0
    node_splits: int = 0
    internal_splits: int = 0
    appends_without_remodel: int = 0
    exponential_search_steps: int = 0
    element_shifts: int = 0


class DataNode:
    """Gapped array of (key, value) slots with its own linear model.

    ``occ`` mirrors the slots as an occupancy bitmap (one byte per slot) so
    gap searches run as byte scans."""

    __slots__ = ("keys", "values", "occ", "model", "num_keys", "max_key", "last_pos",
                 "append_streak", "append_only")

    def __init__(self, keys: List[Optional[int]], values: List[Optional[int]], model: LinearModel) -> None:
        self.keys = keys
        self.values = values
        self.model = model
        self.occ = bytearray(k is not None for k in keys)
        self.num_keys = self.occ.count(1)
        self._reset_last(len(keys) - 1)

    def _reset_last(self, start: int) -> None:
        """Recompute the last occupied slot at or left of ``start``."""
        j = self.occ.rfind(1, 0, start + 1)
        self.last_pos = j
        self.max_key = self.keys[j] if j >= 0 else -1
        self.append_streak = 0
        self.append_only = False

    @property
    def capacity(self) -> int:
        return len(self.keys)

    @property
    def density(self) -> float:
        return self.num_keys / len(self.keys)

    @classmethod
    def from_slots(cls, slots: Sequence[Optional[int]], values: Optional[Sequence[Optional[int]]] = None) -> "DataNode":
        """Wrap an explicit slot layout; the model is fitted to that layout."""
        keys = list(slots)
        vals = list(values) if values is not None else list(keys)
        occupied = [(k, i) for i, k in enumerate(keys) if k is not None]
        model = train_linear_model([k for k, _ in occupied], [i for _, i in occupied]) if occupied else LinearModel(0.0, 0.0)
        return cls(keys, vals, model)

    @classmethod
    def build(cls, keys: Sequence[int], values: Sequence[int], config: AlexConfig,
              capacity: Optional[int] = None) -> "DataNode":
        """Lay out sorted pairs at model-predicted slots at the lower density."""
        n = len(keys)
        if capacity is None:
            capacity = max(config.min_node_capacity, math.ceil(n / config.density_lower))
            if capacity > config.max_node_capacity:
                capacity = max(config.max_node_capacity, math.ceil(n / config.density_upper))
        slots: List[Optional[int]] = [None] * capacity
        vals: List[Optional[int]] = [None] * capacity
        if n == 0:
            return cls(slots, vals, LinearModel(0.0, 0.0))
        model = train_linear_model(keys, [i * capacity / n for i in range(n)])
        _place(keys, values, model, slots, vals)
        return cls(slots, vals, model)

    def occupied(self) -> Tuple[List[int], List[int]]:
        ks: List[int] = []
        vs: List[int] = []
        for k, v in zip(self.keys, self.values):
            if k is not None:
                ks.append(k)
                vs.append(v)
        return ks, vs

    def predict(self, key: int) -> int:
        m = self.model
        pos = int(m.slope * key + m.intercept + 0.5)
        cap = len(self.keys)
        if pos < 0:
            return 0
        return cap - 1 if pos >= cap else pos


def _place(keys: Sequence[int], values: Sequence[int], model: LinearModel,
           slots: List[Optional[int]], vals: List[Optional[int]]) -> None:
    """Write sorted pairs at predicted slots, pushing right on collision and
    reserving room so every remaining key still fits."""
    cap = len(slots)
    n = len(keys)
    slope, intercept = model.slope, model.intercept
    last = -1
    for i, key in enumerate(keys):
        pos = int(slope * key + intercept + 0.5)
        if pos <= last:
            pos = last + 1
        limit = cap - (n - i)
        if pos > limit:
            pos = limit
        slots[pos] = key
        vals[pos] = values[i]
        last = pos


def _lower_bound(keys: List[Optional[int]], last: int, start: int, key: int) -> Tuple[int, int]:
    """First occupied slot holding a key >= ``key`` (``len(keys)`` if none),
    found by doubling the probe radius around ``start`` and bisecting the
    bracket.  ``last`` is the index of the last occupied slot (-1 if empty).
    Returns ``(slot, probes)``.

    A probe at index i looks at the first occupied slot at or after i, which
    makes the probe predicate monotone in i regardless of where gaps are.
    Probes past ``last`` resolve without scanning the trailing gaps.
    """
    cap = len(keys)
    probes = 0
    j = start
    if j <= last:
        while keys[j] is None:
            j += 1
    if j > last or keys[j] >= key:
        hi = start
        bound = 1
        while True:
            i = start - bound
            if i < 0:
                lo = -1
                break
            probes += 1
            j = i
            if j <= last:
                while keys[j] is None:
                    j += 1
            if j > last or keys[j] >= key:
                hi = i
                bound <<= 1
            else:
                lo = i
                break
    else:
        lo = start
        bound = 1
        while True:
            i = start + bound
            if i > last:
                hi = i if i < cap else cap
                break
            probes += 1
            j = i
            while keys[j] is None:
                j += 1
            if keys[j] >= key:
                hi = i
                break
            lo = i
            bound <<= 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        probes += 1
        j = mid
        if j <= last:
            while keys[j] is None:
                j += 1
        if j > last or keys[j] >= key:
            hi = mid
        else:
            lo = mid
    if hi > last:
        return cap, probes
    while keys[hi] is None:
        hi += 1
    return hi, probes


def _nearest_gap(occ: bytearray, p: int, q: int) -> Tuple[int, int]:
    """Nearest gap to an insertion between occupied slots ``q`` and ``p``
    (q == p - 1): ``(+1, slot)`` for a gap at or right of ``p`` or
    ``(-1, slot)`` for one at or left of ``q``; ties go right."""
    right = occ.find(0, p)
    left = occ.rfind(0, 0, q + 1)
    if right < 0 and left < 0:
        raise RuntimeError("no gap left in data node")
    if right >= 0 and (left < 0 or right - p <= q - left):
        return 1, right
    return -1, left


def exponential_search(node: DataNode, start: int, key: int) -> Tuple[bool, int]:
    """Search ``node`` for ``key`` starting at slot ``start``.

    Returns ``(True, slot)`` when found; otherwise ``(False, slot)`` where slot
    is the first occupied slot whose key exceeds ``key`` (capacity if none).
    """
    cap = len(node.keys)
    if not 0 <= start < cap:
        raise ValueError(f"start {start} outside [0, {cap})")
    slot, _ = _lower_bound(node.keys, node.last_pos, start, key)
    return slot < cap and node.keys[slot] == key, slot


def detect_append_only(node: DataNode, key: int, window: int = 32) -> bool:
    """Track the run of inserts above the node's max key; latch append-only
    mode once the run reaches ``window`` and drop it on the next in-range insert."""
    if key > node.max_key:
        node.append_streak += 1
    else:
        node.append_streak = 0
    node.append_only = node.append_streak >= window
    return node.append_only


def expand_node(node: DataNode, config: AlexConfig, stats: Optional[AlexStats] = None) -> DataNode:
    """Grow ``node`` in place by the expansion factor.

    In append-only mode the existing layout is kept and the new space is
    appended on the right; otherwise the model is refitted and every element
    is re-inserted at its predicted slot.
    """
    new_cap = min(len(node.keys) * config.expansion_factor, config.max_node_capacity)
    if new_cap <= len(node.keys):
        raise ValueError("node already at maximum capacity; split instead")
    extra = new_cap - len(node.keys)
    if stats is not None:
        stats.node_expansions += 1
    if node.append_only:
        node.keys.extend([None] * extra)
        node.values.extend([None] * extra)
        node.occ.extend(bytes(extra))
        return node
    ks, vs = node.occupied()
    slots: List[Optional[int]] = [None] * new_cap
    vals: List[Optional[int]] = [None] * new_cap
    if ks:
        n = len(ks)
        node.model = train_linear_model(ks, [i * new_cap / n for i in range(n)])
        _place(ks, vs, node.model, slots, vals)
        if stats is not None:
            stats.model_retrains += 1
    node.keys = slots
    node.values = vals
    node.occ = bytearray(k is not None for k in slots)
    node._reset_last(new_cap - 1)
    return node


class InternalNode:
    """Routes by a linear model over child indices, corrected against the
    children's lower-bound pivots so arbitrary split points stay exact."""

    __slots__ = ("model", "children", "pivots")

    def __init__(self, children: list, pivots: List[int]) -> None:
        self.children = children
        self.pivots = pivots
        self.model = LinearModel(0.0, 0.0)
        self.retrain()

    @property
    def fanout(self) -> int:
        return len(self.children)

    def retrain(self) -> None:
        m = train_linear_model(self.pivots, range(len(self.pivots)))
        # shift so a pivot key lands exactly on the half-up rounding edge
        self.model = LinearModel(m.slope, m.intercept - 0.5) if len(self.pivots) > 1 else LinearModel(0.0, 0.0)

    def child_index(self, key: int) -> int:
        m = self.model
        n = len(self.children)
        i = int(m.slope * key + m.intercept + 0.5)
        if i < 0:
            i = 0
        elif i >= n:
            i = n - 1
        piv = self.pivots
        while i > 0 and key < piv[i]:
            i -= 1
        while i + 1 < n and key >= piv[i + 1]:
            i += 1
        return i


def split_node(node: DataNode, parent: InternalNode, index: int, config: AlexConfig,
               stats: Optional[AlexStats] = None) -> Tuple[DataNode, DataNode]:
    """Split ``node`` (child ``index`` of ``parent``) at its median key."""
    ks, vs = node.occupied()
    if len(ks) < 2:
        raise ValueError("cannot split a node with fewer than two keys")
    mid = len(ks) // 2
    left = DataNode.build(ks[:mid], vs[:mid], config)
    right = DataNode.build(ks[mid:], vs[mid:], config)
    # the right half inherits the append run; consecutive inserts land there
    right.append_streak = node.append_streak
    right.append_only = node.append_only
    parent.children[index:index + 1] = [left, right]
    parent.pivots.insert(index + 1, ks[mid])
    parent.retrain()
    if stats is not None:
        stats.node_splits += 1
        stats.model_retrains += 3
    return left, right


class AlexIndex(OrderedIndex):
    name = "alex"

    def __init__(self, config: Optional[AlexConfig] = None) -> None:
        self.config = config or AlexConfig()
        self.root: object = DataNode.build([], [], self.config)
        self._count = 0
        self.counters = AlexStats()

    # -- lookup --------------------------------------------------------------

    def _route(self, key: int, path: Optional[list] = None) -> DataNode:
        node = self.root
        while type(node) is InternalNode:
            i = node.child_index(key)
            if path is not None:
                path.append((node, i))
            node = node.children[i]
        return node

    def read(self, key: int) -> Optional[int]:
        # the hot path, with routing and prediction inlined
        node = self.root
        while type(node) is InternalNode:
            node = node.children[node.child_index(key)]
        keys = node.keys
        m = node.model
        pos = int(m.slope * key + m.intercept + 0.5)
        cap = len(keys)
        if pos < 0:
            pos = 0
        elif pos >= cap:
            pos = cap - 1
        if keys[pos] == key:
            return node.values[pos]
        slot, probes = _lower_bound(keys, node.last_pos, pos, key)
        self.counters.exponential_search_steps += probes
        if slot < cap and keys[slot] == key:
            return node.values[slot]
        return None

    def _locate(self, key: int) -> Tuple[DataNode, int, bool]:
        """(data node, lower-bound slot, found) for ``key``."""
        node = self.root
        while type(node) is InternalNode:
            node = node.children[node.child_index(key)]
        keys = node.keys
        m = node.model
        pos = int(m.slope * key + m.intercept + 0.5)
        cap = len(keys)
        if pos < 0:
            pos = 0
        elif pos >= cap:
            pos = cap - 1
        if keys[pos] == key:
            return node, pos, True
        slot, probes = _lower_bound(keys, node.last_pos, pos, key)
        self.counters.exponential_search_steps += probes
        return node, slot, slot < cap and keys[slot] == key

    def update(self, key: int, value: int) -> bool:
        node, slot, found = self._locate(key)
        if found:
            node.values[slot] = value
        return found

    def delete(self, key: int) -> bool:
        node, slot, found = self._locate(key)
        if not found:
            return False
        node.keys[slot] = None
        node.values[slot] = None
        node.occ[slot] = 0
        node.num_keys -= 1
        if slot == node.last_pos:
            node._reset_last(slot - 1)
        self._count -= 1
        return True

    # -- insert --------------------------------------------------------------

    def insert(self, key: int, value: int) -> bool:
        cfg = self.config
        node, slot, found = self._locate(key)
        if found:
            return False
        detect_append_only(node, key, cfg.append_window)
        while node.num_keys + 1 > cfg.density_upper * len(node.keys) or (
                node.append_only and slot == len(node.keys) and node.last_pos == slot - 1):
            if len(node.keys) >= cfg.max_node_capacity:
                path: list = []
                self._route(key, path)
                self._split(node, path)
                node = self._route(key)
            else:
                expand_node(node, cfg, self.counters)
            slot, probes = _lower_bound(node.keys, node.last_pos, node.predict(key), key)
            self.counters.exponential_search_steps += probes
        self._place_new(node, slot, key, value)
        self._count += 1
        return True

    def _place_new(self, node: DataNode, p: int, key: int, value: int) -> None:
        keys = node.keys
        values = node.values
        occ = node.occ
        cap = len(keys)
        q = node.last_pos if p == cap else occ.rfind(1, 0, p)
        if p - q > 1:
            if node.append_only and p == cap:
                pos = q + 1
                self.counters.appends_without_remodel += 1
            else:
                pos = node.predict(key)
                if pos <= q:
                    pos = q + 1
                elif pos >= p:
                    # past the last key the model only saturates; packing next
                    # to it keeps the trailing gap for further ascending keys
                    pos = q + 1 if p == cap else p - 1
        else:
            side, g = _nearest_gap(occ, p, q)
            if side > 0:
                keys[p + 1:g + 1] = keys[p:g]
                values[p + 1:g + 1] = values[p:g]
                occ[p + 1:g + 1] = occ[p:g]
                self.counters.element_shifts += g - p
                if node.last_pos == g - 1:
                    node.last_pos = g
                pos = p
            else:
                keys[g:q] = keys[g + 1:q + 1]
                values[g:q] = values[g + 1:q + 1]
                occ[g:q] = occ[g + 1:q + 1]
                self.counters.element_shifts += q - g
                pos = q
        keys[pos] = key
        values[pos] = value
        occ[pos] = 1
        node.num_keys += 1
        if pos >= node.last_pos:
            node.last_pos = pos
            node.max_key = key

    def _split(self, node: DataNode, path: list) -> None:
        if not path:
            self.root = InternalNode([node], [KEY_MIN])
            path = [(self.root, 0)]
            self.counters.model_retrains += 1
        parent, index = path[-1]
        split_node(node, parent, index, self.config, self.counters)
        self._split_internal_if_needed(path[:-1], parent)

    def _split_internal_if_needed(self, path: list, node: InternalNode) -> None:
        while len(node.children) > self.config.max_internal_fanout:
            mid = len(node.children) // 2
            right = InternalNode(node.children[mid:], node.pivots[mid:])
            del node.children[mid:]
            del node.pivots[mid:]
            node.retrain()
            self.counters.internal_splits += 1
            self.counters.model_retrains += 2
            if not path:
                self.root = InternalNode([node, right], [node.pivots[0], right.pivots[0]])
                self.counters.model_retrains += 1
                return
            parent, index = path.pop()
            parent.children.insert(index + 1, right)
            parent.pivots.insert(index + 1, right.pivots[0])
            parent.retrain()
            self.counters.model_retrains += 1
            node = parent

    # -- bulk load -----------------------------------------------------------

    def bulk_load(self, pairs: Sequence[Tuple[int, int]]) -> None:
        if self._count:
            raise ValueError("bulk_load requires an empty index")
        check_sorted_pairs(pairs)
        keys = [k for k, _ in pairs]
        values = [v for _, v in pairs]
        self.root = self._build(keys, values, 0, len(keys))
        self._count = len(keys)

    def bulk_load_arrays(self, keys: List[int], values: List[int]) -> None:
        """``bulk_load`` for parallel, already validated key/value lists."""
        if self._count:
            raise ValueError("bulk_load requires an empty index")
        self.root = self._build(keys, values, 0, len(keys))
        self._count = len(keys)

    def _build(self, keys: List[int], values: List[int], lo: int, hi: int):
        cfg = self.config
        n = hi - lo
        if math.ceil(n / cfg.density_lower) <= cfg.max_node_capacity:
            return DataNode.build(keys[lo:hi], values[lo:hi], cfg)
        first, last = keys[lo], keys[hi - 1]
        width = -(-(last + 1 - first) // cfg.fanout)
        children = []
        pivots = []
        start = lo
        for i in range(cfg.fanout):
            bound = first + (i + 1) * width
            end = hi if i == cfg.fanout - 1 else bisect.bisect_left(keys, bound, start, hi)
            pivots.append(first + i * width)
            children.append(self._build(keys, values, start, end))
            start = end
        return InternalNode(children, pivots)

    # -- introspection -------------------------------------------------------

    def __len__(self) -> int:
        return self._count

    def data_nodes(self) -> Iterator[DataNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            if type(node) is InternalNode:
                stack.extend(reversed(node.children))
            else:
                yield node

    def items(self) -> Iterator[Tuple[int, int]]:
        for node in self.data_nodes():
            for k, v in zip(node.keys, node.values):
                if k is not None:
                    yield k, v

    def depth(self) -> int:
        d = 1
        node = self.root
        while type(node) is InternalNode:
            d += 1
            node = node.children[0]
        return d

    def stats(self) -> dict:
        out = asdict(self.counters)
        nodes = list(self.data_nodes())
        out["data_nodes"] = len(nodes)
        out["depth"] = self.depth()
        out["total_slots"] = sum(len(n.keys) for n in nodes)
        return out

    def check_invariants(self) -> None:
        cfg = self.config
        total = 0
        prev = -1

        def walk(node, lo: int, hi: Optional[int]) -> None:
            nonlocal total, prev
            if type(node) is InternalNode:
                if not node.children or len(node.children) != len(node.pivots):
                    raise InvariantError("internal node children/pivots mismatch")
                if any(a >= b for a, b in zip(node.pivots, node.pivots[1:])):
                    raise InvariantError("internal pivots not strictly increasing")
                if node.model.slope < 0:
                    raise InvariantError("internal model slope negative")
                for i, child in enumerate(node.children):
                    c_lo = lo if i == 0 else node.pivots[i]
                    c_hi = node.pivots[i + 1] if i + 1 < len(node.children) else hi
                    walk(child, c_lo, c_hi)
                return
            if len(node.keys) != len(node.values):
                raise InvariantError("slot arrays differ in length")
            if node.occ != bytearray(k is not None for k in node.keys):
                raise InvariantError("occupancy bitmap disagrees with slots")
            if len(node.keys) > cfg.max_node_capacity:
                raise InvariantError("data node above maximum capacity")
            count = 0
            last = -1
            for k, v in zip(node.keys, node.values):
                if k is None:
                    if v is not None:
                        raise InvariantError("gap carries a value")
                    continue
                if k <= prev:
                    raise InvariantError(f"keys out of order at {k}")
                if k < lo or (hi is not None and k >= hi):
                    raise InvariantError(f"key {k} outside routed range [{lo}, {hi})")
                prev = last = k
                count += 1
            if count != node.num_keys:
                raise InvariantError("occupancy counter disagrees with slots")
            if node.max_key != last or (node.last_pos >= 0) != (last >= 0) or (
                    last >= 0 and node.keys[node.last_pos] != last):
                raise InvariantError("max_key/last_pos stale")
            if count > cfg.density_upper * len(node.keys):
                raise InvariantError("density above upper bound")
            if node.model.slope < 0:
                raise InvariantError("data model slope negative")
            total += count

        walk(self.root, KEY_MIN, None)
        if total != self._count:
            raise InvariantError(f"count {self._count} != stored {total}")
