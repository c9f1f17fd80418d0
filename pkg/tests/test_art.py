import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, rule

from indexbench.art import ArtIndex, Leaf, Node4, Node16, Node48, Node256, key_to_radix_bytes
from indexbench.core import KEY_MAX, InvariantError, OracleIndex

from _ops import random_ops, replay_ops


def test_radix_bytes_examples():
    assert list(key_to_radix_bytes(0)) == [0] * 8
    assert list(key_to_radix_bytes(1)) == [0] * 7 + [1]
    assert key_to_radix_bytes(KEY_MAX) == b"\xff" * 8


@settings(max_examples=500)
@given(st.integers(0, KEY_MAX), st.integers(0, KEY_MAX))
def test_radix_bytes_preserve_order(a, b):
    assert (key_to_radix_bytes(a) < key_to_radix_bytes(b)) == (a < b)


def test_single_key_is_a_bare_leaf():
    t = ArtIndex()
    t.insert(42, 1)
    assert type(t.root) is Leaf


def test_shared_seven_byte_prefix_makes_one_inner_node():
    t = ArtIndex()
    t.insert(0x0102030405060700, 1)
    t.insert(0x0102030405060701, 2)
    assert type(t.root) is Node4
    assert t.root.prefix == bytes([1, 2, 3, 4, 5, 6, 7])
    assert t.node_counts() == {"Leaf": 2, "Node4": 1, "Node16": 0, "Node48": 0, "Node256": 0}


@pytest.mark.parametrize("count, kind", [(4, Node4), (5, Node16), (16, Node16), (17, Node48),
                                         (48, Node48), (49, Node256), (256, Node256)])
def test_node_grows_with_children(count, kind):
    t = ArtIndex()
    for b in range(count):
        t.insert(b, b)
    assert type(t.root) is kind
    t.check_invariants()


def test_node16_downgrades_after_deletes():
    t = ArtIndex()
    for b in range(5):
        t.insert(b, b)
    assert type(t.root) is Node16
    t.delete(0)
    t.delete(1)
    assert type(t.root) is Node4
    t.check_invariants()


def test_shrink_thresholds():
    t = ArtIndex()
    for b in range(256):
        t.insert(b, b)
    kinds = []
    for b in range(255):
        t.delete(b)
        kinds.append(type(t.root).__name__)
        t.check_invariants()
    assert kinds[256 - 37 - 1] == "Node48"
    assert kinds[256 - 12 - 1] == "Node16"
    assert kinds[256 - 3 - 1] == "Node4"
    assert kinds[-1] == "Leaf"


def test_single_child_collapses_into_prefix():
    t = ArtIndex()
    keys = [0x0100, 0x0101, 0x0200]
    for k in keys:
        t.insert(k, k)
    t.delete(0x0200)
    # the remaining two keys share 7 bytes: one Node4 with a long prefix
    assert type(t.root) is Node4
    assert t.root.prefix == bytes([0, 0, 0, 0, 0, 0, 1])
    t.check_invariants()


def test_delete_only_key_empties_tree():
    t = ArtIndex()
    t.insert(9, 9)
    assert t.delete(9)
    assert t.root is None and len(t) == 0


def test_search_paths():
    t = ArtIndex()
    assert t.read(1) is None
    t.bulk_load([(k * 1000003, k) for k in range(5000)])
    assert all(t.read(k * 1000003) == k for k in range(5000))
    assert t.read(1000004) is None
    # a key sharing a compressed prefix but differing in a skipped byte
    assert t.read(2 * 1000003 + (1 << 40)) is None


def test_invariant_check_catches_corruption():
    t = ArtIndex()
    for k in range(10):
        t.insert(k, k)
    t.root.children[0] = Leaf(1 << 60, 0)
    with pytest.raises(InvariantError):
        t.check_invariants()


@pytest.mark.parametrize("seed", range(6))
def test_mixed_sequences_match_oracle(seed):
    ops = random_ops(seed, 20_000)
    t, oracle = ArtIndex(), OracleIndex()
    assert replay_ops(t, ops) == replay_ops(oracle, ops)
    assert list(t.items()) == list(oracle.items())
    t.check_invariants()


class ArtVersusOracle(RuleBasedStateMachine):
    def __init__(self):
        super().__init__()
        self.t = ArtIndex()
        self.oracle = OracleIndex()

    # clustered keys exercise prefixes; wide keys exercise lazy expansion
    keys = st.one_of(st.integers(0, 600), st.integers(0, 3).map(lambda h: h << 56 | 7),
                     st.integers(0, KEY_MAX))

    @rule(key=keys, value=st.integers(0, KEY_MAX))
    def insert(self, key, value):
        assert self.t.insert(key, value) == self.oracle.insert(key, value)

    @rule(key=keys)
    def read(self, key):
        assert self.t.read(key) == self.oracle.read(key)

    @rule(key=keys, value=st.integers(0, KEY_MAX))
    def update(self, key, value):
        assert self.t.update(key, value) == self.oracle.update(key, value)

    @rule(key=keys)
    def delete(self, key):
        assert self.t.delete(key) == self.oracle.delete(key)

    @invariant()
    def consistent(self):
        self.t.check_invariants()
        assert len(self.t) == len(self.oracle)


TestArtStateful = ArtVersusOracle.TestCase
TestArtStateful.settings = settings(max_examples=40, stateful_step_count=80, deadline=None)


def test_node48_and_node256_lookup_and_remove():
    for kind, n in ((Node48, 30), (Node256, 100)):
        node = kind()
        for b in range(0, 2 * n, 2):
            node.add(b, Leaf(b, b))
        assert node.find(10).key == 10
        assert node.find(11) is None
        node.remove(10)
        assert node.find(10) is None
        assert [b for b, _ in node.items()] == [b for b in range(0, 2 * n, 2) if b != 10]


def test_node16_find():
    node = Node16()
    for b in (3, 9, 200):
        node.add(b, Leaf(b, b))
    assert node.find(9).key == 9 and node.find(10) is None
