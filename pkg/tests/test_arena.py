import pytest

from pmtx.arena import (HEAD_NODE, NODE_STRUCT, Arena, ArenaFullError, Node, NullDereference, capacity_from_size,
                        initial_tree_image, trailer_offset, tree_region_size, F_KEY)
from pmtx.paths import NULL
from pmtx.pmem import PersistenceDomain, Region


def test_layout_sizes():
    assert NODE_STRUCT.size == 32
    assert trailer_offset(3) == 128
    assert tree_region_size(3) % 64 == 0
    assert capacity_from_size(tree_region_size(100)) >= 100


def test_node_pack_roundtrip():
    n = Node(1, 2, 3, 2**63, 5, 1, -1, 1)
    assert Node.unpack(n.pack()) == n


def test_fresh_image():
    img = initial_tree_image(4)
    assert Node.unpack(img[:32]) == HEAD_NODE
    with pytest.raises(ValueError):
        initial_tree_image(1)


def test_alloc_and_full():
    d = PersistenceDomain.from_snapshot({Region.TREE: initial_tree_image(3), Region.LOG: bytes(64)})
    a = Arena(d, 3)
    assert a.next_free() == 1
    i = a.alloc(10, 20)
    assert i == 1 and a.read_node(i).key == 10
    a.alloc(11, 21)
    with pytest.raises(ArenaFullError):
        a.alloc(12, 22)
    with pytest.raises(NullDereference):
        a.read_node(NULL)
    with pytest.raises(NullDereference):
        a.get(NULL, F_KEY)
