"""Fixed-length node arena in the tree region and its bump allocator.

Tree region layout (all integers little-endian)::

    offset 0             node 0 (the head node, head.right is the root)
    offset 32*i          node i
    offset trailer       NextNode: u56 in an 8-byte word, top byte zero
                         (trailer = capacity*32 rounded up to a cache line)

Node layout, 31 bytes at a 32-byte stride::

    left u32 @0 | right u32 @4 | up u32 @8 | key u64 @12 | value u64 @20
    dir u8 @28 | bal i8 @29 | col u8 @30 | padding @31

Node indices are u32; 0 is the head and 0xFFFFFFFF is NULL.  Freed nodes are
never reused.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from pmtx.paths import NODE_SIZE, NULL, Epoch, Field, Path, WriteIntent, at, node_field, run_epoch
from pmtx.pmem import LINE_SIZE, Region

LEFT, RIGHT = 0, 1
BLACK, RED = 0, 1
HEAD = 0

F_LEFT = node_field("left", 0, 4)
F_RIGHT = node_field("right", 4, 4)
F_UP = node_field("up", 8, 4)
F_KEY = node_field("key", 12, 8)
F_VALUE = node_field("value", 20, 8)
F_DIR = node_field("dir", 28, 1)
F_BAL = node_field("bal", 29, 1, signed=True)
F_COL = node_field("col", 30, 1)
CHILD = (F_LEFT, F_RIGHT)

NODE_FIELDS = (F_LEFT, F_RIGHT, F_UP, F_KEY, F_VALUE, F_DIR, F_BAL, F_COL)
NODE_STRUCT = struct.Struct("<IIIQQBbBx")
assert NODE_STRUCT.size == NODE_SIZE

NEXT_MAX = (1 << 56) - 1


class ArenaFullError(Exception):
    pass


class NullDereference(Exception):
    pass


@dataclass
class Node:
    left: int = NULL
    right: int = NULL
    up: int = NULL
    key: int = 0
    value: int = 0
    dir: int = 0
    bal: int = 0
    col: int = RED

    def child(self, d: int) -> int:
        return self.right if d else self.left

    def pack(self) -> bytes:
        return NODE_STRUCT.pack(self.left, self.right, self.up, self.key, self.value,
                                self.dir, self.bal, self.col)

    @classmethod
    def unpack(cls, raw: bytes) -> "Node":
        return cls(*NODE_STRUCT.unpack(raw))


def trailer_offset(capacity: int) -> int:
    raw = capacity * NODE_SIZE
    return (raw + LINE_SIZE - 1) // LINE_SIZE * LINE_SIZE


def tree_region_size(capacity: int) -> int:
    return trailer_offset(capacity) + LINE_SIZE


def capacity_from_size(size: int) -> int:
    return (size - LINE_SIZE) // NODE_SIZE


HEAD_NODE = Node(left=NULL, right=NULL, up=NULL, key=0, value=0, dir=0, bal=0, col=BLACK)


def initial_tree_image(capacity: int) -> bytes:
    """A fresh tree region: head node, zeroed slots, NextNode = 1."""
    if capacity < 2:
        raise ValueError("arena needs room for the head node and at least one node")
    img = bytearray(tree_region_size(capacity))
    img[0:NODE_SIZE] = HEAD_NODE.pack()
    struct.pack_into("<Q", img, trailer_offset(capacity), 1)
    return bytes(img)


class Arena:
    """View of the node array through a backend."""

    def __init__(self, backend, capacity: int):
        self.backend = backend
        self.capacity = capacity
        self.next_field = Field("next_node", trailer_offset(capacity), 8, region=Region.TREE)

    def next_free(self) -> int:
        return int.from_bytes(self.backend.load(Region.TREE, self.next_field.offset, 8), "little")

    def read_node(self, i: int) -> Node:
        if i == NULL:
            raise NullDereference("read of the NULL node")
        if not 0 <= i < self.capacity:
            raise IndexError(f"node index {i} outside arena of {self.capacity}")
        return Node.unpack(self.backend.load(Region.TREE, i * NODE_SIZE, NODE_SIZE))

    def get(self, i: int, field: Field) -> int:
        if i == NULL:
            raise NullDereference(f"read of NULL.{field.name}")
        raw = self.backend.load(Region.TREE, i * NODE_SIZE + field.offset, field.width)
        return int.from_bytes(raw, "little", signed=field.signed)

    @staticmethod
    def write_field(i: int, field: Field, value: int) -> WriteIntent:
        if i == NULL:
            raise NullDereference(f"write of NULL.{field.name}")
        return WriteIntent(at(i, field), value)

    @staticmethod
    def node_intents(i: int, node: Node) -> list:
        return [WriteIntent(at(i, f), getattr(node, f.name)) for f in NODE_FIELDS]

    def alloc(self, key: int, value: int, up: int = NULL, d: int = 0, col: int = RED) -> int:
        """Allocate and persist a fresh node; re-running after a crash consumes one slot."""
        n = self.next_free()
        if n >= self.capacity:
            raise ArenaFullError(f"arena of {self.capacity} nodes is full")
        node = Node(NULL, NULL, up, key, value, d, 0, col)
        run_epoch(Epoch(self.node_intents(n, node)), self.backend)
        run_epoch(Epoch([WriteIntent(Path(self.next_field), n + 1, expected=n)]), self.backend)
        return n
