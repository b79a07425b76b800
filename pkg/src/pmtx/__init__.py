"""Crash-consistent in-place Red-Black and AVL trees over emulated persistent memory.

Every tree update is split into a sequence of micro-transactions: an epoch of
stores to either the tree arena or a constant-size redo log, followed by an
atomic advance of a 7-byte state variable.  Recovery after a crash simply
continues the in-flight operation from the durable state.
"""

from pmtx.pmem import CrashPoint, CrashPolicy, PersistenceDomain, Region
from pmtx.rbt import RBTree
from pmtx.avl import AVLTree
from pmtx.engine import Result, open_tree, create_tree

__all__ = [
    "AVLTree",
    "CrashPoint",
    "CrashPolicy",
    "PersistenceDomain",
    "RBTree",
    "Region",
    "Result",
    "create_tree",
    "open_tree",
]

__version__ = "0.1.0"
