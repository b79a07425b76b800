"""Micro-transaction engine shared by the Red-Black and AVL machines.

The durable state variable lives in the first 8 bytes of the log region: the
even bit is bit 0 and the 55-bit state id sits above it, leaving the top byte
zero.  A transition from state ``s`` is

1. build an epoch from values read now (its read and write sets are disjoint),
2. run the epoch (stores, write-back of the touched lines, fence),
3. decide the successor by reading the post-epoch state,
4. CAS the state word and persist its line.

A crash anywhere leaves either ``s`` or the successor durable, and both can be
driven forward because the epoch of ``s`` may be re-run blindly.

Log region layout shared by both trees (line 0)::

    state u64 @0 | root u32 @8 | op u8 @12 | result u8 @13 | slot u8 @14
    key u64 @16  | value u64 @24 | tmp_node u32 @32

Bytes 512..959 hold seven 64-byte intent records for detectable execution,
and line 15 (offset 960) holds the tree kind and arena capacity.
"""

from __future__ import annotations

import enum
import struct
from collections import Counter
from typing import Callable, Dict, List, Optional

from pmtx import arena as ar
from pmtx.arena import Arena, ArenaFullError, BLACK, CHILD, F_COL, F_KEY, F_VALUE, HEAD, LEFT, RED, RIGHT
from pmtx.paths import (NULL, Epoch, Path, RecordingBackend, WriteIntent, at, log_field, node_field,
                        read, run_epoch)
from pmtx.pmem import LINE_SIZE, NOTHING_SURVIVES, PersistenceDomain, Region

CLEAN = 0
STATE_MASK = (1 << 56) - 1

OP_NONE, OP_INSERT, OP_REMOVE = 0, 1, 2
NO_SLOT = 0xFF

L_STATE = log_field("state", 0, 8)
L_ROOT = log_field("root", 8, 4)
L_OP = log_field("op", 12, 1)
L_RESULT = log_field("result", 13, 1)
L_SLOT = log_field("slot", 14, 1)
L_KEY = log_field("key", 16, 8)
L_VALUE = log_field("value", 24, 8)
L_TMP = log_field("tmp_node", 32, 4)

# composite node fields, so a fresh node is three intents
F_LINKS = node_field("links", 0, 12)
F_KV = node_field("kv", 12, 16)
F_TAIL = node_field("tail", 28, 3)

LOG_REGION_SIZE = 1024
INTENT_BASE = 512
INTENT_SLOTS = 7
META_OFFSET = 960
META = struct.Struct("<4sBI")
KIND_CODES = {"rbt": 1, "avl": 2}

CATEGORIES = (
    "request-staging", "init", "descend", "add", "color-flip", "rotation-single",
    "rotation-double", "balance", "push-stack", "remove", "root-update",
)
EVENTS = ("color_flips", "single_rotations", "double_rotations")


class Result(enum.IntEnum):
    PENDING = 0
    INSERTED = 1
    ALREADY_PRESENT = 2
    REMOVED = 3
    NOT_FOUND = 4


class Phase(enum.IntEnum):
    NONE = 0
    ANNOUNCED = 1
    ACCEPTED = 2
    DONE = 3


class EngineError(Exception):
    pass


class DirtyStateError(EngineError):
    """Reads and new operations must wait until the machine is clean."""


class InvariantViolation(EngineError):
    pass


class UsageError(EngineError):
    pass


def pack_state(state_id: int, even: int) -> int:
    return (state_id << 1) | (even & 1)


def unpack_state(word: int):
    return word >> 1, word & 1


def links(left=NULL, right=NULL, up=NULL) -> int:
    return left | (right << 32) | (up << 64)


def kv(key: int, value: int) -> int:
    return key | (value << 64)


def tail(d: int, bal: int, col: int) -> int:
    return d | ((bal & 0xFF) << 8) | (col << 16)


def w(idx: int, field, value) -> WriteIntent:
    return WriteIntent(at(idx, field), value)


def wl(field, value) -> WriteIntent:
    return WriteIntent(Path(field), value)


# intent records
def _intent_field(slot: int, name: str, off: int, width: int):
    if not 0 <= slot < INTENT_SLOTS:
        raise UsageError(f"intent slot {slot} out of range")
    return log_field(f"intent{slot}.{name}", INTENT_BASE + slot * LINE_SIZE + off, width)


def intent_fields(slot: int):
    return {
        "client": _intent_field(slot, "client", 0, 8),
        "seq": _intent_field(slot, "seq", 8, 8),
        "op": _intent_field(slot, "op", 16, 1),
        "phase": _intent_field(slot, "phase", 17, 1),
        "result": _intent_field(slot, "result", 18, 1),
        "key": _intent_field(slot, "key", 24, 8),
        "value": _intent_field(slot, "value", 32, 8),
    }


class TreeEngine:
    """Common driver.  Subclasses provide the log layout and the state handlers."""

    kind = ""
    LOG_BYTES = 0
    STATE_NAMES: Dict[int, str] = {}
    CATEGORY: Dict[int, str] = {}
    INSERT_STATES: frozenset = frozenset()
    REMOVE_STATES: frozenset = frozenset()

    def __init__(self, backend, capacity: Optional[int] = None, lookahead: bool = True,
                 strict: bool = False):
        if capacity is None:
            capacity = read_meta(backend)[1]
        self.capacity = capacity
        self.lookahead = lookahead
        self.strict = strict
        self._raw = backend
        self.backend = RecordingBackend(backend) if strict else backend
        self.arena = Arena(self.backend, capacity)
        self.metrics: Counter = Counter()
        self.events: Counter = Counter()
        self.transitions = 0
        self.reexecute = False
        self._counting = True
        self.on_transition: Optional[Callable] = None
        self.violations: List = []
        self._handlers: Dict[int, Callable] = {}
        self._register()

    # -- subclass hooks -------------------------------------------------------

    def _register(self) -> None:
        raise NotImplementedError

    def _stage_insert(self, key: int, value: int, slot: int) -> Optional[Result]:
        raise NotImplementedError

    def _stage_remove(self, key: int, slot: int) -> Optional[Result]:
        raise NotImplementedError

    def validate(self, expected_keys=None):
        raise NotImplementedError

    # -- durable accessors -------------------------------------------------------

    def log(self, field) -> int:
        return read(Path(field), self.backend)

    def get(self, idx: int, field) -> int:
        return self.arena.get(idx, field)

    def child(self, idx: int, d: int) -> int:
        return self.arena.get(idx, CHILD[d])

    def is_red(self, idx: int) -> bool:
        return idx != NULL and self.arena.get(idx, F_COL) == RED

    def key_of(self, idx: int) -> int:
        return self.arena.get(idx, F_KEY)

    def state(self):
        return unpack_state(self.log(L_STATE))

    def is_clean(self) -> bool:
        return self.state()[0] == CLEAN

    def root(self) -> int:
        return self.log(L_ROOT)

    def accept_intents(self) -> list:
        slot = self.log(L_SLOT)
        if slot == NO_SLOT:
            return []
        return [wl(intent_fields(slot)["phase"], Phase.ACCEPTED)]

    def result_intents(self, result: Result) -> list:
        out = [wl(L_RESULT, result)]
        slot = self.log(L_SLOT)
        if slot != NO_SLOT:
            out.append(wl(intent_fields(slot)["result"], result))
        return out

    # -- transitions --------------------------------------------------------------

    def epoch(self, intents, category: str) -> None:
        if self.strict:
            rec = self.backend
            pre = list(rec.reads)
            rec.reset()
            run_epoch(Epoch(intents), rec)
            reads = pre + rec.reads
            for r in reads:
                for wr in rec.writes:
                    if r[0] == wr[0] and r[1] < wr[1] + wr[2] and wr[1] < r[1] + r[2]:
                        self.violations.append((self.state(), category, r, wr))
            rec.reset()
        else:
            run_epoch(Epoch(intents), self.backend)
        if self._counting:
            self.metrics[category] += 1

    def event(self, name: str) -> None:
        if self._counting:
            self.events[name] += 1

    def _set_state(self, word: int, nxt: int, even: int) -> None:
        new = pack_state(nxt, even)
        if not self.backend.cas8(Region.LOG, 0, word, new):
            raise EngineError("state variable changed underneath the engine")
        self.backend.persist_many({Region.LOG: {0}})

    def _drive(self) -> None:
        while True:
            word = self.log(L_STATE)
            sid, e = unpack_state(word)
            if sid == CLEAN:
                return
            handler = self._handlers.get(sid)
            if handler is None:
                raise InvariantViolation(f"unknown state id {sid}")
            if self.strict:
                self.backend.reset()
            nxt, toggle = handler(e)
            if self.reexecute:
                self._reexecute(sid, e, word, nxt, toggle, handler)
            self._set_state(word, nxt, e ^ toggle)
            self.transitions += 1
            if self.on_transition is not None:
                self.on_transition(self, sid, nxt)

    def _reexecute(self, sid, e, word, nxt, toggle, handler) -> None:
        """Replay the transition as recovery would after two kinds of crash."""
        dom = self._raw
        self._counting = False
        try:
            # crash after the epoch, before the CAS
            dom.crash(NOTHING_SURVIVES)
            again = handler(e)
            if again != (nxt, toggle):
                raise InvariantViolation(f"state {sid}: re-execution chose {again}, first run {(nxt, toggle)}")
            # crash after the CAS store, before it was written back
            if not dom.cas8(Region.LOG, 0, word, pack_state(nxt, e ^ toggle)):
                raise EngineError("state CAS failed during re-execution")
            dom.crash(NOTHING_SURVIVES)
            again = handler(e)
            if again != (nxt, toggle):
                raise InvariantViolation(f"state {sid}: re-execution after CAS chose {again}")
        finally:
            self._counting = True

    # -- public operations ----------------------------------------------------------

    def _require_clean(self) -> None:
        if self.strict:
            self.backend.reset()
        sid, _ = self.state()
        if sid != CLEAN:
            raise DirtyStateError(f"machine is in dirty state {self.STATE_NAMES.get(sid, sid)}; recover first")

    def stage(self, requests, category="request-staging", target: int = CLEAN) -> None:
        """Epoch on the log from the clean state, then leave it: the accept point."""
        word = self.log(L_STATE)
        _, e = unpack_state(word)
        self.epoch(requests, category)
        self._set_state(word, target, e)
        self.transitions += 1

    def insert(self, key: int, value: int, slot: int = NO_SLOT) -> Result:
        self._require_clean()
        if self.arena.next_free() >= self.capacity:
            raise ArenaFullError(f"arena of {self.capacity} nodes is full")
        early = self._stage_insert(key, value, slot)
        if early is not None:
            return early
        self._drive()
        return Result(self.log(L_RESULT))

    def remove(self, key: int, slot: int = NO_SLOT) -> Result:
        self._require_clean()
        early = self._stage_remove(key, slot)
        if early is not None:
            return early
        self._drive()
        return Result(self.log(L_RESULT))

    def recover(self) -> Optional[Result]:
        """Drive an interrupted operation to the clean state; a no-op when clean."""
        if self.is_clean():
            return None
        self._drive()
        return Result(self.log(L_RESULT))

    def last_result(self) -> Result:
        return Result(self.log(L_RESULT))

    def lookup(self, key: int) -> Optional[int]:
        self._require_clean()
        it = self.root()
        while it != NULL:
            k = self.key_of(it)
            if k == key:
                return self.get(it, F_VALUE)
            it = self.child(it, RIGHT if k < key else LEFT)
        return None

    def __contains__(self, key: int) -> bool:
        return self.lookup(key) is not None

    # -- detectable execution ----------------------------------------------------

    def announce(self, slot: int, client: int, seq: int, op: int, key: int, value: int = 0) -> None:
        f = intent_fields(slot)
        phase = self.log(f["phase"])
        same = self.log(f["client"]) == client and self.log(f["seq"]) == seq
        if same and phase != Phase.NONE:
            raise UsageError("operation already announced")
        self.epoch([wl(f["client"], client), wl(f["seq"], seq), wl(f["op"], op), wl(f["key"], key),
                    wl(f["value"], value), wl(f["result"], Result.PENDING), wl(f["phase"], Phase.ANNOUNCED)],
                   "request-staging")

    def mark_accepted(self, slot: int) -> None:
        self._advance_phase(slot, Phase.ACCEPTED)

    def mark_done(self, slot: int) -> None:
        self._advance_phase(slot, Phase.DONE)

    def _advance_phase(self, slot: int, phase: Phase) -> None:
        f = intent_fields(slot)
        cur = Phase(self.log(f["phase"]))
        if cur > phase or (cur == Phase.NONE):
            raise UsageError(f"phase regression {cur.name} -> {phase.name}")
        if cur != phase:
            self.epoch([wl(f["phase"], phase)], "request-staging")

    def intent(self, slot: int) -> dict:
        f = intent_fields(slot)
        rec = {name: self.log(field) for name, field in f.items()}
        rec["phase"] = Phase(rec["phase"])
        rec["result"] = Result(rec["result"])
        return rec

    def run_announced(self, slot: int) -> Result:
        """Execute the operation announced in ``slot`` exactly once."""
        rec = self.intent(slot)
        if rec["phase"] != Phase.ANNOUNCED:
            raise UsageError(f"slot {slot} is in phase {rec['phase'].name}")
        if rec["op"] == OP_INSERT:
            res = self.insert(rec["key"], rec["value"], slot=slot)
        else:
            res = self.remove(rec["key"], slot=slot)
        if self.intent(slot)["phase"] == Phase.ANNOUNCED:
            # rejected before acceptance (e.g. removing from an empty tree)
            self.epoch([wl(intent_fields(slot)["result"], res)], "request-staging")
            self.mark_accepted(slot)
        self.mark_done(slot)
        return res

    def classify(self, slot: int) -> str:
        """Post-crash verdict for the operation in ``slot`` (call after recover())."""
        self._require_clean()
        phase = self.intent(slot)["phase"]
        if phase == Phase.NONE:
            return "never-intended"
        if phase == Phase.ANNOUNCED:
            return "not-executed"
        return "completed"

    # -- metrics ------------------------------------------------------------------------

    def metrics_report(self) -> dict:
        return {
            "epochs": {c: self.metrics.get(c, 0) for c in CATEGORIES},
            "events": {e: self.events.get(e, 0) for e in EVENTS},
            "transitions": self.transitions,
        }

    def reset_metrics(self) -> None:
        self.metrics.clear()
        self.events.clear()
        self.transitions = 0

    def log_footprint(self) -> int:
        """Highest redo-log byte ever written through the local domain."""
        return self._raw.high_water[Region.LOG]

    # -- snapshots for validators ---------------------------------------------------------

    def nodes(self) -> Dict[int, ar.Node]:
        """Decode every reachable node (cache-over-durable view)."""
        out: Dict[int, ar.Node] = {}
        root = self.root()
        stack = [root] if root != NULL else []
        while stack:
            i = stack.pop()
            if i in out:
                raise InvariantViolation(f"cycle through node {i}")
            node = self.arena.read_node(i)
            out[i] = node
            for c in (node.left, node.right):
                if c != NULL:
                    stack.append(c)
        return out

    def keys(self) -> List[int]:
        out = []
        stack = []
        it = self.root()
        seen = set()
        while stack or it != NULL:
            while it != NULL:
                if it in seen:
                    raise InvariantViolation(f"cycle through node {it}")
                seen.add(it)
                stack.append(it)
                it = self.child(it, LEFT)
            it = stack.pop()
            out.append(self.key_of(it))
            it = self.child(it, RIGHT)
        return out


def read_meta(backend):
    raw = backend.load(Region.LOG, META_OFFSET, META.size)
    magic, kind, capacity = META.unpack(raw)
    if magic != b"TREE":
        raise EngineError("log region carries no tree metadata")
    names = {v: k for k, v in KIND_CODES.items()}
    return names[kind], capacity


def initial_log_image(kind: str, capacity: int) -> bytes:
    img = bytearray(LOG_REGION_SIZE)
    struct.pack_into("<Q", img, 0, pack_state(CLEAN, 0))
    struct.pack_into("<I", img, L_ROOT.offset, NULL)
    img[L_SLOT.offset] = NO_SLOT
    META.pack_into(img, META_OFFSET, b"TREE", KIND_CODES[kind], capacity)
    return bytes(img)


def new_domain(kind: str, capacity: int, paths=None) -> PersistenceDomain:
    return PersistenceDomain.create(
        {Region.LOG: LOG_REGION_SIZE, Region.TREE: ar.tree_region_size(capacity)},
        paths=paths,
        init={Region.LOG: initial_log_image(kind, capacity), Region.TREE: ar.initial_tree_image(capacity)},
    )


def engine_class(kind: str):
    if kind == "rbt":
        from pmtx.rbt import RBTree
        return RBTree
    if kind == "avl":
        from pmtx.avl import AVLTree
        return AVLTree
    raise ValueError(f"unknown tree kind {kind!r}")


def create_tree(kind: str, capacity: int, paths=None, **kwargs) -> TreeEngine:
    dom = new_domain(kind, capacity, paths)
    return engine_class(kind)(dom, capacity, **kwargs)


def open_tree(backend, **kwargs) -> TreeEngine:
    """Open a tree over an existing domain or backend; the kind comes from the log metadata."""
    if isinstance(backend, dict):
        backend = PersistenceDomain.open(backend)
    kind, capacity = read_meta(backend)
    return engine_class(kind)(backend, capacity, **kwargs)
