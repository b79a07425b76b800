"""Top-down Red-Black tree as a table of idempotent transitions.

Redo log layout (four cache lines)::

    line 0  @0    state, root, op, result, slot, key, value, tmp_node (see engine)
    line 1  @64   rotation frame: q u32 @64 | p u32 @68 | b u32 @72 | gp u32 @76
                  side u8 @80 | gp_dir u8 @81
                  remove scratch: sib u32 @84 | dir2 u8 @88 | dir_l u8 @89 | child u32 @92
    line 2  @128  iterator set 0: it @0 | parent @4 | grand @8 | gg @12 | found @16
                  dir u8 @20 | last u8 @21
    line 3  @192  iterator set 1 (same shape)

State ids: Clean is 0, insert states A1..A14 are 1..14 and remove states
R1..R15 are 21..35.
"""

from __future__ import annotations

import struct
from collections import namedtuple
from typing import Optional

from pmtx.arena import BLACK, CHILD, F_COL, F_KEY, F_RIGHT, F_VALUE, HEAD, LEFT, RED, RIGHT
from pmtx.engine import (CLEAN, F_KV, F_LINKS, F_TAIL, L_KEY, L_OP, L_RESULT, L_ROOT, L_SLOT, L_TMP,
                         L_VALUE, OP_INSERT, OP_REMOVE, InvariantViolation, Result, TreeEngine, kv, links,
                         tail, w, wl)
from pmtx.paths import NULL, Path, WriteIntent, at, log_field
from pmtx.pmem import Region

R_Q = log_field("rot_q", 64, 4)
R_P = log_field("rot_p", 68, 4)
R_B = log_field("rot_b", 72, 4)
R_GP = log_field("rot_gp", 76, 4)
R_SIDE = log_field("rot_side", 80, 1)
R_GP_DIR = log_field("rot_gp_dir", 81, 1)
L_SIB = log_field("sib", 84, 4)
L_DIR2 = log_field("dir2", 88, 1)
L_DIRL = log_field("dir_l", 89, 1)
L_CHILD = log_field("child", 92, 4)
FRAME = struct.Struct("<IIIIBB")

SET_BASE = 128
SET_STRUCT = struct.Struct("<IIIIIBB")
IterSet = namedtuple("IterSet", "it parent grand gg found dir last")
Frame = namedtuple("Frame", "q p b gp side gp_dir")


class SetFields:
    def __init__(self, e: int):
        base = SET_BASE + 64 * e
        self.base = base
        self.it = log_field(f"set{e}.it", base, 4)
        self.parent = log_field(f"set{e}.parent", base + 4, 4)
        self.grand = log_field(f"set{e}.grand", base + 8, 4)
        self.gg = log_field(f"set{e}.gg", base + 12, 4)
        self.found = log_field(f"set{e}.found", base + 16, 4)
        self.dir = log_field(f"set{e}.dir", base + 20, 1)
        self.last = log_field(f"set{e}.last", base + 21, 1)


SETS = (SetFields(0), SetFields(1))

STATES = {
    1: ("A1", "add"), 2: ("A2", "init"), 3: ("A3", "add"), 4: ("A4", "add"),
    5: ("A5", "color-flip"), 6: ("A6", "rotation-double"), 7: ("A7", "rotation-double"),
    8: ("A8", "rotation-double"), 9: ("A9", "rotation-double"), 10: ("A10", "rotation-single"),
    11: ("A11", "rotation-single"), 12: ("A12", "descend"), 13: ("A13", "root-update"),
    14: ("A14", "root-update"),
    21: ("R1", "descend"), 22: ("R2", "rotation-single"), 23: ("R3", "rotation-single"),
    24: ("R4", "color-flip"), 25: ("R5", "color-flip"), 26: ("R6", "rotation-single"),
    27: ("R7", "rotation-single"), 28: ("R8", "rotation-double"), 29: ("R9", "rotation-double"),
    30: ("R10", "rotation-double"), 31: ("R11", "rotation-double"), 32: ("R12", "color-flip"),
    33: ("R13", "remove"), 34: ("R14", "remove"), 35: ("R15", "root-update"),
}
SID = {name: sid for sid, (name, _) in STATES.items()}
A = {i: SID[f"A{i}"] for i in range(1, 15)}
R = {i: SID[f"R{i}"] for i in range(1, 16)}


def frame_intents(q, p, b, gp, side, gp_dir) -> list:
    return [wl(R_Q, q), wl(R_P, p), wl(R_B, b), wl(R_GP, gp), wl(R_SIDE, side), wl(R_GP_DIR, gp_dir)]


def set_intents(e: int, **values) -> list:
    f = SETS[e]
    return [wl(getattr(f, name), v) for name, v in values.items()]


class RBTree(TreeEngine):
    kind = "rbt"
    LOG_BYTES = 256
    STATE_NAMES = {CLEAN: "C", **{sid: name for sid, (name, _) in STATES.items()}}
    CATEGORY = {sid: cat for sid, (_, cat) in STATES.items()}
    INSERT_STATES = frozenset(A.values())
    REMOVE_STATES = frozenset(R.values())

    def _register(self) -> None:
        for sid, (name, _) in STATES.items():
            self._handlers[sid] = getattr(self, "_" + name.lower())

    # -- helpers ---------------------------------------------------------------

    def iters(self, e: int) -> IterSet:
        raw = self.backend.load(Region.LOG, SETS[e].base, SET_STRUCT.size)
        return IterSet(*SET_STRUCT.unpack(raw))

    def frame(self) -> Frame:
        return Frame(*FRAME.unpack(self.backend.load(Region.LOG, R_Q.offset, FRAME.size)))

    def _ep(self, sid: int, intents) -> None:
        self.epoch(intents, self.CATEGORY[sid])

    def _exec_rotation(self, sid: int) -> None:
        q, p, b, gp, side, gp_dir = self.frame()
        self._ep(sid, [w(q, CHILD[side], b), w(p, CHILD[1 - side], q), w(gp, CHILD[gp_dir], p),
                       w(q, F_COL, RED), w(p, F_COL, BLACK)])

    def _single_frame(self, root: int, d: int, gp: int, gp_dir: int) -> list:
        """Frame for a rotation of ``root`` towards ``d`` (its child on side 1-d is promoted)."""
        side = 1 - d
        p = self.child(root, side)
        b = self.child(p, d)
        return frame_intents(root, p, b, gp, side, gp_dir)

    # -- staging -------------------------------------------------------------------

    def _stage_insert(self, key: int, value: int, slot: int) -> Optional[Result]:
        root = self.root()
        n = self.arena.next_free()
        self.stage([wl(L_OP, OP_INSERT), wl(L_KEY, key), wl(L_VALUE, value), wl(L_TMP, n),
                    wl(L_RESULT, Result.PENDING), wl(L_SLOT, slot)],
                   target=A[1] if root == NULL else A[2])
        return None

    def _stage_remove(self, key: int, slot: int) -> Optional[Result]:
        if self.root() == NULL:
            return Result.NOT_FOUND
        _, e = self.state()
        self.stage([wl(L_OP, OP_REMOVE), wl(L_KEY, key), wl(L_RESULT, Result.PENDING), wl(L_SLOT, slot)]
                   + set_intents(e, it=HEAD, parent=NULL, grand=NULL, found=NULL, dir=RIGHT),
                   category="request-staging", target=R[1])
        return None

    # -- insert ----------------------------------------------------------------------

    def _a1(self, e):
        n, key, value = self.log(L_TMP), self.log(L_KEY), self.log(L_VALUE)
        self._ep(A[1], [w(n, F_LINKS, links()), w(n, F_KV, kv(key, value)), w(n, F_TAIL, tail(0, 0, BLACK)),
                        w(HEAD, F_RIGHT, n), wl(L_ROOT, n), self._next_cas(n)]
                 + self.accept_intents() + self.result_intents(Result.INSERTED))
        return CLEAN, 0

    def _next_cas(self, n: int):
        return WriteIntent(Path(self.arena.next_field), n + 1, expected=n)

    def _a2(self, e):
        root = self.root()
        self._ep(A[2], set_intents(e, it=root, parent=HEAD, grand=NULL, gg=NULL, dir=LEFT, last=LEFT)
                 + self.accept_intents())
        return self._loop_top(e), 0

    def _loop_top(self, e: int) -> int:
        it = self.iters(e).it
        if it == NULL:
            return A[3]
        if self.is_red(self.child(it, LEFT)) and self.is_red(self.child(it, RIGHT)):
            return A[5]
        return self._after_body(e)

    def _after_body(self, e: int) -> int:
        s = self.iters(e)
        if self.is_red(s.it) and self.is_red(s.parent):
            return A[10] if s.it == self.child(s.parent, s.last) else A[6]
        return self._key_check(e)

    def _key_check(self, e: int) -> int:
        it = self.iters(e).it
        return A[13] if self.key_of(it) == self.log(L_KEY) else A[12]

    def _a3(self, e):
        n, key, value = self.log(L_TMP), self.log(L_KEY), self.log(L_VALUE)
        self._ep(A[3], [w(n, F_LINKS, links()), w(n, F_KV, kv(key, value)), w(n, F_TAIL, tail(0, 0, RED))])
        return A[4], 0

    def _a4(self, e):
        f = SETS[e]
        n, parent, d = self.log(L_TMP), self.log(f.parent), self.log(f.dir)
        self._ep(A[4], [w(parent, CHILD[d], n), wl(f.it, n), self._next_cas(n)])
        return self._after_body(e), 0

    def _a5(self, e):
        it = self.iters(e).it
        left, right = self.child(it, LEFT), self.child(it, RIGHT)
        self._ep(A[5], [w(it, F_COL, RED), w(left, F_COL, BLACK), w(right, F_COL, BLACK)])
        self.event("color_flips")
        return self._after_body(e), 0

    def _gg_dir(self, s: IterSet) -> int:
        return RIGHT if self.child(s.gg, RIGHT) == s.grand else LEFT

    def _a6(self, e):
        # first half of the double rotation: rotate parent towards last
        s = self.iters(e)
        self._ep(A[6], self._single_frame(s.parent, s.last, s.grand, s.last))
        return A[7], 0

    def _a7(self, e):
        self._exec_rotation(A[7])
        return A[8], 0

    def _a8(self, e):
        s = self.iters(e)
        self._ep(A[8], self._single_frame(s.grand, 1 - s.last, s.gg, self._gg_dir(s)))
        return A[9], 0

    def _a9(self, e):
        self._exec_rotation(A[9])
        self.event("double_rotations")
        return self._key_check(e), 0

    def _a10(self, e):
        s = self.iters(e)
        self._ep(A[10], self._single_frame(s.grand, 1 - s.last, s.gg, self._gg_dir(s)))
        return A[11], 0

    def _a11(self, e):
        self._exec_rotation(A[11])
        self.event("single_rotations")
        return self._key_check(e), 0

    def _a12(self, e):
        s = self.iters(e)
        key = self.log(L_KEY)
        it, parent, grand, gg, d = s.it, s.parent, s.grand, s.gg, s.dir
        while True:
            last = d
            d = RIGHT if self.key_of(it) < key else LEFT
            gg, grand, parent, it = grand, parent, it, self.child(it, d)
            if not self.lookahead or not self._skippable(it, parent, key):
                break
        self._ep(A[12], set_intents(1 - e, it=it, parent=parent, grand=grand, gg=gg, dir=d, last=last))
        return self._loop_top(1 - e), 1

    def _skippable(self, it: int, parent: int, key: int) -> bool:
        """True when the loop body at ``it`` would change nothing."""
        if it == NULL:
            return False
        if self.is_red(self.child(it, LEFT)) and self.is_red(self.child(it, RIGHT)):
            return False
        if self.is_red(it) and self.is_red(parent):
            return False
        return self.key_of(it) != key

    def _a13(self, e):
        self._ep(A[13], [wl(L_ROOT, self.child(HEAD, RIGHT))])
        return A[14], 0

    def _a14(self, e):
        root = self.root()
        inserted = self.arena.next_free() == self.log(L_TMP) + 1
        self._ep(A[14], [w(root, F_COL, BLACK)]
                 + self.result_intents(Result.INSERTED if inserted else Result.ALREADY_PRESENT))
        return CLEAN, 0

    # -- remove -------------------------------------------------------------------------

    def _r1(self, e):
        s = self.iters(e)
        key = self.log(L_KEY)
        last = s.dir
        it = self.child(s.it, s.dir)
        k = self.key_of(it)
        d = RIGHT if k < key else LEFT
        found = it if k == key else s.found
        extra = self.accept_intents() if s.it == HEAD else []
        self._ep(R[1], set_intents(1 - e, it=it, parent=s.it, grand=s.parent, found=found, dir=d, last=last)
                 + extra)
        return self._remove_body(1 - e), 1

    def _remove_body(self, e: int) -> int:
        s = self.iters(e)
        if not self.is_red(s.it) and not self.is_red(self.child(s.it, s.dir)):
            if self.is_red(self.child(s.it, 1 - s.dir)):
                return R[2]
            if self.child(s.parent, 1 - s.last) != NULL:
                return R[4]
        return self._loop_check(e)

    def _loop_check(self, e: int) -> int:
        s = self.iters(e)
        if self.child(s.it, s.dir) != NULL:
            return R[1]
        return R[13] if s.found != NULL else R[15]

    def _r2(self, e):
        s = self.iters(e)
        self._ep(R[2], self._single_frame(s.it, s.dir, s.parent, s.last))
        return R[3], 0

    def _r3(self, e):
        q, p, b, gp, side, gp_dir = self.frame()
        self._ep(R[3], [w(q, CHILD[side], b), w(p, CHILD[1 - side], q), w(gp, CHILD[gp_dir], p),
                        w(q, F_COL, RED), w(p, F_COL, BLACK), wl(SETS[e].parent, p)])
        self.event("single_rotations")
        return self._loop_check(e), 0

    def _r4(self, e):
        s = self.iters(e)
        sib = self.child(s.parent, 1 - s.last)
        dir2 = RIGHT if self.child(s.grand, RIGHT) == s.parent else LEFT
        self._ep(R[4], [wl(L_SIB, sib), wl(L_DIR2, dir2)])
        last = s.last
        if not self.is_red(self.child(sib, LEFT)) and not self.is_red(self.child(sib, RIGHT)):
            return R[5], 0
        if s.grand != NULL and not (s.grand == HEAD and dir2 == LEFT):
            if self.is_red(self.child(sib, last)):
                return R[8], 0
            if self.is_red(self.child(sib, 1 - last)):
                return R[6], 0
        return self._loop_check(e), 0

    def _r5(self, e):
        s = self.iters(e)
        sib = self.log(L_SIB)
        self._ep(R[5], [w(s.parent, F_COL, BLACK), w(sib, F_COL, RED), w(s.it, F_COL, RED)])
        self.event("color_flips")
        return self._loop_check(e), 0

    def _r6(self, e):
        s = self.iters(e)
        self._ep(R[6], self._single_frame(s.parent, s.last, s.grand, self.log(L_DIR2)))
        return R[7], 0

    def _r7(self, e):
        self._exec_rotation(R[7])
        self.event("single_rotations")
        return R[12], 0

    def _r8(self, e):
        s = self.iters(e)
        sib = self.log(L_SIB)
        self._ep(R[8], self._single_frame(sib, 1 - s.last, s.parent, 1 - s.last))
        return R[9], 0

    def _r9(self, e):
        self._exec_rotation(R[9])
        return R[10], 0

    def _r10(self, e):
        s = self.iters(e)
        self._ep(R[10], self._single_frame(s.parent, s.last, s.grand, self.log(L_DIR2)))
        return R[11], 0

    def _r11(self, e):
        self._exec_rotation(R[11])
        self.event("double_rotations")
        return R[12], 0

    def _r12(self, e):
        s = self.iters(e)
        x = self.child(s.grand, self.log(L_DIR2))
        self._ep(R[12], [w(s.it, F_COL, RED), w(x, F_COL, RED), w(self.child(x, LEFT), F_COL, BLACK),
                         w(self.child(x, RIGHT), F_COL, BLACK)])
        return self._loop_check(e), 0

    def _r13(self, e):
        s = self.iters(e)
        intents = []
        if s.found != s.it:
            intents.append(w(s.found, F_KV, at(s.it, F_KV)))
        dir_l = RIGHT if self.child(s.parent, RIGHT) == s.it else LEFT
        dir_r = RIGHT if self.child(s.it, LEFT) == NULL else LEFT
        intents += [wl(L_DIRL, dir_l), wl(L_CHILD, self.child(s.it, dir_r))]
        self._ep(R[13], intents)
        return R[14], 0

    def _r14(self, e):
        parent = self.log(SETS[e].parent)
        self._ep(R[14], [w(parent, CHILD[self.log(L_DIRL)], self.log(L_CHILD))])
        return R[15], 0

    def _r15(self, e):
        root = self.child(HEAD, RIGHT)
        found = self.log(SETS[e].found)
        intents = [wl(L_ROOT, root)]
        if root != NULL:
            intents.append(w(root, F_COL, BLACK))
        self._ep(R[15], intents + self.result_intents(Result.REMOVED if found != NULL else Result.NOT_FOUND))
        return CLEAN, 0

    # -- validation --------------------------------------------------------------------

    def validate(self, expected_keys=None) -> dict:
        """Check BST order, colors, black height, head link and reachability."""
        self._require_clean()
        nodes = self.nodes()
        root = self.root()
        report = {"nodes": len(nodes), "depth": 0, "black_height": 0}
        if self.child(HEAD, RIGHT) != root:
            raise InvariantViolation("head.right does not match the logged root")
        nxt = self.arena.next_free()
        for i, node in nodes.items():
            if i == HEAD or i >= nxt:
                raise InvariantViolation(f"reachable node {i} outside allocated range 1..{nxt - 1}")
            if node.col not in (RED, BLACK):
                raise InvariantViolation(f"node {i} has color byte {node.col}")
        if root == NULL:
            if expected_keys is not None and len(expected_keys):
                raise InvariantViolation("tree is empty but keys were expected")
            return report
        if nodes[root].col != BLACK:
            raise InvariantViolation("root is red")
        # iterative post-order: (black height, depth) per subtree with key bounds
        stack = [(root, None, None, 1, False)]
        bh = {}
        depth = 0
        while stack:
            i, lo, hi, d, done = stack.pop()
            node = nodes[i]
            if not done:
                if (lo is not None and node.key <= lo) or (hi is not None and node.key >= hi):
                    raise InvariantViolation(f"node {i} key {node.key} breaks search order")
                depth = max(depth, d)
                stack.append((i, lo, hi, d, True))
                if node.right != NULL:
                    stack.append((node.right, node.key, hi, d + 1, False))
                if node.left != NULL:
                    stack.append((node.left, lo, node.key, d + 1, False))
                continue
            hs = []
            for c in (node.left, node.right):
                if c == NULL:
                    hs.append(1)
                else:
                    if node.col == RED and nodes[c].col == RED:
                        raise InvariantViolation(f"red node {i} has red child {c}")
                    hs.append(bh[c])
            if hs[0] != hs[1]:
                raise InvariantViolation(f"black height mismatch under node {i}: {hs}")
            bh[i] = hs[0] + (node.col == BLACK)
        keys = self.keys()
        if expected_keys is not None and list(keys) != sorted(expected_keys):
            raise InvariantViolation("in-order keys differ from the oracle")
        report.update(depth=depth, black_height=bh[root])
        return report
