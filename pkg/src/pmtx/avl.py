"""AVL tree as a table of idempotent transitions.

Insert follows Knuth's two-phase algorithm: the search records the balance
point S (the deepest node on the path with a non-zero balance) and its
parent T, the new node is linked in, balances between S and the new node are
set, and at most one single or double rotation at S finishes the job.

Remove descends to the key, swaps in the in-order successor if needed,
unlinks, and walks back up through the ``up`` links, which every relinking
transition keeps current.

Balance convention: ``bal = height(right) - height(left)``.

Redo log layout (two cache lines)::

    line 0  @0    state, root, op, result, slot, key, value, tmp_node (see engine)
                  a i8 @36 | uy u32 @40 | uc u32 @44 | up u32 @48 | ud u8 @52 | x u32 @56
    line 1  @64   iterator set 0: it u32 @0 | s u32 @4 | t u32 @8 | dir u8 @12
            @80   iterator set 1 (same shape)
            @96   rotation record: n @96 | s @100 | r @104 | b1 @108 | b2 @112 | gp @116
                  side u8 @120 | gp_dir u8 @121 | bal_n i8 @122 | bal_s i8 @123

State ids: Clean is 0, insert states are 41..58, remove states 61..78.
"""

from __future__ import annotations

import struct
from collections import namedtuple
from typing import Optional

from pmtx.arena import CHILD, F_BAL, F_DIR, F_KEY, F_RIGHT, F_UP, HEAD, LEFT, RIGHT
from pmtx.engine import (CLEAN, F_KV, F_LINKS, F_TAIL, L_KEY, L_OP, L_RESULT, L_ROOT, L_SLOT, L_TMP,
                         L_VALUE, OP_INSERT, OP_REMOVE, InvariantViolation, Result, TreeEngine, kv, links,
                         tail, w, wl)
from pmtx.paths import NULL, Path, WriteIntent, at, log_field
from pmtx.pmem import Region

L_A = log_field("a", 36, 1, signed=True)
L_UY = log_field("unlink_y", 40, 4)
L_UC = log_field("unlink_child", 44, 4)
L_UP = log_field("unlink_parent", 48, 4)
L_UD = log_field("unlink_dir", 52, 1)
L_X = log_field("found", 56, 4)
UNLINK = struct.Struct("<IIIB")

SET_BASE = 64
SET_STRUCT = struct.Struct("<IIIB")
IterSet = namedtuple("IterSet", "it s t dir")

ROT_BASE = 96
ROT = struct.Struct("<IIIIIIBBbb")
Rotation = namedtuple("Rotation", "n s r b1 b2 gp side gp_dir bal_n bal_s")
RT_N = log_field("rot_n", 96, 4)
RT_S = log_field("rot_s", 100, 4)
RT_R = log_field("rot_r", 104, 4)
RT_B1 = log_field("rot_b1", 108, 4)
RT_B2 = log_field("rot_b2", 112, 4)
RT_GP = log_field("rot_gp", 116, 4)
RT_DIRS = log_field("rot_dirs", 120, 2)
RT_BALS = log_field("rot_bals", 122, 2)

# nodes whose balances one look-ahead adjustment step may set
ADJ_BATCH = 6


class SetFields:
    def __init__(self, e: int):
        base = SET_BASE + 16 * e
        self.base = base
        self.it = log_field(f"set{e}.it", base, 4)
        self.s = log_field(f"set{e}.s", base + 4, 4)
        self.t = log_field(f"set{e}.t", base + 8, 4)
        self.dir = log_field(f"set{e}.dir", base + 12, 1)


SETS = (SetFields(0), SetFields(1))

STATES = {
    41: ("I_ROOT_ALLOC", "add"), 42: ("I_INIT", "init"), 43: ("I_DESCEND", "descend"),
    44: ("I_ADD_NODE", "add"), 45: ("I_ADD_LINK", "add"), 46: ("I_ADJ_INIT", "balance"),
    47: ("I_ADJ_STEP", "balance"), 48: ("I_BAL_SET", "balance"), 49: ("I_BAL_ZERO", "balance"),
    50: ("I_SGL_LOG", "rotation-single"), 51: ("I_SGL_EXEC", "rotation-single"), 52: ("I_SGL_UP", "push-stack"),
    53: ("I_DBL_LOG", "rotation-double"), 54: ("I_DBL_EXEC1", "rotation-double"), 55: ("I_DBL_UP1", "push-stack"),
    56: ("I_DBL_EXEC2", "rotation-double"), 57: ("I_DBL_UP2", "push-stack"), 58: ("I_ROOT", "root-update"),
    61: ("D_DESCEND", "descend"), 62: ("D_SUCC_INIT", "descend"), 63: ("D_SUCC_DESCEND", "descend"),
    64: ("D_COPY", "remove"), 65: ("D_UNLINK_LOG", "remove"), 66: ("D_UNLINK", "remove"),
    67: ("D_W_SET", "balance"), 68: ("D_W_ZERO", "balance"),
    70: ("D_SGL_LOG", "rotation-single"), 71: ("D_SGL_EXEC", "rotation-single"), 72: ("D_SGL_UP", "push-stack"),
    73: ("D_DBL_LOG", "rotation-double"), 74: ("D_DBL_EXEC1", "rotation-double"), 75: ("D_DBL_UP1", "push-stack"),
    76: ("D_DBL_EXEC2", "rotation-double"), 77: ("D_DBL_UP2", "push-stack"), 78: ("D_ROOT", "root-update"),
}
S = {name: sid for sid, (name, _) in STATES.items()}


def sign(d: int) -> int:
    return 1 if d == RIGHT else -1


def side_of(a: int) -> int:
    return RIGHT if a > 0 else LEFT


def set_intents(e: int, **values) -> list:
    f = SETS[e]
    return [wl(getattr(f, name), v) for name, v in values.items()]


def rotation_intents(n, s, r, b1, b2, gp, side, gp_dir, bal_n, bal_s) -> list:
    return [wl(RT_N, n), wl(RT_S, s), wl(RT_R, r), wl(RT_B1, b1), wl(RT_B2, b2), wl(RT_GP, gp),
            wl(RT_DIRS, side | (gp_dir << 8)), wl(RT_BALS, (bal_n & 0xFF) | ((bal_s & 0xFF) << 8))]


class AVLTree(TreeEngine):
    kind = "avl"
    LOG_BYTES = 128
    STATE_NAMES = {CLEAN: "C", **{sid: name for sid, (name, _) in STATES.items()}}
    CATEGORY = {sid: cat for sid, (_, cat) in STATES.items()}
    INSERT_STATES = frozenset(sid for sid, (n, _) in STATES.items() if n.startswith("I_"))
    REMOVE_STATES = frozenset(sid for sid, (n, _) in STATES.items() if n.startswith("D_"))

    def _register(self) -> None:
        for sid, (name, _) in STATES.items():
            self._handlers[sid] = getattr(self, "_" + name.lower())

    # -- helpers ---------------------------------------------------------------

    def iters(self, e: int) -> IterSet:
        return IterSet(*SET_STRUCT.unpack(self.backend.load(Region.LOG, SETS[e].base, SET_STRUCT.size)))

    def rotation(self) -> Rotation:
        return Rotation(*ROT.unpack(self.backend.load(Region.LOG, ROT_BASE, ROT.size)))

    def bal(self, idx: int) -> int:
        return self.get(idx, F_BAL)

    def _ep(self, sid: int, intents) -> None:
        self.epoch(intents, self.CATEGORY[sid])

    def _cmp_dir(self, idx: int, key: int) -> int:
        return RIGHT if self.key_of(idx) < key else LEFT

    def _next_cas(self, n: int) -> WriteIntent:
        return WriteIntent(Path(self.arena.next_field), n + 1, expected=n)

    def _is_insert(self) -> bool:
        return self.log(L_OP) == OP_INSERT

    # -- staging -------------------------------------------------------------------

    def _stage_insert(self, key: int, value: int, slot: int) -> Optional[Result]:
        root = self.root()
        n = self.arena.next_free()
        self.stage([wl(L_OP, OP_INSERT), wl(L_KEY, key), wl(L_VALUE, value), wl(L_TMP, n),
                    wl(L_RESULT, Result.PENDING), wl(L_SLOT, slot)],
                   target=S["I_ROOT_ALLOC"] if root == NULL else S["I_INIT"])
        return None

    def _stage_remove(self, key: int, slot: int) -> Optional[Result]:
        if self.root() == NULL:
            return Result.NOT_FOUND
        _, e = self.state()
        self.stage([wl(L_OP, OP_REMOVE), wl(L_KEY, key), wl(L_RESULT, Result.PENDING), wl(L_SLOT, slot),
                    wl(L_UY, NULL)] + set_intents(e, it=HEAD, dir=RIGHT),
                   target=S["D_DESCEND"])
        return None

    # -- insert: search ----------------------------------------------------------------

    def _i_root_alloc(self, e):
        n, key, value = self.log(L_TMP), self.log(L_KEY), self.log(L_VALUE)
        self._ep(S["I_ROOT_ALLOC"], [w(n, F_LINKS, links(NULL, NULL, HEAD)), w(n, F_KV, kv(key, value)),
                                     w(n, F_TAIL, tail(RIGHT, 0, 0)), w(HEAD, F_RIGHT, n), wl(L_ROOT, n),
                                     self._next_cas(n)]
                 + self.accept_intents() + self.result_intents(Result.INSERTED))
        return CLEAN, 0

    def _i_init(self, e):
        root, key = self.root(), self.log(L_KEY)
        self._ep(S["I_INIT"], set_intents(e, it=root, s=root, t=HEAD, dir=self._cmp_dir(root, key))
                 + self.accept_intents())
        return self._search_next(e), 0

    def _search_next(self, e: int) -> int:
        s = self.iters(e)
        if self.key_of(s.it) == self.log(L_KEY):
            return S["I_ROOT"]
        if self.child(s.it, s.dir) == NULL:
            return S["I_ADD_NODE"]
        return S["I_DESCEND"]

    def _i_descend(self, e):
        it, bs, bt, d = self.iters(e)
        key = self.log(L_KEY)
        while True:
            q = self.child(it, d)
            if self.bal(q) != 0:
                bt, bs = it, q
            it = q
            k = self.key_of(q)
            d = RIGHT if k < key else LEFT
            if not self.lookahead or k == key or self.child(q, d) == NULL:
                break
        self._ep(S["I_DESCEND"], set_intents(1 - e, it=it, s=bs, t=bt, dir=d))
        return self._search_next(1 - e), 1

    def _i_add_node(self, e):
        s = self.iters(e)
        n, key, value = self.log(L_TMP), self.log(L_KEY), self.log(L_VALUE)
        self._ep(S["I_ADD_NODE"], [w(n, F_LINKS, links(NULL, NULL, s.it)), w(n, F_KV, kv(key, value)),
                                   w(n, F_TAIL, tail(s.dir, 0, 0))])
        return S["I_ADD_LINK"], 0

    def _i_add_link(self, e):
        s = self.iters(e)
        n = self.log(L_TMP)
        self._ep(S["I_ADD_LINK"], [w(s.it, CHILD[s.dir], n), self._next_cas(n)])
        return S["I_ADJ_INIT"], 0

    # -- insert: rebalance ----------------------------------------------------------

    def _i_adj_init(self, e):
        s = self.iters(e)
        key = self.log(L_KEY)
        a = sign(self._cmp_dir(s.s, key))
        r = self.child(s.s, side_of(a))
        self._ep(S["I_ADJ_INIT"], [wl(L_A, a)] + set_intents(1 - e, it=r, s=s.s, t=s.t))
        return self._adj_next(1 - e), 1

    def _adj_next(self, e: int) -> int:
        if self.iters(e).it != self.log(L_TMP):
            return S["I_ADJ_STEP"]
        s = self.iters(e)
        a = self.log(L_A)
        b = self.bal(s.s)
        if b == 0:
            return S["I_BAL_SET"]
        if b == -a:
            return S["I_BAL_ZERO"]
        r = self.child(s.s, side_of(a))
        return S["I_SGL_LOG"] if self.bal(r) == a else S["I_DBL_LOG"]

    def _i_adj_step(self, e):
        s = self.iters(e)
        key, q = self.log(L_KEY), self.log(L_TMP)
        p = s.it
        intents = []
        limit = ADJ_BATCH if self.lookahead else 1
        while p != q and len(intents) < limit:
            d = self._cmp_dir(p, key)
            intents.append(w(p, F_BAL, sign(d)))
            p = self.child(p, d)
        self._ep(S["I_ADJ_STEP"], intents + set_intents(1 - e, it=p, s=s.s, t=s.t))
        return self._adj_next(1 - e), 1

    def _i_bal_set(self, e):
        self._ep(S["I_BAL_SET"], [w(self.iters(e).s, F_BAL, self.log(L_A))])
        return S["I_ROOT"], 0

    def _i_bal_zero(self, e):
        self._ep(S["I_BAL_ZERO"], [w(self.iters(e).s, F_BAL, 0)])
        return S["I_ROOT"], 0

    def _i_sgl_log(self, e):
        st = self.iters(e)
        side = side_of(self.log(L_A))
        self._ep(S["I_SGL_LOG"], self._single_record(st.s, side, st.t, self._dir_from(st.t, st.s), None))
        return S["I_SGL_EXEC"], 0

    def _i_dbl_log(self, e):
        st = self.iters(e)
        side = side_of(self.log(L_A))
        self._ep(S["I_DBL_LOG"], self._double_record(st.s, side, st.t, self._dir_from(st.t, st.s)))
        return S["I_DBL_EXEC1"], 0

    def _dir_from(self, parent: int, node: int) -> int:
        return RIGHT if self.child(parent, RIGHT) == node else LEFT

    # -- rotations (shared by insert and remove) ------------------------------------

    def _single_record(self, n, side, gp, gp_dir, heavy_bal) -> list:
        s = self.child(n, side)
        b1 = self.child(s, 1 - side)
        h = sign(side)
        if heavy_bal is not None and self.bal(s) == 0:
            bal_n, bal_s = h, -h
        else:
            bal_n, bal_s = 0, 0
        return rotation_intents(n, s, NULL, b1, NULL, gp, side, gp_dir, bal_n, bal_s)

    def _double_record(self, n, side, gp, gp_dir) -> list:
        s = self.child(n, side)
        r = self.child(s, 1 - side)
        b1, b2 = self.child(r, side), self.child(r, 1 - side)
        h = sign(side)
        br = self.bal(r)
        bal_n = -h if br == h else 0
        bal_s = h if br == -h else 0
        return rotation_intents(n, s, r, b1, b2, gp, side, gp_dir, bal_n, bal_s)

    def _sgl_exec(self, sid):
        x = self.rotation()
        self._ep(sid, [w(x.n, CHILD[x.side], x.b1), w(x.s, CHILD[1 - x.side], x.n), w(x.gp, CHILD[x.gp_dir], x.s),
                       w(x.n, F_BAL, x.bal_n), w(x.s, F_BAL, x.bal_s)])
        self.event("single_rotations")

    def _sgl_up(self, sid, e, walk: bool):
        x = self.rotation()
        intents = []
        if x.b1 != NULL:
            intents += [w(x.b1, F_UP, x.n), w(x.b1, F_DIR, x.side)]
        intents += [w(x.n, F_UP, x.s), w(x.n, F_DIR, 1 - x.side), w(x.s, F_UP, x.gp), w(x.s, F_DIR, x.gp_dir)]
        if walk:
            intents += set_intents(1 - e, it=x.gp, dir=x.gp_dir)
        self._ep(sid, intents)

    def _dbl_exec1(self, sid):
        x = self.rotation()
        self._ep(sid, [w(x.s, CHILD[1 - x.side], x.b1), w(x.r, CHILD[x.side], x.s), w(x.n, CHILD[x.side], x.r),
                       w(x.s, F_BAL, x.bal_s), w(x.r, F_BAL, 0)])

    def _dbl_up1(self, sid):
        x = self.rotation()
        intents = []
        if x.b1 != NULL:
            intents += [w(x.b1, F_UP, x.s), w(x.b1, F_DIR, 1 - x.side)]
        intents += [w(x.s, F_UP, x.r), w(x.s, F_DIR, x.side), w(x.r, F_UP, x.n), w(x.r, F_DIR, x.side)]
        self._ep(sid, intents)

    def _dbl_exec2(self, sid):
        x = self.rotation()
        self._ep(sid, [w(x.n, CHILD[x.side], x.b2), w(x.r, CHILD[1 - x.side], x.n), w(x.gp, CHILD[x.gp_dir], x.r),
                       w(x.n, F_BAL, x.bal_n), w(x.r, F_BAL, 0)])
        self.event("double_rotations")

    def _dbl_up2(self, sid, e, walk: bool):
        x = self.rotation()
        intents = []
        if x.b2 != NULL:
            intents += [w(x.b2, F_UP, x.n), w(x.b2, F_DIR, x.side)]
        intents += [w(x.n, F_UP, x.r), w(x.n, F_DIR, 1 - x.side), w(x.r, F_UP, x.gp), w(x.r, F_DIR, x.gp_dir)]
        if walk:
            intents += set_intents(1 - e, it=x.gp, dir=x.gp_dir)
        self._ep(sid, intents)

    def _i_sgl_exec(self, e):
        self._sgl_exec(S["I_SGL_EXEC"])
        return S["I_SGL_UP"], 0

    def _i_sgl_up(self, e):
        self._sgl_up(S["I_SGL_UP"], e, walk=False)
        return S["I_ROOT"], 0

    def _i_dbl_exec1(self, e):
        self._dbl_exec1(S["I_DBL_EXEC1"])
        return S["I_DBL_UP1"], 0

    def _i_dbl_up1(self, e):
        self._dbl_up1(S["I_DBL_UP1"])
        return S["I_DBL_EXEC2"], 0

    def _i_dbl_exec2(self, e):
        self._dbl_exec2(S["I_DBL_EXEC2"])
        return S["I_DBL_UP2"], 0

    def _i_dbl_up2(self, e):
        self._dbl_up2(S["I_DBL_UP2"], e, walk=False)
        return S["I_ROOT"], 0

    def _i_root(self, e):
        inserted = self.arena.next_free() == self.log(L_TMP) + 1
        self._ep(S["I_ROOT"], [wl(L_ROOT, self.child(HEAD, RIGHT))]
                 + self.result_intents(Result.INSERTED if inserted else Result.ALREADY_PRESENT))
        return CLEAN, 0

    # -- remove: search and unlink ------------------------------------------------------

    def _d_descend(self, e):
        s = self.iters(e)
        key = self.log(L_KEY)
        it = self.child(s.it, s.dir)
        d = self._cmp_dir(it, key)
        extra = self.accept_intents() if s.it == HEAD else []
        self._ep(S["D_DESCEND"], set_intents(1 - e, it=it, dir=d) + extra)
        return self._remove_next(1 - e), 1

    def _remove_next(self, e: int) -> int:
        s = self.iters(e)
        if self.key_of(s.it) == self.log(L_KEY):
            if self.child(s.it, LEFT) != NULL and self.child(s.it, RIGHT) != NULL:
                return S["D_SUCC_INIT"]
            return S["D_UNLINK_LOG"]
        if self.child(s.it, s.dir) == NULL:
            return S["D_ROOT"]
        return S["D_DESCEND"]

    def _d_succ_init(self, e):
        x = self.iters(e).it
        self._ep(S["D_SUCC_INIT"], [wl(L_X, x)] + set_intents(1 - e, it=self.child(x, RIGHT)))
        return self._succ_next(1 - e), 1

    def _succ_next(self, e: int) -> int:
        if self.child(self.iters(e).it, LEFT) == NULL:
            return S["D_COPY"]
        return S["D_SUCC_DESCEND"]

    def _d_succ_descend(self, e):
        it = self.iters(e).it
        self._ep(S["D_SUCC_DESCEND"], set_intents(1 - e, it=self.child(it, LEFT)))
        return self._succ_next(1 - e), 1

    def _d_copy(self, e):
        y = self.iters(e).it
        self._ep(S["D_COPY"], [w(self.log(L_X), F_KV, at(y, F_KV))])
        return S["D_UNLINK_LOG"], 0

    def _d_unlink_log(self, e):
        y = self.iters(e).it
        left = self.child(y, LEFT)
        c = left if left != NULL else self.child(y, RIGHT)
        self._ep(S["D_UNLINK_LOG"], [wl(L_UY, y), wl(L_UC, c), wl(L_UP, self.get(y, F_UP)),
                                     wl(L_UD, self.get(y, F_DIR))])
        return S["D_UNLINK"], 0

    def _d_unlink(self, e):
        _, c, p, d = UNLINK.unpack(self.backend.load(Region.LOG, L_UY.offset, UNLINK.size))
        intents = [w(p, CHILD[d], c)]
        if c != NULL:
            intents += [w(c, F_UP, p), w(c, F_DIR, d)]
        self._ep(S["D_UNLINK"], intents + set_intents(1 - e, it=p, dir=d))
        return self._walk(1 - e), 1

    # -- remove: walk back up ------------------------------------------------------------

    def _walk(self, e: int) -> int:
        s = self.iters(e)
        n = s.it
        if n == HEAD:
            return S["D_ROOT"]
        a = -sign(s.dir)  # the shrunken side pushes the balance away from it
        b = self.bal(n)
        if b == 0:
            return S["D_W_SET"]
        if b == -a:
            return S["D_W_ZERO"]
        heavy = 1 - s.dir
        sib = self.child(n, heavy)
        return S["D_DBL_LOG"] if self.bal(sib) == -a else S["D_SGL_LOG"]

    def _d_w_set(self, e):
        s = self.iters(e)
        self._ep(S["D_W_SET"], [w(s.it, F_BAL, -sign(s.dir))])
        return S["D_ROOT"], 0

    def _d_w_zero(self, e):
        n = self.iters(e).it
        self._ep(S["D_W_ZERO"], [w(n, F_BAL, 0)]
                 + set_intents(1 - e, it=self.get(n, F_UP), dir=self.get(n, F_DIR)))
        return self._walk(1 - e), 1

    def _d_sgl_log(self, e):
        s = self.iters(e)
        n = s.it
        self._ep(S["D_SGL_LOG"], self._single_record(n, 1 - s.dir, self.get(n, F_UP), self.get(n, F_DIR), True))
        return S["D_SGL_EXEC"], 0

    def _d_sgl_exec(self, e):
        self._sgl_exec(S["D_SGL_EXEC"])
        return S["D_SGL_UP"], 0

    def _d_sgl_up(self, e):
        self._sgl_up(S["D_SGL_UP"], e, walk=True)
        # a rotation over a balanced sibling keeps the height: done
        if self.rotation().bal_n != 0:
            return S["D_ROOT"], 1
        return self._walk(1 - e), 1

    def _d_dbl_log(self, e):
        s = self.iters(e)
        n = s.it
        self._ep(S["D_DBL_LOG"], self._double_record(n, 1 - s.dir, self.get(n, F_UP), self.get(n, F_DIR)))
        return S["D_DBL_EXEC1"], 0

    def _d_dbl_exec1(self, e):
        self._dbl_exec1(S["D_DBL_EXEC1"])
        return S["D_DBL_UP1"], 0

    def _d_dbl_up1(self, e):
        self._dbl_up1(S["D_DBL_UP1"])
        return S["D_DBL_EXEC2"], 0

    def _d_dbl_exec2(self, e):
        self._dbl_exec2(S["D_DBL_EXEC2"])
        return S["D_DBL_UP2"], 0

    def _d_dbl_up2(self, e):
        self._dbl_up2(S["D_DBL_UP2"], e, walk=True)
        return self._walk(1 - e), 1

    def _d_root(self, e):
        removed = self.log(L_UY) != NULL
        self._ep(S["D_ROOT"], [wl(L_ROOT, self.child(HEAD, RIGHT))]
                 + self.result_intents(Result.REMOVED if removed else Result.NOT_FOUND))
        return CLEAN, 0

    # -- validation ------------------------------------------------------------------------

    def validate(self, expected_keys=None) -> dict:
        """Check BST order, balance factors against heights, up-links and reachability."""
        self._require_clean()
        nodes = self.nodes()
        root = self.root()
        report = {"nodes": len(nodes), "depth": 0}
        if self.child(HEAD, RIGHT) != root:
            raise InvariantViolation("head.right does not match the logged root")
        nxt = self.arena.next_free()
        for i in nodes:
            if i == HEAD or i >= nxt:
                raise InvariantViolation(f"reachable node {i} outside allocated range 1..{nxt - 1}")
        if root == NULL:
            if expected_keys is not None and len(expected_keys):
                raise InvariantViolation("tree is empty but keys were expected")
            return report
        if nodes[root].up != HEAD or nodes[root].dir != RIGHT:
            raise InvariantViolation("root up-link does not point at the head")
        height = {}
        depth = 0
        stack = [(root, None, None, 1, False)]
        while stack:
            i, lo, hi, d, done = stack.pop()
            node = nodes[i]
            if not done:
                if (lo is not None and node.key <= lo) or (hi is not None and node.key >= hi):
                    raise InvariantViolation(f"node {i} key {node.key} breaks search order")
                depth = max(depth, d)
                stack.append((i, lo, hi, d, True))
                for c, dd, nlo, nhi in ((node.left, LEFT, lo, node.key), (node.right, RIGHT, node.key, hi)):
                    if c != NULL:
                        if nodes[c].up != i or nodes[c].dir != dd:
                            raise InvariantViolation(f"up-link of node {c} does not point at parent {i}")
                        stack.append((c, nlo, nhi, d + 1, False))
                continue
            hl = height[node.left] if node.left != NULL else 0
            hr = height[node.right] if node.right != NULL else 0
            if node.bal != hr - hl:
                raise InvariantViolation(f"node {i} bal {node.bal} but heights differ by {hr - hl}")
            if abs(hr - hl) > 1:
                raise InvariantViolation(f"node {i} is out of balance ({hr - hl})")
            height[i] = 1 + max(hl, hr)
        if expected_keys is not None and self.keys() != sorted(expected_keys):
            raise InvariantViolation("in-order keys differ from the oracle")
        report.update(depth=depth, height=height[root])
        return report
