# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tree kernel: same algorithms and counters as ``_pykernel``.

Nodes live in a numpy array whose dtype is byte-identical to the persistent
node layout, viewed here as a packed C struct.
"""

import numpy as np

from libc.stdint cimport int8_t, int64_t, uint8_t, uint32_t, uint64_t

from pmtx.arena import ArenaFullError, trailer_offset, tree_region_size
from pmtx.kernel._pykernel import NODE_DTYPE

cdef packed struct Node:
    uint32_t left
    uint32_t right
    uint32_t up
    uint64_t key
    uint64_t value
    uint8_t dir
    int8_t bal
    uint8_t col
    uint8_t pad


cdef uint32_t NIL = 0xFFFFFFFF

cdef enum:
    HEAD = 0
    LEFT = 0
    RIGHT = 1
    BLACK = 0
    RED = 1
    INSERTED = 1
    ALREADY_PRESENT = 2
    REMOVED = 3
    NOT_FOUND = 4
    ADJ_BATCH = 6
    C_STAGE = 0
    C_INIT = 1
    C_DESCEND = 2
    C_ADD = 3
    C_FLIP = 4
    C_SINGLE = 5
    C_DOUBLE = 6
    C_BALANCE = 7
    C_PUSH = 8
    C_REMOVE = 9
    C_ROOT = 10
    E_FLIPS = 0
    E_SINGLE = 1
    E_DOUBLE = 2


cdef inline uint32_t child(Node* nd, uint32_t i, int d) noexcept nogil:
    return nd[i].right if d else nd[i].left


cdef inline void set_child(Node* nd, uint32_t i, int d, uint32_t c) noexcept nogil:
    if d:
        nd[i].right = c
    else:
        nd[i].left = c


cdef inline bint red(Node* nd, uint32_t i) noexcept nogil:
    return i != NIL and nd[i].col == RED


cdef class TreeKernel:
    """Volatile RBT/AVL with transition counters (compiled)."""

    cdef public str kind
    cdef public bint lookahead
    cdef readonly uint64_t capacity
    cdef readonly object _arr
    cdef Node* nd
    cdef uint64_t nxt
    cdef uint32_t _root
    cdef bint is_avl
    cdef int64_t c[11]
    cdef int64_t ev[3]
    cdef public int64_t depth_sum, depth_count, inserts, removes, max_rebalance

    compiled = True

    def __init__(self, str kind, uint64_t capacity, bint lookahead=True):
        cdef Node[::1] view
        if kind not in ("rbt", "avl"):
            raise ValueError(f"unknown tree kind {kind!r}")
        if capacity < 2:
            raise ValueError("capacity must be at least 2")
        if capacity > NIL:
            raise ValueError("capacity exceeds the u32 index space")
        self.kind = kind
        self.is_avl = kind == "avl"
        self.capacity = capacity
        self.lookahead = lookahead
        self._arr = np.zeros(capacity, dtype=NODE_DTYPE)
        view = self._arr
        self.nd = &view[0]
        self.nd[0].left = NIL
        self.nd[0].right = NIL
        self.nd[0].up = NIL
        self.nxt = 1
        self._root = NIL
        self.reset_counters()

    # -- basics -------------------------------------------------------------

    @property
    def next_free(self):
        return self.nxt

    @property
    def root(self):
        return self._root

    @property
    def counters(self):
        return [self.c[i] for i in range(11)]

    @property
    def events(self):
        return [self.ev[i] for i in range(3)]

    def reset_counters(self):
        cdef int i
        for i in range(11):
            self.c[i] = 0
        for i in range(3):
            self.ev[i] = 0
        self.depth_sum = self.depth_count = self.inserts = self.removes = self.max_rebalance = 0

    cdef uint32_t _new(self, uint64_t key, uint64_t value, uint32_t up, uint8_t d, uint8_t col) except? 0:
        cdef uint32_t n
        if self.nxt >= self.capacity:
            raise ArenaFullError(f"arena of {self.capacity} nodes is full")
        n = <uint32_t>self.nxt
        self.nxt += 1
        self.nd[n].left = NIL
        self.nd[n].right = NIL
        self.nd[n].up = up
        self.nd[n].key = key
        self.nd[n].value = value
        self.nd[n].dir = d
        self.nd[n].bal = 0
        self.nd[n].col = col
        return n

    # -- public API -------------------------------------------------------------

    def insert(self, uint64_t key, uint64_t value):
        return self._insert(key, value)

    cdef int _insert(self, uint64_t key, uint64_t value) except -1:
        if self.nxt >= self.capacity:
            raise ArenaFullError(f"arena of {self.capacity} nodes is full")
        self.inserts += 1
        if self.is_avl:
            return self._avl_insert(key, value)
        return self._rbt_insert(key, value)

    def remove(self, uint64_t key):
        return self._remove(key)

    cdef int _remove(self, uint64_t key) except -1:
        cdef int64_t before, done
        cdef int res
        if self._root == NIL:
            return NOT_FOUND
        self.removes += 1
        before = self.ev[E_SINGLE] + self.ev[E_DOUBLE]
        res = self._avl_remove(key) if self.is_avl else self._rbt_remove(key)
        done = self.ev[E_SINGLE] + self.ev[E_DOUBLE] - before
        if done > self.max_rebalance:
            self.max_rebalance = done
        return res

    def fill(self, keys, values=None):
        """Insert every key (value defaults to the key); returns the number inserted."""
        cdef const uint64_t[::1] ks = np.ascontiguousarray(keys, dtype=np.uint64)
        cdef const uint64_t[::1] vs = ks if values is None else np.ascontiguousarray(values, dtype=np.uint64)
        cdef Py_ssize_t i, n = ks.shape[0]
        cdef int64_t count = 0
        if vs.shape[0] != n:
            raise ValueError("keys and values differ in length")
        for i in range(n):
            if self._insert(ks[i], vs[i]) == INSERTED:
                count += 1
        return count

    def remove_many(self, keys):
        cdef const uint64_t[::1] ks = np.ascontiguousarray(keys, dtype=np.uint64)
        cdef Py_ssize_t i
        cdef int64_t count = 0
        for i in range(ks.shape[0]):
            if self._remove(ks[i]) == REMOVED:
                count += 1
        return count

    def lookup(self, uint64_t key):
        cdef uint32_t it = self._root
        cdef Node* nd = self.nd
        while it != NIL:
            if nd[it].key == key:
                return nd[it].value
            it = nd[it].right if nd[it].key < key else nd[it].left
        return None

    def height(self):
        cdef Node* nd = self.nd
        cdef uint32_t[::1] stack
        cdef uint32_t[::1] depth
        cdef Py_ssize_t top = 0
        cdef uint32_t i, d, best = 0
        if self._root == NIL:
            return 0
        stack = np.empty(130, dtype=np.uint32)
        depth = np.empty(130, dtype=np.uint32)
        stack[0] = self._root
        depth[0] = 1
        top = 1
        while top:
            top -= 1
            i = stack[top]
            d = depth[top]
            if d > best:
                best = d
            if nd[i].left != NIL:
                stack[top] = nd[i].left
                depth[top] = d + 1
                top += 1
            if nd[i].right != NIL:
                stack[top] = nd[i].right
                depth[top] = d + 1
                top += 1
        return best

    def depth_stats(self):
        """Mean and maximum key depth of the current tree (the root is at depth 0)."""
        cdef Node* nd = self.nd
        cdef uint32_t[::1] stack
        cdef uint32_t[::1] depth
        cdef Py_ssize_t top
        cdef uint32_t i, d, best = 0
        cdef int64_t total = 0, count = 0
        if self._root == NIL:
            return {"nodes": 0, "mean_depth": 0.0, "max_depth": 0}
        stack = np.empty(140, dtype=np.uint32)
        depth = np.empty(140, dtype=np.uint32)
        stack[0] = self._root
        depth[0] = 0
        top = 1
        while top:
            top -= 1
            i = stack[top]
            d = depth[top]
            total += d
            count += 1
            if d > best:
                best = d
            if nd[i].left != NIL:
                stack[top] = nd[i].left
                depth[top] = d + 1
                top += 1
            if nd[i].right != NIL:
                stack[top] = nd[i].right
                depth[top] = d + 1
                top += 1
        return {"nodes": count, "mean_depth": <double>total / count, "max_depth": best}

    def keys(self):
        cdef Node* nd = self.nd
        out = []
        stack = []
        cdef uint32_t it = self._root
        while stack or it != NIL:
            while it != NIL:
                stack.append(it)
                it = nd[it].left
            it = stack.pop()
            out.append(nd[it].key)
            it = nd[it].right
        return out

    def nodes_array(self):
        arr = self._arr.copy()
        return arr

    def image(self):
        """The tree region exactly as the persistent engine would hold it."""
        img = bytearray(tree_region_size(self.capacity))
        raw = self._arr.tobytes()
        img[:len(raw)] = raw
        off = trailer_offset(self.capacity)
        img[off:off + 8] = int(self.nxt).to_bytes(8, "little")
        return bytes(img)

    # -- RBT --------------------------------------------------------------------------

    cdef uint32_t _rotate(self, uint32_t q, int side, uint32_t gp, int gp_dir) noexcept:
        cdef Node* nd = self.nd
        cdef uint32_t p = child(nd, q, side)
        cdef uint32_t b = child(nd, p, 1 - side)
        set_child(nd, q, side, b)
        set_child(nd, p, 1 - side, q)
        set_child(nd, gp, gp_dir, p)
        nd[q].col = RED
        nd[p].col = BLACK
        return p

    cdef int _rbt_insert(self, uint64_t key, uint64_t value) except -1:
        cdef Node* nd = self.nd
        cdef uint32_t it, parent, grand, gg, n
        cdef int d, last, gg_dir
        cdef int64_t depth
        cdef bint inserted = False
        cdef bint la = self.lookahead
        self.c[C_STAGE] += 1
        if self._root == NIL:
            n = self._new(key, value, NIL, 0, BLACK)
            nd[HEAD].right = n
            self._root = n
            self.c[C_ADD] += 1
            self.depth_sum += 1
            self.depth_count += 1
            return INSERTED
        self.c[C_INIT] += 1
        it = self._root
        parent = HEAD
        grand = NIL
        gg = NIL
        d = LEFT
        last = LEFT
        depth = 1
        while True:
            if it == NIL:
                it = self._new(key, value, NIL, 0, RED)
                set_child(nd, parent, d, it)
                self.c[C_ADD] += 2
                inserted = True
                self.depth_sum += depth
                self.depth_count += 1
            elif red(nd, nd[it].left) and red(nd, nd[it].right):
                nd[it].col = RED
                nd[nd[it].left].col = BLACK
                nd[nd[it].right].col = BLACK
                self.c[C_FLIP] += 1
                self.ev[E_FLIPS] += 1
            if red(nd, it) and red(nd, parent):
                gg_dir = RIGHT if nd[gg].right == grand else LEFT
                if it == child(nd, parent, last):
                    self._rotate(grand, last, gg, gg_dir)
                    self.c[C_SINGLE] += 2
                    self.ev[E_SINGLE] += 1
                else:
                    self._rotate(parent, 1 - last, grand, last)
                    self._rotate(grand, last, gg, gg_dir)
                    self.c[C_DOUBLE] += 4
                    self.ev[E_DOUBLE] += 1
            if nd[it].key == key:
                break
            self.c[C_DESCEND] += 1
            while True:
                last = d
                d = RIGHT if nd[it].key < key else LEFT
                gg = grand
                grand = parent
                parent = it
                it = child(nd, it, d)
                depth += 1
                if not la or it == NIL:
                    break
                if red(nd, nd[it].left) and red(nd, nd[it].right):
                    break
                if red(nd, it) and red(nd, parent):
                    break
                if nd[it].key == key:
                    break
        self.c[C_ROOT] += 2
        self._root = nd[HEAD].right
        nd[self._root].col = BLACK
        return INSERTED if inserted else ALREADY_PRESENT

    cdef int _rbt_remove(self, uint64_t key) except -1:
        cdef Node* nd = self.nd
        cdef uint32_t it = HEAD, parent = NIL, grand = NIL, found = NIL, sib, x
        cdef int d = RIGHT, last, dir2, dir_l, dir_r
        cdef bint rotated
        cdef uint64_t k
        self.c[C_STAGE] += 1
        while True:
            self.c[C_DESCEND] += 1
            last = d
            grand = parent
            parent = it
            it = child(nd, it, d)
            k = nd[it].key
            d = RIGHT if k < key else LEFT
            if k == key:
                found = it
            if not red(nd, it) and not red(nd, child(nd, it, d)):
                if red(nd, child(nd, it, 1 - d)):
                    parent = self._rotate(it, 1 - d, parent, last)
                    self.c[C_SINGLE] += 2
                    self.ev[E_SINGLE] += 1
                elif child(nd, parent, 1 - last) != NIL:
                    sib = child(nd, parent, 1 - last)
                    dir2 = RIGHT if nd[grand].right == parent else LEFT
                    self.c[C_FLIP] += 1
                    if not red(nd, nd[sib].left) and not red(nd, nd[sib].right):
                        nd[parent].col = BLACK
                        nd[sib].col = RED
                        nd[it].col = RED
                        self.c[C_FLIP] += 1
                        self.ev[E_FLIPS] += 1
                    elif grand != NIL and not (grand == HEAD and dir2 == LEFT):
                        rotated = False
                        if red(nd, child(nd, sib, last)):
                            self._rotate(sib, last, parent, 1 - last)
                            self._rotate(parent, 1 - last, grand, dir2)
                            self.c[C_DOUBLE] += 4
                            self.ev[E_DOUBLE] += 1
                            rotated = True
                        elif red(nd, child(nd, sib, 1 - last)):
                            self._rotate(parent, 1 - last, grand, dir2)
                            self.c[C_SINGLE] += 2
                            self.ev[E_SINGLE] += 1
                            rotated = True
                        if rotated:
                            x = child(nd, grand, dir2)
                            nd[it].col = RED
                            nd[x].col = RED
                            nd[nd[x].left].col = BLACK
                            nd[nd[x].right].col = BLACK
                            self.c[C_FLIP] += 1
            if child(nd, it, d) == NIL:
                break
        if found != NIL:
            if found != it:
                nd[found].key = nd[it].key
                nd[found].value = nd[it].value
            dir_l = RIGHT if nd[parent].right == it else LEFT
            dir_r = RIGHT if nd[it].left == NIL else LEFT
            set_child(nd, parent, dir_l, child(nd, it, dir_r))
            self.c[C_REMOVE] += 2
        self.c[C_ROOT] += 1
        self._root = nd[HEAD].right
        if self._root != NIL:
            nd[self._root].col = BLACK
        return REMOVED if found != NIL else NOT_FOUND

    # -- AVL ---------------------------------------------------------------------------

    cdef void _avl_single(self, uint32_t n, int side, uint32_t gp, int gp_dir, int bal_n, int bal_s) noexcept:
        cdef Node* nd = self.nd
        cdef uint32_t s = child(nd, n, side)
        cdef uint32_t b1 = child(nd, s, 1 - side)
        set_child(nd, n, side, b1)
        set_child(nd, s, 1 - side, n)
        set_child(nd, gp, gp_dir, s)
        nd[n].bal = bal_n
        nd[s].bal = bal_s
        if b1 != NIL:
            nd[b1].up = n
            nd[b1].dir = side
        nd[n].up = s
        nd[n].dir = 1 - side
        nd[s].up = gp
        nd[s].dir = gp_dir
        self.c[C_SINGLE] += 2
        self.c[C_PUSH] += 1
        self.ev[E_SINGLE] += 1

    cdef void _avl_double(self, uint32_t n, int side, uint32_t gp, int gp_dir) noexcept:
        cdef Node* nd = self.nd
        cdef uint32_t s = child(nd, n, side)
        cdef uint32_t r = child(nd, s, 1 - side)
        cdef uint32_t b1 = child(nd, r, side)
        cdef uint32_t b2 = child(nd, r, 1 - side)
        cdef int h = 1 if side == RIGHT else -1
        cdef int br = nd[r].bal
        cdef int bal_n = -h if br == h else 0
        cdef int bal_s = h if br == -h else 0
        set_child(nd, s, 1 - side, b1)
        set_child(nd, r, side, s)
        nd[s].bal = bal_s
        if b1 != NIL:
            nd[b1].up = s
            nd[b1].dir = 1 - side
        nd[s].up = r
        nd[s].dir = side
        set_child(nd, n, side, b2)
        set_child(nd, r, 1 - side, n)
        set_child(nd, gp, gp_dir, r)
        nd[n].bal = bal_n
        nd[r].bal = 0
        if b2 != NIL:
            nd[b2].up = n
            nd[b2].dir = side
        nd[n].up = r
        nd[n].dir = 1 - side
        nd[r].up = gp
        nd[r].dir = gp_dir
        self.c[C_DOUBLE] += 3
        self.c[C_PUSH] += 2
        self.ev[E_DOUBLE] += 1

    cdef int _avl_insert(self, uint64_t key, uint64_t value) except -1:
        cdef Node* nd = self.nd
        cdef uint32_t it, s, t, q, n, p, r
        cdef int d, side, a, b, pd, gp_dir, limit, done
        cdef int64_t depth
        cdef uint64_t k
        cdef bint la = self.lookahead
        self.c[C_STAGE] += 1
        if self._root == NIL:
            n = self._new(key, value, HEAD, RIGHT, 0)
            nd[HEAD].right = n
            self._root = n
            self.c[C_ADD] += 1
            self.depth_sum += 1
            self.depth_count += 1
            return INSERTED
        self.c[C_INIT] += 1
        it = self._root
        s = it
        t = HEAD
        d = RIGHT if nd[it].key < key else LEFT
        depth = 1
        while True:
            if nd[it].key == key:
                self.c[C_ROOT] += 1
                return ALREADY_PRESENT
            if child(nd, it, d) == NIL:
                break
            self.c[C_DESCEND] += 1
            while True:
                q = child(nd, it, d)
                if nd[q].bal != 0:
                    t = it
                    s = q
                it = q
                depth += 1
                k = nd[q].key
                d = RIGHT if k < key else LEFT
                if not la or k == key or child(nd, q, d) == NIL:
                    break
        n = self._new(key, value, it, d, 0)
        set_child(nd, it, d, n)
        self.c[C_ADD] += 2
        self.depth_sum += depth + 1
        self.depth_count += 1
        side = RIGHT if nd[s].key < key else LEFT
        a = 1 if side == RIGHT else -1
        self.c[C_BALANCE] += 1
        p = child(nd, s, side)
        limit = ADJ_BATCH if la else 1
        while p != n:
            self.c[C_BALANCE] += 1
            done = 0
            while p != n and done < limit:
                pd = RIGHT if nd[p].key < key else LEFT
                nd[p].bal = 1 if pd == RIGHT else -1
                p = child(nd, p, pd)
                done += 1
        b = nd[s].bal
        if b == 0:
            nd[s].bal = a
            self.c[C_BALANCE] += 1
        elif b == -a:
            nd[s].bal = 0
            self.c[C_BALANCE] += 1
        else:
            gp_dir = RIGHT if nd[t].right == s else LEFT
            r = child(nd, s, side)
            if nd[r].bal == a:
                self._avl_single(s, side, t, gp_dir, 0, 0)
            else:
                self._avl_double(s, side, t, gp_dir)
        self.c[C_ROOT] += 1
        self._root = nd[HEAD].right
        return INSERTED

    cdef int _avl_remove(self, uint64_t key) except -1:
        cdef Node* nd = self.nd
        cdef uint32_t it = HEAD, x, y, ch, p, n, sib, gp
        cdef int d = RIGHT, pd, a, b, heavy, gp_dir
        cdef uint64_t k
        self.c[C_STAGE] += 1
        while True:
            self.c[C_DESCEND] += 1
            it = child(nd, it, d)
            k = nd[it].key
            d = RIGHT if k < key else LEFT
            if k == key:
                break
            if child(nd, it, d) == NIL:
                self.c[C_ROOT] += 1
                return NOT_FOUND
        x = it
        if nd[x].left != NIL and nd[x].right != NIL:
            self.c[C_DESCEND] += 1
            y = nd[x].right
            while nd[y].left != NIL:
                self.c[C_DESCEND] += 1
                y = nd[y].left
            nd[x].key = nd[y].key
            nd[x].value = nd[y].value
            self.c[C_REMOVE] += 1
        else:
            y = x
        ch = nd[y].left if nd[y].left != NIL else nd[y].right
        p = nd[y].up
        pd = nd[y].dir
        set_child(nd, p, pd, ch)
        if ch != NIL:
            nd[ch].up = p
            nd[ch].dir = pd
        self.c[C_REMOVE] += 2
        n = p
        d = pd
        while n != HEAD:
            a = 1 if d == LEFT else -1
            b = nd[n].bal
            if b == 0:
                nd[n].bal = a
                self.c[C_BALANCE] += 1
                break
            if b == -a:
                nd[n].bal = 0
                self.c[C_BALANCE] += 1
                d = nd[n].dir
                n = nd[n].up
                continue
            heavy = 1 - d
            sib = child(nd, n, heavy)
            gp = nd[n].up
            gp_dir = nd[n].dir
            if nd[sib].bal == -a:
                self._avl_double(n, heavy, gp, gp_dir)
            elif nd[sib].bal == 0:
                self._avl_single(n, heavy, gp, gp_dir, a, -a)
                break
            else:
                self._avl_single(n, heavy, gp, gp_dir, 0, 0)
            n = gp
            d = gp_dir
        self.c[C_ROOT] += 1
        self._root = nd[HEAD].right
        return REMOVED
