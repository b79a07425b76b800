"""Pure-Python tree kernel: the fallback when the compiled core is missing.

The kernel runs exactly the algorithms of :mod:`pmtx.rbt` and :mod:`pmtx.avl`
on a volatile node array, without epochs or a log, and counts how many
transitions of each category the persistent machine would have executed.
Node bytes come out identical to the persistent engine's tree region.
"""

from __future__ import annotations

import numpy as np

from pmtx.arena import ArenaFullError, trailer_offset, tree_region_size

NULL = 0xFFFFFFFF
HEAD = 0
LEFT, RIGHT = 0, 1
BLACK, RED = 0, 1

(C_STAGE, C_INIT, C_DESCEND, C_ADD, C_FLIP, C_SINGLE, C_DOUBLE, C_BALANCE, C_PUSH, C_REMOVE,
 C_ROOT) = range(11)
E_FLIPS, E_SINGLE, E_DOUBLE = range(3)
N_CATEGORIES, N_EVENTS = 11, 3

INSERTED, ALREADY_PRESENT, REMOVED, NOT_FOUND = 1, 2, 3, 4
ADJ_BATCH = 6

NODE_DTYPE = np.dtype([("left", "<u4"), ("right", "<u4"), ("up", "<u4"), ("key", "<u8"), ("value", "<u8"),
                       ("dir", "u1"), ("bal", "i1"), ("col", "u1"), ("pad", "u1")])


class TreeKernel:
    """Volatile RBT/AVL with transition counters (pure Python)."""

    compiled = False

    def __init__(self, kind: str, capacity: int, lookahead: bool = True):
        if kind not in ("rbt", "avl"):
            raise ValueError(f"unknown tree kind {kind!r}")
        if capacity < 2:
            raise ValueError("capacity must be at least 2")
        self.kind = kind
        self.is_avl = kind == "avl"
        self.capacity = capacity
        self.lookahead = lookahead
        self.left = [NULL]
        self.right = [NULL]
        self.up = [NULL]
        self.key = [0]
        self.value = [0]
        self.dir = [0]
        self.bal = [0]
        self.col = [BLACK]
        self.root = NULL
        self.counters = [0] * N_CATEGORIES
        self.events = [0] * N_EVENTS
        self.depth_sum = 0
        self.depth_count = 0
        self.inserts = 0
        self.removes = 0
        self.max_rebalance = 0

    # -- basics ----------------------------------------------------------------

    @property
    def next_free(self) -> int:
        return len(self.key)

    def _child(self, i, d):
        return self.right[i] if d else self.left[i]

    def _set_child(self, i, d, c):
        if d:
            self.right[i] = c
        else:
            self.left[i] = c

    def _red(self, i):
        return i != NULL and self.col[i] == RED

    def _new(self, key, value, up, d, col):
        n = len(self.key)
        if n >= self.capacity:
            raise ArenaFullError(f"arena of {self.capacity} nodes is full")
        self.left.append(NULL)
        self.right.append(NULL)
        self.up.append(up)
        self.key.append(key)
        self.value.append(value)
        self.dir.append(d)
        self.bal.append(0)
        self.col.append(col)
        return n

    def reset_counters(self) -> None:
        self.counters = [0] * N_CATEGORIES
        self.events = [0] * N_EVENTS
        self.depth_sum = self.depth_count = self.inserts = self.removes = self.max_rebalance = 0

    # -- public API ----------------------------------------------------------------

    def insert(self, key: int, value: int) -> int:
        if len(self.key) >= self.capacity:
            raise ArenaFullError(f"arena of {self.capacity} nodes is full")
        self.inserts += 1
        if self.is_avl:
            return self._avl_insert(key, value)
        return self._rbt_insert(key, value)

    def remove(self, key: int) -> int:
        if self.root == NULL:
            return NOT_FOUND
        self.removes += 1
        before = self.events[E_SINGLE] + self.events[E_DOUBLE]
        res = self._avl_remove(key) if self.is_avl else self._rbt_remove(key)
        done = self.events[E_SINGLE] + self.events[E_DOUBLE] - before
        if done > self.max_rebalance:
            self.max_rebalance = done
        return res

    def fill(self, keys, values=None) -> int:
        """Insert every key (value defaults to the key); returns the number inserted."""
        n = 0
        vals = keys if values is None else values
        for k, v in zip(keys, vals):
            if self.insert(int(k), int(v)) == INSERTED:
                n += 1
        return n

    def remove_many(self, keys) -> int:
        n = 0
        for k in keys:
            if self.remove(int(k)) == REMOVED:
                n += 1
        return n

    def lookup(self, key: int):
        it = self.root
        while it != NULL:
            k = self.key[it]
            if k == key:
                return self.value[it]
            it = self.right[it] if k < key else self.left[it]
        return None

    def height(self) -> int:
        if self.root == NULL:
            return 0
        best = 0
        stack = [(self.root, 1)]
        while stack:
            i, d = stack.pop()
            if d > best:
                best = d
            for c in (self.left[i], self.right[i]):
                if c != NULL:
                    stack.append((c, d + 1))
        return best

    def depth_stats(self) -> dict:
        """Mean and maximum key depth of the current tree (the root is at depth 0)."""
        if self.root == NULL:
            return {"nodes": 0, "mean_depth": 0.0, "max_depth": 0}
        total = count = best = 0
        stack = [(self.root, 0)]
        while stack:
            i, d = stack.pop()
            total += d
            count += 1
            best = max(best, d)
            for c in (self.left[i], self.right[i]):
                if c != NULL:
                    stack.append((c, d + 1))
        return {"nodes": count, "mean_depth": total / count, "max_depth": best}

    def keys(self) -> list:
        out, stack, it = [], [], self.root
        while stack or it != NULL:
            while it != NULL:
                stack.append(it)
                it = self.left[it]
            it = stack.pop()
            out.append(self.key[it])
            it = self.right[it]
        return out

    def nodes_array(self) -> np.ndarray:
        arr = np.zeros(self.capacity, dtype=NODE_DTYPE)
        n = len(self.key)
        for name in ("left", "right", "up", "key", "value", "dir", "bal", "col"):
            arr[name][:n] = getattr(self, name)
        return arr

    def image(self) -> bytes:
        """The tree region exactly as the persistent engine would hold it."""
        img = bytearray(tree_region_size(self.capacity))
        raw = self.nodes_array().tobytes()
        img[:len(raw)] = raw
        off = trailer_offset(self.capacity)
        img[off:off + 8] = len(self.key).to_bytes(8, "little")
        return bytes(img)

    # -- RBT --------------------------------------------------------------------------

    def _rotate(self, q, side, gp, gp_dir, recolor):
        """Promote q.child[side]; returns the pivot."""
        p = self._child(q, side)
        b = self._child(p, 1 - side)
        self._set_child(q, side, b)
        self._set_child(p, 1 - side, q)
        self._set_child(gp, gp_dir, p)
        if recolor:
            self.col[q] = RED
            self.col[p] = BLACK
        return p

    def _rbt_insert(self, key, value):
        c = self.counters
        c[C_STAGE] += 1
        if self.root == NULL:
            n = self._new(key, value, NULL, 0, BLACK)
            self.right[HEAD] = n
            self.root = n
            c[C_ADD] += 1
            self.depth_sum += 1
            self.depth_count += 1
            return INSERTED
        c[C_INIT] += 1
        it, parent, grand, gg = self.root, HEAD, NULL, NULL
        d = last = LEFT
        depth = 1
        inserted = False
        la = self.lookahead
        while True:
            if it == NULL:
                it = self._new(key, value, NULL, 0, RED)
                self._set_child(parent, d, it)
                c[C_ADD] += 2
                inserted = True
                self.depth_sum += depth
                self.depth_count += 1
            elif self._red(self.left[it]) and self._red(self.right[it]):
                self.col[it] = RED
                self.col[self.left[it]] = BLACK
                self.col[self.right[it]] = BLACK
                c[C_FLIP] += 1
                self.events[E_FLIPS] += 1
            if self._red(it) and self._red(parent):
                gg_dir = RIGHT if self.right[gg] == grand else LEFT
                if it == self._child(parent, last):
                    self._rotate(grand, last, gg, gg_dir, True)
                    c[C_SINGLE] += 2
                    self.events[E_SINGLE] += 1
                else:
                    self._rotate(parent, 1 - last, grand, last, True)
                    self._rotate(grand, last, gg, gg_dir, True)
                    c[C_DOUBLE] += 4
                    self.events[E_DOUBLE] += 1
            if self.key[it] == key:
                break
            c[C_DESCEND] += 1
            while True:
                last = d
                d = RIGHT if self.key[it] < key else LEFT
                gg, grand, parent, it = grand, parent, it, self._child(it, d)
                depth += 1
                if not la or it == NULL:
                    break
                if self._red(self.left[it]) and self._red(self.right[it]):
                    break
                if self._red(it) and self._red(parent):
                    break
                if self.key[it] == key:
                    break
        c[C_ROOT] += 2
        self.root = self.right[HEAD]
        self.col[self.root] = BLACK
        return INSERTED if inserted else ALREADY_PRESENT

    def _rbt_remove(self, key):
        c = self.counters
        c[C_STAGE] += 1
        it, parent, grand, found = HEAD, NULL, NULL, NULL
        d = RIGHT
        while True:
            c[C_DESCEND] += 1
            last = d
            grand, parent = parent, it
            it = self._child(it, d)
            k = self.key[it]
            d = RIGHT if k < key else LEFT
            if k == key:
                found = it
            if not self._red(it) and not self._red(self._child(it, d)):
                if self._red(self._child(it, 1 - d)):
                    parent = self._rotate(it, 1 - d, parent, last, True)
                    c[C_SINGLE] += 2
                    self.events[E_SINGLE] += 1
                elif self._child(parent, 1 - last) != NULL:
                    sib = self._child(parent, 1 - last)
                    dir2 = RIGHT if self.right[grand] == parent else LEFT
                    c[C_FLIP] += 1
                    if not self._red(self.left[sib]) and not self._red(self.right[sib]):
                        self.col[parent] = BLACK
                        self.col[sib] = RED
                        self.col[it] = RED
                        c[C_FLIP] += 1
                        self.events[E_FLIPS] += 1
                    elif grand != NULL and not (grand == HEAD and dir2 == LEFT):
                        rotated = False
                        if self._red(self._child(sib, last)):
                            self._rotate(sib, last, parent, 1 - last, True)
                            self._rotate(parent, 1 - last, grand, dir2, True)
                            c[C_DOUBLE] += 4
                            self.events[E_DOUBLE] += 1
                            rotated = True
                        elif self._red(self._child(sib, 1 - last)):
                            self._rotate(parent, 1 - last, grand, dir2, True)
                            c[C_SINGLE] += 2
                            self.events[E_SINGLE] += 1
                            rotated = True
                        if rotated:
                            x = self._child(grand, dir2)
                            self.col[it] = RED
                            self.col[x] = RED
                            self.col[self.left[x]] = BLACK
                            self.col[self.right[x]] = BLACK
                            c[C_FLIP] += 1
            if self._child(it, d) == NULL:
                break
        if found != NULL:
            if found != it:
                self.key[found] = self.key[it]
                self.value[found] = self.value[it]
            dir_l = RIGHT if self.right[parent] == it else LEFT
            dir_r = RIGHT if self.left[it] == NULL else LEFT
            self._set_child(parent, dir_l, self._child(it, dir_r))
            c[C_REMOVE] += 2
        c[C_ROOT] += 1
        self.root = self.right[HEAD]
        if self.root != NULL:
            self.col[self.root] = BLACK
        return REMOVED if found != NULL else NOT_FOUND

    # -- AVL ---------------------------------------------------------------------------

    def _avl_single(self, n, side, gp, gp_dir, bal_n, bal_s):
        s = self._child(n, side)
        b1 = self._child(s, 1 - side)
        self._set_child(n, side, b1)
        self._set_child(s, 1 - side, n)
        self._set_child(gp, gp_dir, s)
        self.bal[n] = bal_n
        self.bal[s] = bal_s
        if b1 != NULL:
            self.up[b1] = n
            self.dir[b1] = side
        self.up[n] = s
        self.dir[n] = 1 - side
        self.up[s] = gp
        self.dir[s] = gp_dir
        self.counters[C_SINGLE] += 2
        self.counters[C_PUSH] += 1
        self.events[E_SINGLE] += 1

    def _avl_double(self, n, side, gp, gp_dir):
        s = self._child(n, side)
        r = self._child(s, 1 - side)
        b1, b2 = self._child(r, side), self._child(r, 1 - side)
        h = 1 if side == RIGHT else -1
        br = self.bal[r]
        bal_n = -h if br == h else 0
        bal_s = h if br == -h else 0
        self._set_child(s, 1 - side, b1)
        self._set_child(r, side, s)
        self._set_child(n, side, r)
        self.bal[s] = bal_s
        if b1 != NULL:
            self.up[b1] = s
            self.dir[b1] = 1 - side
        self.up[s] = r
        self.dir[s] = side
        self._set_child(n, side, b2)
        self._set_child(r, 1 - side, n)
        self._set_child(gp, gp_dir, r)
        self.bal[n] = bal_n
        self.bal[r] = 0
        if b2 != NULL:
            self.up[b2] = n
            self.dir[b2] = side
        self.up[n] = r
        self.dir[n] = 1 - side
        self.up[r] = gp
        self.dir[r] = gp_dir
        self.counters[C_DOUBLE] += 3
        self.counters[C_PUSH] += 2
        self.events[E_DOUBLE] += 1

    def _avl_insert(self, key, value):
        c = self.counters
        c[C_STAGE] += 1
        if self.root == NULL:
            n = self._new(key, value, HEAD, RIGHT, 0)
            self.right[HEAD] = n
            self.root = n
            c[C_ADD] += 1
            self.depth_sum += 1
            self.depth_count += 1
            return INSERTED
        c[C_INIT] += 1
        it = s = self.root
        t = HEAD
        d = RIGHT if self.key[it] < key else LEFT
        depth = 1
        la = self.lookahead
        while True:
            if self.key[it] == key:
                c[C_ROOT] += 1
                return ALREADY_PRESENT
            if self._child(it, d) == NULL:
                break
            c[C_DESCEND] += 1
            while True:
                q = self._child(it, d)
                if self.bal[q] != 0:
                    t, s = it, q
                it = q
                depth += 1
                k = self.key[q]
                d = RIGHT if k < key else LEFT
                if not la or k == key or self._child(q, d) == NULL:
                    break
        n = self._new(key, value, it, d, 0)
        self._set_child(it, d, n)
        c[C_ADD] += 2
        self.depth_sum += depth + 1
        self.depth_count += 1
        # balance factors between s and the new node
        side = RIGHT if self.key[s] < key else LEFT
        a = 1 if side == RIGHT else -1
        c[C_BALANCE] += 1
        p = self._child(s, side)
        limit = ADJ_BATCH if la else 1
        while p != n:
            c[C_BALANCE] += 1
            done = 0
            while p != n and done < limit:
                pd = RIGHT if self.key[p] < key else LEFT
                self.bal[p] = 1 if pd == RIGHT else -1
                p = self._child(p, pd)
                done += 1
        b = self.bal[s]
        if b == 0:
            self.bal[s] = a
            c[C_BALANCE] += 1
        elif b == -a:
            self.bal[s] = 0
            c[C_BALANCE] += 1
        else:
            gp_dir = RIGHT if self.right[t] == s else LEFT
            r = self._child(s, side)
            if self.bal[r] == a:
                self._avl_single(s, side, t, gp_dir, 0, 0)
            else:
                self._avl_double(s, side, t, gp_dir)
        c[C_ROOT] += 1
        self.root = self.right[HEAD]
        return INSERTED

    def _avl_remove(self, key):
        c = self.counters
        c[C_STAGE] += 1
        it, d = HEAD, RIGHT
        while True:
            c[C_DESCEND] += 1
            it = self._child(it, d)
            k = self.key[it]
            d = RIGHT if k < key else LEFT
            if k == key:
                break
            if self._child(it, d) == NULL:
                c[C_ROOT] += 1
                return NOT_FOUND
        x = it
        if self.left[x] != NULL and self.right[x] != NULL:
            c[C_DESCEND] += 1
            y = self.right[x]
            while self.left[y] != NULL:
                c[C_DESCEND] += 1
                y = self.left[y]
            self.key[x] = self.key[y]
            self.value[x] = self.value[y]
            c[C_REMOVE] += 1
        else:
            y = x
        ch = self.left[y] if self.left[y] != NULL else self.right[y]
        p, pd = self.up[y], self.dir[y]
        self._set_child(p, pd, ch)
        if ch != NULL:
            self.up[ch] = p
            self.dir[ch] = pd
        c[C_REMOVE] += 2
        n, d = p, pd
        while n != HEAD:
            a = 1 if d == LEFT else -1
            b = self.bal[n]
            if b == 0:
                self.bal[n] = a
                c[C_BALANCE] += 1
                break
            if b == -a:
                self.bal[n] = 0
                c[C_BALANCE] += 1
                n, d = self.up[n], self.dir[n]
                continue
            heavy = 1 - d
            sib = self._child(n, heavy)
            gp, gp_dir = self.up[n], self.dir[n]
            if self.bal[sib] == -a:
                self._avl_double(n, heavy, gp, gp_dir)
            else:
                stop = self.bal[sib] == 0
                if stop:
                    self._avl_single(n, heavy, gp, gp_dir, a, -a)
                    break
                self._avl_single(n, heavy, gp, gp_dir, 0, 0)
            n, d = gp, gp_dir
        c[C_ROOT] += 1
        self.root = self.right[HEAD]
        return REMOVED
