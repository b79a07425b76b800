"""k-reader / single-writer lock with an f-slot fairness queue over 64-bit CAS words.

Layout (one u64 per slot, 0 = free)::

    readers r_0..r_{k-1} | writer w | queue sl_0..sl_{f-1} | outer

Every slot holds the pid of its owner, so a waiting client can run a failure
detector on whoever blocks it and evict that holder.  All mutations are CAS.

Queue protocol
--------------
* Entering: CAS the first free queue slot from 0 to ``pid | PENDING``, check that
  every slot ahead holds a confirmed pid, then CAS the pending mark away.  If a
  hole is ahead the entry is withdrawn and the caller gets ``BUSY``.
* Shifting (outer lock held): read the queue front to back, copy each distinct
  confirmed pid one step forward, seal the first empty slot with ``SEAL`` so no
  one can slip in behind the shrinking tail, zero the stale copies front to back,
  then unseal.  A pid is always stored at least once during a shift.

The protocol is written as generators yielding primitive operations.  The same
code runs against real words (:class:`LockTable`), under the exhaustive
interleaving explorer (:func:`explore`), and in the threaded stress test.
"""

from __future__ import annotations

import dis
import enum
import functools
import itertools
import threading
import time
from dataclasses import dataclass, field

PENDING = 1 << 63
SEAL = (1 << 64) - 1
MAX_PID = PENDING - 1


class Grant(enum.Enum):
    GRANTED = "granted"
    QUEUED = "queued"
    BUSY = "busy"


class Eviction(enum.Enum):
    EVICTED = "evicted"
    STILL_ALIVE = "still-alive"


class Health(enum.Enum):
    ALIVE = "alive"
    SUSPECTED = "suspected"


class Mode(enum.Enum):
    READ = "read"
    WRITE = "write"


class LockUsageError(Exception):
    pass


class Revoked(Exception):
    """The client's access key was revoked; it may no longer touch shared state."""


class Killed(Exception):
    """Raised by the driver when a client is killed at a chosen protocol step."""


@dataclass(frozen=True)
class LockLayout:
    k: int = 8
    f: int = 8

    def __post_init__(self):
        if self.k < 1 or self.f < 1:
            raise ValueError("k and f must be positive")

    @property
    def readers(self) -> range:
        return range(0, self.k)

    @property
    def writer(self) -> int:
        return self.k

    @property
    def queue(self) -> range:
        return range(self.k + 1, self.k + 1 + self.f)

    @property
    def outer(self) -> int:
        return self.k + 1 + self.f

    @property
    def size(self) -> int:
        return self.k + self.f + 2

    def describe(self, words) -> dict:
        return {
            "readers": [words[i] for i in self.readers],
            "writer": words[self.writer],
            "queue": [words[i] for i in self.queue],
            "outer": words[self.outer],
        }


def _check_pid(pid: int) -> None:
    if not 0 < pid <= MAX_PID:
        raise ValueError(f"pid must be in 1..{MAX_PID}")


def is_member(v: int) -> bool:
    """True for a confirmed queue entry (not free, sealed or pending)."""
    return v != 0 and v != SEAL and not v & PENDING


# -- protocol generators ----------------------------------------------------------
# Each yields ("load", i) -> int, ("cas", i, expected, new) -> bool,
# ("wait", i, value) -> None or ("event", ...) -> None.

def take_gen(lay: LockLayout, pid: int, mode: Mode):
    """Try to take the desired lock directly; returns the slot held or None."""
    if mode is Mode.WRITE:
        ok = yield ("cas", lay.writer, 0, pid)
        if not ok:
            return None
        for r in lay.readers:
            v = yield ("load", r)
            if v != 0:
                yield ("cas", lay.writer, pid, 0)
                return None
        return lay.writer
    v = yield ("load", lay.writer)
    if v != 0:
        return None
    slot = None
    for r in lay.readers:
        v = yield ("load", r)
        if v == 0:
            ok = yield ("cas", r, 0, pid)
            if ok:
                slot = r
                break
    if slot is None:
        return None
    v = yield ("load", lay.writer)
    if v != 0:
        yield ("cas", slot, pid, 0)
        return None
    return slot


def enqueue_gen(lay: LockLayout, pid: int, j: int):
    """Enter queue slot j (believed to be the first free one)."""
    qs = lay.queue
    ok = yield ("cas", qs[j], 0, pid | PENDING)
    if not ok:
        return Grant.BUSY
    for i in range(j):
        v = yield ("load", qs[i])
        if v == pid or not is_member(v):
            yield ("cas", qs[j], pid | PENDING, 0)
            return Grant.QUEUED if v == pid else Grant.BUSY
    ok = yield ("cas", qs[j], pid | PENDING, pid)
    return Grant.QUEUED if ok else Grant.BUSY


def shift_gen(lay: LockLayout, exclude: frozenset):
    """Compact the queue dropping ``exclude``; the caller holds the outer lock."""
    qs, f = lay.queue, lay.f
    seen = set(exclude)
    w = r = 0
    seal = None
    while r < f:
        v = yield ("load", qs[r])
        if v == SEAL:
            seal = r
            break
        if v & PENDING:
            yield ("wait", qs[r], v)
            continue
        if v == 0:
            ok = yield ("cas", qs[r], 0, SEAL)
            if not ok:
                continue
            seal = r
            break
        if v not in seen:
            seen.add(v)
            if w != r:
                old = yield ("load", qs[w])
                yield ("cas", qs[w], old, v)
            w += 1
        r += 1
    end = f if seal is None else seal
    if seal is not None:
        # leftovers of a killed shifter behind the first gap
        for i in range(seal + 1, f):
            v = yield ("load", qs[i])
            if v != 0 and (v == SEAL or not v & PENDING):
                yield ("cas", qs[i], v, 0)
    for i in range(w, end):
        v = yield ("load", qs[i])
        if v != 0:
            yield ("cas", qs[i], v, 0)
    if seal is not None:
        yield ("cas", qs[seal], SEAL, 0)


def attempt_gen(lay: LockLayout, pid: int, mode: Mode):
    """One non-blocking acquisition attempt; returns (Grant, slot or None)."""
    qs = lay.queue
    pos = free = None
    for j in range(lay.f):
        v = yield ("load", qs[j])
        if v == pid:
            pos = j
            break
        if v == 0:
            free = j
            break
        if v == SEAL:
            break
    if pos is not None:
        if pos != 0:
            return Grant.QUEUED, None
        ok = yield ("cas", lay.outer, 0, pid)
        if not ok:
            return Grant.QUEUED, None
        slot = yield from take_gen(lay, pid, mode)
        if slot is None:
            yield ("cas", lay.outer, pid, 0)
            return Grant.QUEUED, None
        yield ("event", "grant", pid, mode)
        yield from shift_gen(lay, frozenset((pid,)))
        yield ("cas", lay.outer, pid, 0)
        return Grant.GRANTED, slot
    if free == 0:
        slot = yield from take_gen(lay, pid, mode)
        if slot is not None:
            yield ("event", "grant", pid, mode)
            return Grant.GRANTED, slot
    if free is None:
        return Grant.BUSY, None
    res = yield from enqueue_gen(lay, pid, free)
    return res, None


def release_gen(lay: LockLayout, pid: int):
    for s in (lay.writer, *lay.readers):
        v = yield ("load", s)
        if v == pid:
            yield ("event", "release", pid, Mode.WRITE if s == lay.writer else Mode.READ)
            ok = yield ("cas", s, pid, 0)
            if ok:
                return s
    return None


# -- word stores --------------------------------------------------------------------

class LocalWords:
    """Volatile array of u64 words with atomic CAS (the agent's lock region)."""

    def __init__(self, n: int, monitor=None):
        self.words = [0] * n
        self.revoked: set[int] = set()
        self.mutex = threading.Lock()
        self.monitor = monitor

    def view(self, pid: int) -> "WordsView":
        return WordsView(self, pid)

    def load8(self, i: int, pid: int = 0) -> int:
        with self.mutex:
            if pid in self.revoked:
                raise Revoked(pid)
            return self.words[i]

    def cas8(self, i: int, expected: int, new: int, pid: int = 0) -> bool:
        with self.mutex:
            if pid in self.revoked:
                raise Revoked(pid)
            if self.words[i] != expected:
                return False
            self.words[i] = new
            if self.monitor is not None:
                self.monitor.on_state(self.words)
            return True

    def event(self, evt: tuple, pid: int = 0) -> None:
        with self.mutex:
            if pid in self.revoked:
                raise Revoked(pid)
            if self.monitor is not None:
                self.monitor.on_event(evt)

    def revoke(self, pid: int) -> None:
        with self.mutex:
            self.revoked.add(pid)
            if self.monitor is not None:
                self.monitor.on_event(("evict", pid))

    def reset(self) -> None:
        """Full-system crash: the lock region is volatile and comes back zeroed."""
        with self.mutex:
            self.words = [0] * len(self.words)
            self.revoked.clear()


class WordsView:
    """A client's handle on :class:`LocalWords`; ops fail once its pid is revoked."""

    def __init__(self, store: LocalWords, pid: int):
        self.store, self.pid = store, pid

    def load8(self, i):
        return self.store.load8(i, self.pid)

    def cas8(self, i, expected, new):
        return self.store.cas8(i, expected, new, self.pid)

    def event(self, evt):
        self.store.event(evt, self.pid)

    def revoke(self, pid):
        self.store.revoke(pid)


# -- the lock table ------------------------------------------------------------------

class LockTable:
    """Client-side handle on a lock table living in ``words``.

    ``detector(pid) -> Health`` plays the failure detector; ``kill_after`` makes
    the driver raise :class:`Killed` after that many primitive operations.
    """

    def __init__(self, words, k: int = 8, f: int = 8, detector=None, kill_after: int | None = None):
        self.words = words
        self.layout = LockLayout(k, f)
        self.detector = detector or (lambda pid: Health.ALIVE)
        self.kill_after = kill_after
        self.ops = 0

    def _run(self, gen):
        w = self.words
        try:
            op = next(gen)
            while True:
                if self.kill_after is not None and self.ops >= self.kill_after:
                    gen.close()
                    raise Killed()
                self.ops += 1
                kind = op[0]
                if kind == "load":
                    res = w.load8(op[1])
                elif kind == "cas":
                    res = w.cas8(op[1], op[2], op[3])
                elif kind == "wait":
                    self._on_wait(op[1], op[2])
                    res = None
                else:
                    ev = getattr(w, "event", None)
                    if ev is not None:
                        ev(op[1:])
                    res = None
                op = gen.send(res)
        except StopIteration as stop:
            return stop.value

    def _on_wait(self, slot: int, value: int) -> None:
        pid = value & ~PENDING
        if self.detector(pid) is Health.SUSPECTED:
            self.words.cas8(slot, value, 0)
        else:
            time.sleep(0)

    # public API

    def acquire_read(self, pid: int) -> Grant:
        return self.attempt(pid, Mode.READ)[0]

    def acquire_write(self, pid: int) -> Grant:
        return self.attempt(pid, Mode.WRITE)[0]

    def attempt(self, pid: int, mode: Mode) -> tuple[Grant, int | None]:
        _check_pid(pid)
        return self._run(attempt_gen(self.layout, pid, mode))

    def acquire(self, pid: int, mode: Mode, timeout: float = 10.0, evict: bool = True) -> int:
        """Poll until granted, evicting suspected blockers; returns the slot held."""
        deadline = time.monotonic() + timeout
        while True:
            res, slot = self.attempt(pid, mode)
            if res is Grant.GRANTED:
                return slot
            if evict:
                for other in self.blockers(pid):
                    if self.detector(other) is Health.SUSPECTED:
                        self.evict(other, pid)
            if time.monotonic() > deadline:
                raise TimeoutError(f"pid {pid} not granted within {timeout}s")
            time.sleep(0.0005)

    def release(self, pid: int) -> None:
        _check_pid(pid)
        if self._run(release_gen(self.layout, pid)) is None:
            raise LockUsageError(f"pid {pid} holds no lock")

    def blockers(self, pid: int) -> list[int]:
        """Pids currently in the way of ``pid`` (holders, earlier queue entries, outer)."""
        snap = self.snapshot()
        out = [v for v in snap["readers"] if v]
        if snap["writer"]:
            out.append(snap["writer"])
        for v in snap["queue"]:
            if v == pid or v == 0 or v == SEAL:
                break
            out.append(v & ~PENDING)
        if snap["outer"]:
            out.append(snap["outer"])
        return [v for v in dict.fromkeys(out) if v != pid]

    def evict(self, suspect: int, by: int, timeout: float = 10.0) -> Eviction:
        """Fence a suspected pid, then clear every slot it occupies."""
        _check_pid(suspect)
        _check_pid(by)
        if self.detector(suspect) is not Health.SUSPECTED:
            return Eviction.STILL_ALIVE
        self.words.revoke(suspect)
        lay, w = self.layout, self.words
        for s in (*lay.readers, lay.writer):
            w.cas8(s, suspect, 0)
        w.cas8(lay.outer, suspect, 0)
        in_queue = False
        for s in lay.queue:
            v = w.load8(s)
            if v == suspect | PENDING:
                w.cas8(s, v, 0)
            elif v == suspect:
                in_queue = True
        if in_queue:
            deadline = time.monotonic() + timeout
            while not w.cas8(lay.outer, 0, by):
                holder = w.load8(lay.outer)
                if holder and self.detector(holder) is Health.SUSPECTED:
                    self.words.revoke(holder)
                    w.cas8(lay.outer, holder, 0)
                if time.monotonic() > deadline:
                    raise TimeoutError("outer lock not obtained for eviction")
                time.sleep(0.0005)
            self._run(shift_gen(lay, frozenset((suspect,))))
            w.cas8(lay.outer, by, 0)
        return Eviction.EVICTED

    def snapshot(self) -> dict:
        return self.layout.describe([self.words.load8(i) for i in range(self.layout.size)])


# -- checking ---------------------------------------------------------------------------

@dataclass
class LockMonitor:
    """Safety checker fed with every table state and grant/release event.

    Mutual exclusion is checked on granted holders.  Fairness: whenever two
    confirmed pids are seen in the queue (before its first gap) in some order,
    that order must never invert and the later one must not be granted first.
    """

    layout: LockLayout
    holders: frozenset = frozenset()
    pairs: frozenset = frozenset()
    gone: frozenset = frozenset()
    violations: list = field(default_factory=list)
    grants: list = field(default_factory=list)

    def key(self):
        return self.holders, self.pairs, self.gone

    def copy(self) -> "LockMonitor":
        return LockMonitor(self.layout, self.holders, self.pairs, self.gone, self.violations, self.grants)

    def queue_order(self, words) -> list[int]:
        order = []
        for s in self.layout.queue:
            v = words[s]
            if not is_member(v):
                break
            if v not in order:
                order.append(v)
        return order

    def on_state(self, words) -> None:
        order = [v for v in self.queue_order(words) if v not in self.gone]
        pos = {v: i for i, v in enumerate(order)}
        for x, y in self.pairs:
            if x in pos and y in pos and pos[y] < pos[x]:
                self.violations.append(f"queue inversion: {y} moved ahead of {x}")
        new = {(order[i], order[j]) for i in range(len(order)) for j in range(i + 1, len(order))}
        if not new <= self.pairs:
            self.pairs = self.pairs | new

    def on_event(self, evt) -> None:
        kind = evt[0]
        if kind == "grant":
            _, pid, mode = evt
            for x, y in self.pairs:
                if y == pid and x not in self.gone:
                    self.violations.append(f"overtaking: {pid} granted before queued {x}")
            writers = [p for p, m in self.holders if m is Mode.WRITE]
            if mode is Mode.WRITE and self.holders:
                self.violations.append(f"writer {pid} granted while {sorted(p for p, _ in self.holders)} hold")
            if mode is Mode.READ and writers:
                self.violations.append(f"reader {pid} granted while writer {writers[0]} holds")
            self.holders = self.holders | {(pid, mode)}
            self.gone = self.gone | {pid}
            self.grants.append((pid, mode))
        elif kind == "release":
            _, pid, mode = evt
            self.holders = self.holders - {(pid, mode)}
        elif kind == "evict":
            pid = evt[1]
            self.gone = self.gone | {pid}
            self.holders = frozenset(h for h in self.holders if h[0] != pid)


def client_gen(lay: LockLayout, pid: int, mode: Mode):
    """A client that polls until granted, holds the lock, then releases it."""
    while True:
        res, _ = yield from attempt_gen(lay, pid, mode)
        if res is Grant.GRANTED:
            break
    yield from release_gen(lay, pid)


_JUMPS_ALWAYS = {"JUMP_ABSOLUTE", "JUMP_FORWARD", "RETURN_VALUE", "RAISE_VARARGS", "RERAISE"}


@functools.lru_cache(maxsize=None)
def _live_locals(code) -> dict:
    """Offset -> locals live on entry, by backward dataflow over the bytecode."""
    ins = list(dis.get_instructions(code))
    idx = {x.offset: n for n, x in enumerate(ins)}
    succ = []
    for n, x in enumerate(ins):
        out = []
        if x.opname not in _JUMPS_ALWAYS and n + 1 < len(ins):
            out.append(n + 1)
        if x.opcode in dis.hasjabs or x.opcode in dis.hasjrel:
            out.append(idx[x.argval])
        succ.append(out)
    live = [frozenset()] * len(ins)
    changed = True
    while changed:
        changed = False
        for n in range(len(ins) - 1, -1, -1):
            x = ins[n]
            after = frozenset().union(*(live[m] for m in succ[n])) if succ[n] else frozenset()
            if x.opname == "LOAD_FAST":
                cur = after | {x.argval}
            elif x.opname in ("STORE_FAST", "DELETE_FAST"):
                cur = after - {x.argval}
            else:
                cur = after
            if cur != live[n]:
                live[n] = cur
                changed = True
    return {x.offset: live[n] for n, x in enumerate(ins)}


def _frame_key(gen):
    """Position plus live locals of a suspended generator chain."""
    parts = []
    while gen is not None:
        fr = gen.gi_frame
        if fr is None:
            parts.append(None)
            break
        live = _live_locals(fr.f_code).get(fr.f_lasti, ())
        loc = []
        for name in sorted(live):
            v = fr.f_locals.get(name)
            if isinstance(v, set):
                v = frozenset(v)
            elif isinstance(v, LockLayout):
                continue
            loc.append((name, v))
        parts.append((fr.f_code.co_name, fr.f_lasti, tuple(loc)))
        gen = gen.gi_yieldfrom
    return tuple(parts)


def _relabel(obj, table):
    if isinstance(obj, int) and not isinstance(obj, bool):
        return table.get(obj, obj)
    if isinstance(obj, tuple):
        return tuple(_relabel(x, table) for x in obj)
    if isinstance(obj, frozenset):
        return frozenset(_relabel(x, table) for x in obj)
    return obj


@dataclass
class ExploreResult:
    states: int
    transitions: int
    completed: int
    violations: list
    deadlocks: int
    trace: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations and self.deadlocks == 0 and self.completed > 0


def explore(writers: int = 2, readers: int = 2, k: int = 2, f: int = 2, max_states: int = 5_000_000,
            keep_trace: bool = False) -> ExploreResult:
    """Exhaustively interleave the clients' primitive steps.

    Each process is rebuilt by replaying its own result history.  States are
    merged on the table, every process's position and live locals, and the
    monitor, up to permutations of same-mode pids.  Event and wait steps are
    fused with the preceding operation, so they never interleave.
    """
    lay = LockLayout(k, f)
    wpids = [101 + i for i in range(writers)]
    rpids = [201 + i for i in range(readers)]
    clients = [(p, Mode.WRITE) for p in wpids] + [(p, Mode.READ) for p in rpids]
    n = len(clients)
    perms = []
    for pw in itertools.permutations(wpids):
        for pr in itertools.permutations(rpids):
            t = {}
            for a, b in zip(wpids + rpids, list(pw) + list(pr)):
                t[a] = b
                t[a | PENDING] = b | PENDING
            perms.append((t, [wpids.index(b) if b in wpids else writers + rpids.index(b)
                              for b in list(pw) + list(pr)]))
    cache: dict = {}

    def advance(p, hist):
        """(next op or None when finished, fingerprint) for process p after hist."""
        key = (p, hist)
        hit = cache.get(key)
        if hit is not None:
            return hit
        pid, mode = clients[p]
        g = client_gen(lay, pid, mode)
        try:
            op = next(g)
            for r in hist:
                op = g.send(r)
            out = (op, (op, _frame_key(g)))
        except StopIteration:
            out = (None, ("done",))
        if len(cache) > 2_000_000:
            cache.clear()
        cache[key] = out
        return out

    memo: dict = {}

    def relabel_fp(fp, pi):
        key = (fp, pi)
        out = memo.get(key)
        if out is None:
            if len(memo) > 2_000_000:
                memo.clear()
            out = memo[key] = _relabel(fp, perms[pi][0])
        return out

    def canonical(words, fps, mkey):
        best = None
        for pi, (t, where) in enumerate(perms):
            # process p's role moves to slot where[p]
            f2 = [None] * n
            for p in range(n):
                f2[where[p]] = relabel_fp(fps[p], pi)
            cand = (tuple(t.get(v, v) for v in words), tuple(f2), _relabel(mkey, t))
            h = hash(cand)
            if best is None or h < best[0]:
                best = (h, cand)
        return best[1]

    def step(words, m, op):
        kind = op[0]
        if kind == "load":
            return words[op[1]]
        if kind == "cas":
            ok = words[op[1]] == op[2]
            if ok:
                words[op[1]] = op[3]
                m.on_state(words)
            return ok
        if kind == "event":
            m.on_event(op[1:])
        return None

    mon0 = LockMonitor(lay)
    stack = [(tuple([0] * lay.size), tuple(() for _ in range(n)), mon0, ())]
    seen = set()
    states = transitions = completed = deadlocks = 0
    violations: list[str] = []
    trace = ()
    while stack:
        words, hists, mon, path = stack.pop()
        fps = tuple(advance(p, hists[p])[1] for p in range(n))
        key = canonical(words, fps, mon.key())
        if key in seen:
            continue
        seen.add(key)
        states += 1
        if states > max_states:
            violations.append(f"state budget {max_states} exceeded")
            break
        live = [p for p in range(n) if advance(p, hists[p])[0] is not None]
        if not live:
            completed += 1
            if any(words):
                violations.append(f"table not clean at the end: {lay.describe(words)}")
            continue
        for p in live:
            m = mon.copy()
            m.violations = []
            m.grants = []
            w = list(words)
            h = hists[p]
            op = advance(p, h)[0]
            steps = []
            while True:
                res = step(w, m, op)
                steps.append((clients[p][0], op, res))
                h = h + (res,)
                op = advance(p, h)[0]
                if op is None or op[0] not in ("event", "wait"):
                    break
            transitions += 1
            npath = path + tuple(steps) if keep_trace else ()
            if m.violations:
                violations.extend(m.violations)
                trace = npath
                continue
            nh = list(hists)
            nh[p] = h
            stack.append((tuple(w), tuple(nh), m, npath))
        if violations:
            break
    return ExploreResult(states, transitions, completed, violations, deadlocks, trace)


# -- stress and kill checks ---------------------------------------------------------------

@dataclass
class StressReport:
    clients: int
    grants: int
    kills: int
    holder_kills: int
    evictions: int
    violations: list
    final_table: dict

    @property
    def ok(self) -> bool:
        clean = (not any(self.final_table["readers"]) and not self.final_table["writer"]
                 and not any(self.final_table["queue"]) and not self.final_table["outer"])
        return not self.violations and clean and self.grants > 0


def stress(clients: int = 16, rounds: int = 40, k: int = 8, f: int = 8, kill_rate: float = 0.05,
           holder_kill_rate: float = 0.05, seed: int = 0, timeout: float = 60.0) -> StressReport:
    """Threaded clients hammering one table; some die mid-protocol or while holding.

    Dead clients are replaced by fresh pids.  Survivors evict whoever is
    suspected.  Mutual exclusion and queue order are checked on every mutation.
    """
    import random

    lay = LockLayout(k, f)
    monitor = LockMonitor(lay)
    store = LocalWords(lay.size, monitor)
    dead: set[int] = set()
    dead_lock = threading.Lock()
    counters = {"kills": 0, "holder_kills": 0, "evictions": 0}
    errors: list[str] = []
    next_pid = [clients + 1]

    def detector(pid):
        with dead_lock:
            return Health.SUSPECTED if pid in dead else Health.ALIVE

    def worker(idx):
        rng = random.Random(seed * 1000 + idx)
        pid = idx + 1
        done = 0
        while done < rounds:
            table = LockTable(store.view(pid), k, f, detector)
            if rng.random() < kill_rate:
                table.kill_after = rng.randrange(1, 60)
            mode = Mode.WRITE if rng.random() < 0.4 else Mode.READ
            try:
                table.acquire(pid, mode, timeout=timeout)
                if rng.random() < holder_kill_rate:
                    raise Killed()
                table.kill_after = None
                time.sleep(rng.random() * 1e-4)
                table.release(pid)
                done += 1
            except Killed:
                with dead_lock:
                    dead.add(pid)
                    counters["kills"] += 1
                    if any(p == pid for p, _ in monitor.holders):
                        counters["holder_kills"] += 1
                    pid = next_pid[0]
                    next_pid[0] += 1
            except (Revoked, TimeoutError) as exc:
                errors.append(f"client {pid}: {exc!r}")
                return

    # count evictions through the store's revoke hook
    orig_revoke = store.revoke

    def counting_revoke(pid):
        with dead_lock:
            counters["evictions"] += 1
        orig_revoke(pid)

    store.revoke = counting_revoke
    threads = [threading.Thread(target=worker, args=(i,)) for i in range(clients)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    # a survivor sweeps up after the dead: slots, pending entries, leftovers of shifts
    sweeper = next_pid[0]
    table = LockTable(store.view(sweeper), k, f, detector)
    for pid in sorted(dead):
        if pid not in store.revoked:
            table.evict(pid, sweeper)
    for s in lay.readers:
        v = store.load8(s)
        if v:
            errors.append(f"reader slot {s} still held by {v}")
    while not store.cas8(lay.outer, 0, sweeper):
        store.cas8(lay.outer, store.load8(lay.outer), 0)
    table._run(shift_gen(lay, frozenset(dead)))
    store.cas8(lay.outer, sweeper, 0)
    return StressReport(clients, len(monitor.grants), counters["kills"], counters["holder_kills"],
                        counters["evictions"], errors + monitor.violations, table.snapshot())


@dataclass
class ShiftKillReport:
    steps: int
    lost: list
    order_errors: list

    @property
    def ok(self) -> bool:
        return not self.lost and not self.order_errors and self.steps > 0


def shift_kill_check(f: int = 8, members: int | None = None) -> ShiftKillReport:
    """Kill the shifting head after every possible step and recover.

    After the kill every queued pid must still be present at least once; after
    the dead shifter is evicted and a survivor shifts, the queue must hold the
    waiting pids in their original order.
    """
    members = f if members is None else members
    lay = LockLayout(1, f)
    head, waiting = 1, list(range(2, members + 1))
    lost, order_errors = [], []
    step = 0
    while True:
        store = LocalWords(lay.size)
        for i, p in enumerate([head] + waiting):
            store.words[lay.queue[i]] = p
        store.words[lay.outer] = head
        table = LockTable(store.view(head), 1, f, kill_after=step)
        finished = True
        try:
            table._run(shift_gen(lay, frozenset((head,))))
        except Killed:
            finished = False
        present = {store.words[s] for s in lay.queue}
        missing = [p for p in waiting if p not in present]
        if missing:
            lost.append((step, missing))
        survivor = 999
        detector = (lambda pid: Health.SUSPECTED if pid == head else Health.ALIVE)
        cleaner = LockTable(store.view(survivor), 1, f, detector)
        if not finished:
            cleaner.evict(head, survivor)
            store.cas8(lay.outer, head, 0)
            store.cas8(lay.outer, 0, survivor)
            cleaner._run(shift_gen(lay, frozenset((head,))))
            store.cas8(lay.outer, survivor, 0)
        got = [store.words[s] for s in lay.queue]
        want = waiting + [0] * (f - len(waiting))
        if got != want:
            order_errors.append((step, got))
        if finished:
            return ShiftKillReport(step + 1, lost, order_errors)
        step += 1
