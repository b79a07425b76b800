"""Constructed workloads: the Fibonacci AVL worst case, partial-rotation crashes,
and the transition idempotence comparison."""

from __future__ import annotations

import random
import struct
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from pmtx.arena import HEAD
from pmtx.engine import EVENTS, create_tree, open_tree
from pmtx.harness.images import engine_from_kernel, random_keys
from pmtx.kernel import TreeKernel
from pmtx.paths import NODE_SIZE, NULL
from pmtx.pmem import PersistenceDomain, Region

_LINKS = struct.Struct("<II")


# -- Fibonacci worst case ---------------------------------------------------------

def fibonacci_keys(h: int) -> list:
    """Keys of the height-h Fibonacci tree T(h) = node(T(h-1), T(h-2)) in level order.

    Keys are 1..n in in-order position, so inserting them level by level
    reproduces the shape exactly: every prefix is a valid AVL tree and no
    insert needs a rotation.
    """
    def build(h, lo):
        if h <= 0:
            return None, lo
        if h == 1:
            return (lo, None, None), lo + 1
        left, lo = build(h - 1, lo)
        key = lo
        right, lo = build(h - 2, lo + 1)
        return (key, left, right), lo

    tree, _ = build(h, 1)
    out, queue = [], deque([tree])
    while queue:
        node = queue.popleft()
        if node is not None:
            out.append(node[0])
            queue.append(node[1])
            queue.append(node[2])
    return out


@dataclass
class FibonacciResult:
    height: int
    nodes: int
    build_rotations: int
    max_depth: int
    remove_rotations: int


def fibonacci_worst_case(h: int, backend: str = "auto") -> FibonacciResult:
    """Build T(h) in an AVL kernel, then remove the largest key."""
    from pmtx.harness.metrics import kernel_class

    keys = fibonacci_keys(h)
    kernel = kernel_class(backend)("avl", len(keys) + 2)
    kernel.fill(keys)
    built = sum(kernel.events[1:])
    depth = kernel.depth_stats()["max_depth"]
    kernel.reset_counters()
    kernel.remove(max(keys))
    return FibonacciResult(h, len(keys), built, depth, sum(kernel.events[1:]))


# -- rotation atomicity ----------------------------------------------------------------

def _child_links(img, i):
    return _LINKS.unpack_from(img, i * NODE_SIZE)


def reachability(tree_img, root_hint=HEAD) -> dict:
    """Walk child links from the head node: reachable set, cycle flag, and keys."""
    seen, keys = set(), []
    cycle = False
    stack = [root_hint]
    while stack:
        i = stack.pop()
        if i in seen:
            cycle = True
            continue
        seen.add(i)
        if i != HEAD:
            keys.append(struct.unpack_from("<Q", tree_img, i * NODE_SIZE + 12)[0])
        left, right = _child_links(tree_img, i)
        for c in (left, right):
            if c != NULL:
                stack.append(c)
    return {"reachable": seen, "cycle": cycle, "keys": keys}


def _apply_slice(images, entries):
    """Apply traced stores/CASes up to (not including) the first fence."""
    for e in entries:
        if e[0] == "fence":
            break
        if e[0] == "store":
            _, region, off, data = e
            images[region][off:off + len(data)] = data
        elif e[0] == "cas8":
            _, region, off, exp, new = e
            if struct.unpack_from("<Q", images[region], off)[0] == exp:
                struct.pack_into("<Q", images[region], off, new)


def _find_rotation(before, after, touched):
    """Locate the three child-link changes of a single rotation.

    S1: Q.child[side] := B (was P), S2: P.child[1-side] := Q (was B),
    S3: GP.child[gp_dir] := P (was Q).  Returns {name: (node, dir, old, new)}.
    """
    diffs = {}
    for i in touched:
        old, new = _child_links(before, i), _child_links(after, i)
        for d in (0, 1):
            if old[d] != new[d]:
                diffs[(i, d)] = (old[d], new[d])
    for (g, dg), (q, p) in diffs.items():
        for dq in (0, 1):
            s1 = diffs.get((q, dq))
            if s1 is None or s1[0] != p:
                continue
            b = s1[1]
            s2 = diffs.get((p, 1 - dq))
            if s2 == (b, q):
                return {"S1": (q, dq, p, b), "S2": (p, 1 - dq, b, q), "S3": (g, dg, q, p)}
    return None


@dataclass
class RotationCase:
    tree: str
    failed: tuple
    others_persisted: bool
    damage: str
    recovered: bool
    error: str | None = None


@dataclass
class RotationReport:
    tree: str
    key: int
    links: dict
    cases: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return len(self.cases) == 12 and all(c.recovered for c in self.cases)


def _record_insert(kind, base, key):
    kernel = TreeKernel(kind, len(base) + 4)
    kernel.fill(base)
    eng = engine_from_kernel(kernel)
    dom = eng._raw
    snaps = [{r: bytes(dom.durable(r)) for r in (Region.LOG, Region.TREE)}]
    marks = [0]
    dom.trace = []

    def hook(engine, sid, nxt):
        snaps.append({r: bytes(dom.durable(r)) for r in (Region.LOG, Region.TREE)})
        marks.append(len(dom.trace))

    eng.on_transition = hook
    before_events = eng.events[EVENTS[1]] + eng.events[EVENTS[2]]
    eng.insert(key, key)
    rotated = eng.events[EVENTS[1]] + eng.events[EVENTS[2]] > before_events
    return eng, snaps, marks, rotated


def _locate(kind, base, key):
    """Transition index, pre-epoch durable image, post-epoch image, and links of the first rotation."""
    eng, snaps, marks, rotated = _record_insert(kind, base, key)
    if not rotated:
        return None
    trace = eng._raw.trace
    # transition t's primitives are trace[marks[t-1]:marks[t]]; staging fires
    # no hook, so the first span starts with the staging epoch and its CAS
    for t in range(1, len(marks)):
        span = trace[marks[t - 1]:marks[t]]
        pre = {r: bytearray(b) for r, b in snaps[t - 1].items()}
        if t == 1:
            cut = next(i for i, e in enumerate(span) if e[0] == "cas8" and e[1] == Region.LOG and e[2] == 0)
            for e in span[:cut + 1]:
                if e[0] != "fence":
                    _apply_slice(pre, [e])
            span = span[cut + 1:]
        post = {r: bytearray(b) for r, b in pre.items()}
        _apply_slice(post, span)
        touched = {e[2] // NODE_SIZE for e in span if e[0] == "store" and e[1] == Region.TREE}
        found = _find_rotation(pre[Region.TREE], post[Region.TREE], touched)
        if found is not None:
            return pre, post, found
    return None


def _inject(pre, post, links, failed, others_persisted):
    images = {r: bytearray(post[r] if others_persisted else pre[r]) for r in pre}
    for name, (node, d, old, new) in links.items():
        value = old if name in failed else new
        struct.pack_into("<I", images[Region.TREE], node * NODE_SIZE + 4 * d, value)
    # the state word stays at the executing transition: the CAS never happened
    images[Region.LOG][0:8] = pre[Region.LOG][0:8]
    return images


def _describe(scan, expected_nodes):
    lost = expected_nodes - scan["reachable"]
    parts = []
    if lost:
        parts.append(f"{len(lost)} node(s) unreachable")
    if scan["cycle"]:
        parts.append("cycle")
    return ", ".join(parts) or "no visible damage"


def rotation_atomicity(kind: str, seed: int = 7, base_size: int = 48) -> RotationReport:
    """Inject all six partial outcomes of a rotation's three link stores.

    For every non-empty proper subset of {S1, S2, S3} that fails to reach the
    media, the other link stores of the epoch are either all lost or all
    durable.  Each broken image must show structural damage before recovery
    and none after: every key reachable exactly once, no cycle.
    """
    rng = random.Random(seed)
    base = [int(k) for k in random_keys(base_size, seed)]
    located = None
    key = 0
    for _ in range(500):
        key = rng.randrange(1, 1 << 62)
        located = _locate(kind, base, key)
        if located is not None:
            pre, post, links = located
            # prefer a rotation below the root with a real inner subtree
            if links["S3"][0] != HEAD and links["S1"][3] != NULL:
                break
    if located is None:
        raise RuntimeError("no rotating insert found")
    pre, post, links = located
    expected = sorted(set(base) | {key})
    report = RotationReport(kind, key, {k: v[:2] for k, v in links.items()})
    pre_nodes = reachability(pre[Region.TREE])["reachable"]
    for r in (1, 2):
        for failed in combinations(("S1", "S2", "S3"), r):
            for others in (False, True):
                images = _inject(pre, post, links, failed, others)
                damage = _describe(reachability(images[Region.TREE]), pre_nodes)
                case = RotationCase(kind, failed, others, damage, False)
                try:
                    dom = PersistenceDomain.from_snapshot({r_: bytes(b) for r_, b in images.items()})
                    eng = open_tree(dom)
                    eng.recover()
                    eng.validate(expected)
                    scan = reachability(dom.cached(Region.TREE))
                    if scan["cycle"] or sorted(scan["keys"]) != expected:
                        raise AssertionError("reachability scan disagrees with the oracle")
                    case.recovered = True
                except Exception as exc:
                    case.error = f"{type(exc).__name__}: {exc}"
                report.cases.append(case)
    return report


# -- idempotence ----------------------------------------------------------------------------

def op_trace(n: int, seed: int = 0, universe: int | None = None) -> list:
    """Mixed insert/remove trace over a bounded key universe so removes usually hit."""
    rng = np.random.default_rng(seed)
    universe = universe or max(16, n // 4)
    pool = random_keys(universe, seed + 1)
    kinds = rng.random(n) < 0.6
    picks = rng.integers(0, universe, size=n)
    return [("insert" if k else "remove", int(pool[p])) for k, p in zip(kinds, picks)]


@dataclass
class IdempotenceReport:
    tree: str
    operations: int
    transitions: int
    mismatched_results: int
    identical_images: bool

    @property
    def ok(self) -> bool:
        return self.identical_images and self.mismatched_results == 0


def _run_trace(kind, trace, reexecute):
    capacity = sum(1 for op, _ in trace if op == "insert") + 2
    eng = create_tree(kind, capacity)
    eng.reexecute = reexecute
    results = []
    for op, key in trace:
        results.append(eng.insert(key, key ^ 0xABCDEF) if op == "insert" else eng.remove(key))
    return eng, results


def idempotence_check(kind: str, ops: int = 10_000, seed: int = 0) -> IdempotenceReport:
    """Run a trace plainly and with every transition re-executed after two simulated crashes."""
    trace = op_trace(ops, seed)
    plain, r1 = _run_trace(kind, trace, False)
    again, r2 = _run_trace(kind, trace, True)
    same = all(plain._raw.durable(r) == again._raw.durable(r) for r in (Region.LOG, Region.TREE))
    return IdempotenceReport(kind, ops, again.transitions, sum(a != b for a, b in zip(r1, r2)), same)


# -- log footprint ------------------------------------------------------------------------

LOG_LIMIT = {"rbt": 256, "avl": 128}


def log_footprint(kind: str, sizes=(0, 10, 1000, 100_000, 1_000_000), ops: int = 40, seed: int = 5) -> dict:
    """Highest log byte any engine operation stores, per prefilled tree size.

    The tree is prefilled by the kernel; then ``ops`` inserts and as many
    removes of present keys run through the persistent engine.
    """
    from pmtx.harness.metrics import kernel_class

    out = {}
    for n in sizes:
        keys = random_keys(n, seed)
        kernel = kernel_class("auto")(kind, n + ops + 2)
        kernel.fill(keys)
        eng = engine_from_kernel(kernel)
        fresh = random_keys(ops, seed + 1)
        for k in fresh:
            eng.insert(int(k), 1)
        present = [int(k) for k in keys[: ops // 2]] + [int(k) for k in fresh[: ops // 2]]
        for k in present:
            eng.remove(k)
        out[n] = eng.log_footprint()
    return out
