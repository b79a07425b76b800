"""Randomized crash injection: run operations, die at a primitive, recover, validate.

A trial is fully described by a :class:`CrashSchedule`.  The tree is prefilled
through the volatile kernel (identical bytes, no epochs), then ``ops``
operations run on the persistent engine until primitive number ``crash_point``
of the persistence domain.  Dirty lines survive with the eviction probability,
a fresh engine recovers, and the result must validate and match the oracle.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import asdict, dataclass

import numpy as np

from pmtx.engine import CLEAN, L_STATE, OP_INSERT, OP_REMOVE, open_tree, unpack_state
from pmtx.harness.images import KEY_SPACE, engine_from_kernel
from pmtx.kernel import TreeKernel
from pmtx.pmem import CrashPoint, CrashPolicy, Region

MODES = ("insert", "remove", "mixed")


@dataclass
class CrashSchedule:
    tree: str
    keys: int
    seed: int
    ops: int
    crash_point: int
    eviction_probability: float
    mode: str = "mixed"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CrashSchedule":
        return cls(**json.loads(text))


@dataclass
class TrialResult:
    schedule: CrashSchedule
    crashed: bool
    completed_ops: int
    in_flight_applied: bool | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def plan(schedule: CrashSchedule):
    """Prefill keys and the operation list, both derived from the seed alone."""
    rng = np.random.default_rng(schedule.seed)
    prefill = [int(k) for k in rng.integers(1, KEY_SPACE, size=schedule.keys, dtype=np.uint64)]
    prefill = list(dict.fromkeys(prefill))
    pick = random.Random(schedule.seed)
    present = list(prefill)
    ops = []
    for _ in range(schedule.ops):
        kind = schedule.mode
        if kind == "mixed":
            kind = "insert" if pick.random() < 0.5 else "remove"
        if kind == "insert" or not present:
            key = pick.randrange(1, KEY_SPACE)
            ops.append((OP_INSERT, key, key ^ 0x5A5A))
            present.append(key)
        else:
            key = pick.choice(present) if pick.random() < 0.9 else pick.randrange(1, KEY_SPACE)
            ops.append((OP_REMOVE, key, 0))
    return prefill, ops


def _prepared(schedule: CrashSchedule, prefill):
    kernel = TreeKernel(schedule.tree, len(prefill) + schedule.ops + 2)
    kernel.fill(np.array(prefill, dtype=np.uint64), np.array([k ^ 0x5A5A for k in prefill], dtype=np.uint64))
    return engine_from_kernel(kernel)


def _apply(oracle: dict, op) -> None:
    kind, key, value = op
    if kind == OP_INSERT:
        oracle.setdefault(key, value)
    else:
        oracle.pop(key, None)


def primitive_count(schedule: CrashSchedule) -> int:
    """Primitives the operations issue without a crash (the sampling range)."""
    prefill, ops = plan(schedule)
    eng = _prepared(schedule, prefill)
    start = eng._raw.ops
    for kind, key, value in ops:
        if kind == OP_INSERT:
            eng.insert(key, value)
        else:
            eng.remove(key)
    return eng._raw.ops - start


def run_trial(schedule: CrashSchedule) -> TrialResult:
    prefill, ops = plan(schedule)
    eng = _prepared(schedule, prefill)
    dom = eng._raw
    oracle = {k: k ^ 0x5A5A for k in prefill}
    dom.crash_at = dom.ops + schedule.crash_point
    done = 0
    crashed = False
    dom.trace = []
    mark = 0
    try:
        for op in ops:
            mark = len(dom.trace)
            if op[0] == OP_INSERT:
                eng.insert(op[1], op[2])
            else:
                eng.remove(op[1])
            _apply(oracle, op)
            done += 1
    except CrashPoint:
        crashed = True
    trace, dom.trace = dom.trace, None
    dom.crash(CrashPolicy(schedule.eviction_probability, rng_seed=schedule.seed))
    applied = None
    res = TrialResult(schedule, crashed, done, None)
    try:
        if crashed:
            op = ops[done]
            word = dom.load_int(Region.LOG, L_STATE.offset, 8)
            sid, _ = unpack_state(word)
            if sid != CLEAN:
                applied = True
            else:
                # a clean durable state means either the request was never
                # accepted or the op's closing CAS back to clean executed; the
                # logged op and result cannot tell these apart when a torn
                # staging line survives, so ask the trace what ran
                applied = any(e[0] == "cas8" and e[1] == Region.LOG and e[2] == L_STATE.offset
                              and unpack_state(e[4])[0] == CLEAN and unpack_state(e[3])[0] != CLEAN
                              for e in trace[mark:])
            res.in_flight_applied = applied
            if applied:
                _apply(oracle, op)
        eng2 = open_tree(dom)
        eng2.recover()
        eng2.validate(sorted(oracle))
        got = {n.key: n.value for i, n in eng2.nodes().items() if i != 0}
        if got != oracle:
            raise AssertionError("values differ from the oracle")
        # the recovered machine keeps working
        probe = ops[done][1] if crashed else 1
        eng2.insert(probe ^ 0x1234567, 7)
        _apply(oracle, (OP_INSERT, probe ^ 0x1234567, 7))
        eng2.validate(sorted(oracle))
    except Exception as exc:  # any failure is reported with its replayable schedule
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def sample_schedule(rng: random.Random, tree: str, keys: int, mode: str, p: float, ops: int) -> CrashSchedule:
    seed = rng.randrange(1 << 32)
    sched = CrashSchedule(tree, keys, seed, ops, 0, p, mode)
    total = primitive_count(sched)
    sched.crash_point = rng.randrange(max(total, 1))
    return sched


def campaign(trials: int, keys: int = 1000, seed: int = 0, trees=("rbt", "avl"), modes=("insert", "remove"),
             probabilities=(0.0, 0.5, 1.0), ops: int = 3, on_failure=None) -> dict:
    """Round-robin over tree x mode x eviction probability; returns a summary."""
    rng = random.Random(seed)
    combos = [(t, m, p) for t in trees for m in modes for p in probabilities]
    failures = []
    per = {f"{t}/{m}/p={p}": 0 for t, m, p in combos}
    crashed = 0
    t0 = time.perf_counter()
    for i in range(trials):
        t, m, p = combos[i % len(combos)]
        sched = sample_schedule(rng, t, keys, m, p, ops)
        r = run_trial(sched)
        per[f"{t}/{m}/p={p}"] += 1
        crashed += r.crashed
        if not r.ok:
            failures.append({"schedule": asdict(sched), "error": r.error})
            if on_failure is not None:
                on_failure(r)
    return {
        "trials": trials, "crashed": crashed, "failures": len(failures), "failure_details": failures[:20],
        "per_combination": per, "seconds": round(time.perf_counter() - t0, 2),
    }
