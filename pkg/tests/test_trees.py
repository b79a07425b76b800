import random

import pytest
from hypothesis import given, settings, strategies as st

from pmtx.engine import (CATEGORIES, EVENTS, OP_INSERT, DirtyStateError, InvariantViolation, Result, UsageError,
                         create_tree, open_tree)
from pmtx.kernel import PyTreeKernel
from pmtx.pmem import EVERYTHING_SURVIVES, NOTHING_SURVIVES, CrashPoint, CrashPolicy, Region


def run_ops(eng, ops, oracle):
    for op, key in ops:
        if op == "i":
            res = eng.insert(key, key * 3)
            assert res == (Result.ALREADY_PRESENT if key in oracle else Result.INSERTED)
            oracle.setdefault(key, key * 3)
        else:
            res = eng.remove(key)
            assert res == (Result.REMOVED if key in oracle else Result.NOT_FOUND)
            oracle.pop(key, None)


@pytest.mark.parametrize("lookahead", [True, False])
def test_random_ops_match_oracle(kind, lookahead):
    rng = random.Random(4)
    ops = [("i" if rng.random() < 0.6 else "r", rng.randrange(300)) for _ in range(900)]
    eng = create_tree(kind, 1000, lookahead=lookahead)
    oracle = {}
    run_ops(eng, ops, oracle)
    eng.validate(sorted(oracle))
    assert eng.keys() == sorted(oracle)
    for k, v in list(oracle.items())[:50]:
        assert eng.lookup(k) == v
    assert eng.lookup(10**6) is None


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("ir"), st.integers(0, 40)), max_size=80), st.sampled_from(["rbt", "avl"]))
def test_property_any_sequence_keeps_invariants(ops, kind):
    eng = create_tree(kind, 100)
    oracle = {}
    run_ops(eng, ops, oracle)
    eng.validate(sorted(oracle))


def test_empty_tree_edge_cases(kind):
    eng = create_tree(kind, 4)
    assert eng.remove(5) == Result.NOT_FOUND
    eng.validate([])
    assert eng.insert(5, 1) == Result.INSERTED
    assert eng.insert(5, 2) == Result.ALREADY_PRESENT
    assert eng.lookup(5) == 1
    assert eng.remove(5) == Result.REMOVED
    eng.validate([])


def test_strict_mode_read_write_disjoint(kind):
    rng = random.Random(9)
    eng = create_tree(kind, 400, strict=True)
    oracle = {}
    run_ops(eng, [("i" if rng.random() < 0.6 else "r", rng.randrange(150)) for _ in range(500)], oracle)
    assert eng.violations == []


def test_validate_catches_corruption(kind):
    eng = create_tree(kind, 64)
    for k in range(1, 30):
        eng.insert(k, k)
    with pytest.raises(InvariantViolation):
        eng.validate(list(range(1, 29)))
    root = eng.root()
    eng._raw.store(Region.TREE, root * 32 + 12, (10**9).to_bytes(8, "little"))
    with pytest.raises(InvariantViolation):
        eng.validate()


def test_counts_and_categories(kind):
    eng = create_tree(kind, 300)
    for k in random.Random(2).sample(range(10**6), 200):
        eng.insert(k, k)
    rep = eng.metrics_report()
    assert set(rep["epochs"]) == set(CATEGORIES)
    assert set(rep["events"]) == set(EVENTS)
    assert rep["epochs"]["request-staging"] == 200
    assert sum(rep["events"].values()) > 0


def test_kernel_is_byte_and_count_exact(kind):
    keys = random.Random(8).sample(range(1, 10**9), 300)
    eng = create_tree(kind, 302)
    ker = PyTreeKernel(kind, 302)
    for k in keys:
        eng.insert(k, k)
        ker.insert(k, k)
    for k in keys[:150]:
        eng.remove(k)
        ker.remove(k)
    assert eng._raw.durable(Region.TREE) == ker.image()
    assert [eng.metrics.get(c, 0) for c in CATEGORIES] == list(ker.counters)
    assert [eng.events.get(e, 0) for e in EVENTS] == list(ker.events)


def _prefilled(kind, keys):
    eng = create_tree(kind, len(keys) + 4)
    for k in keys:
        eng.insert(k, k)
    return eng


@pytest.mark.parametrize("op", ["insert", "remove"])
@pytest.mark.parametrize("policy", [NOTHING_SURVIVES, EVERYTHING_SURVIVES, CrashPolicy(0.5, 3)])
def test_crash_at_every_primitive(kind, op, policy):
    keys = [50, 20, 80, 10, 30, 70, 90, 5, 15, 25, 35, 1, 2]
    target = 3 if op == "insert" else 30
    probe = _prefilled(kind, keys)
    start = probe._raw.ops
    (probe.insert(target, 1) if op == "insert" else probe.remove(target))
    total = probe._raw.ops - start
    before = set(keys)
    after = before | {target} if op == "insert" else before - {target}
    for point in range(total):
        eng = _prefilled(kind, keys)
        dom = eng._raw
        dom.crash_at = dom.ops + point
        with pytest.raises(CrashPoint):
            eng.insert(target, 1) if op == "insert" else eng.remove(target)
        dom.crash(policy)
        rec = open_tree(dom)
        rec.recover()
        got = set(rec.keys())
        assert got in (before, after), point
        rec.validate(sorted(got))


def test_dirty_state_requires_recover(kind):
    eng = _prefilled(kind, list(range(1, 20)))
    dom = eng._raw
    dom.crash_at = dom.ops + 12
    with pytest.raises(CrashPoint):
        eng.insert(100, 1)
    dom.crash(NOTHING_SURVIVES)
    rec = open_tree(dom)
    if not rec.is_clean():
        with pytest.raises(DirtyStateError):
            rec.insert(200, 1)
    rec.recover()
    assert rec.recover() is None
    rec.validate(sorted(set(range(1, 20)) | {100}))


def test_log_footprint_limit(kind):
    eng = _prefilled(kind, random.Random(1).sample(range(10**6), 200))
    limit = 256 if kind == "rbt" else 128
    assert 0 < eng.log_footprint() <= limit


def test_detectable_execution(kind):
    eng = _prefilled(kind, [10, 20, 30])
    eng.announce(2, client=7, seq=1, op=OP_INSERT, key=25, value=9)
    with pytest.raises(UsageError):
        eng.announce(2, client=7, seq=1, op=OP_INSERT, key=25, value=9)
    assert eng.classify(2) == "not-executed"
    assert eng.run_announced(2) == Result.INSERTED
    assert eng.classify(2) == "completed"
    assert eng.intent(2)["result"] == Result.INSERTED
    with pytest.raises(UsageError):
        eng.run_announced(2)
    assert eng.classify(3) == "never-intended"


def test_detectable_execution_across_crash(kind):
    verdicts = set()
    for point in range(0, 400, 7):
        eng = _prefilled(kind, [10, 20, 30, 40])
        dom = eng._raw
        eng.announce(1, client=3, seq=5, op=OP_INSERT, key=35, value=1)
        dom.crash_at = dom.ops + point
        try:
            eng.run_announced(1)
        except CrashPoint:
            pass
        dom.crash(NOTHING_SURVIVES)
        rec = open_tree(dom)
        rec.recover()
        verdict = rec.classify(1)
        verdicts.add(verdict)
        present = 35 in rec
        assert present == (verdict == "completed" or rec.intent(1)["phase"].name == "ACCEPTED")
    assert {"not-executed", "completed"} <= verdicts


def test_reopen_from_files(kind, tmp_path):
    paths = {Region.LOG: str(tmp_path / "log"), Region.TREE: str(tmp_path / "tree")}
    eng = create_tree(kind, 64, paths=paths)
    for k in range(1, 40):
        eng.insert(k, k)
    eng._raw.close()
    again = open_tree(paths)
    again.validate(list(range(1, 40)))
    assert again.kind == kind
