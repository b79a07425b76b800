"""Acceptance suite: one test per criterion, each printing a single pass/fail line.

Expected values are either frozen from independent computation (depth
targets, tolerances) or structural (zero failures, byte identity).
"""

import math

import pytest

from pmtx import lock
from pmtx.harness import crashtest, scenarios
from pmtx.harness.metrics import fill, lookahead_gain
from pmtx.harness.remote_fill import flush_durability, local_image, remote_fill
from pmtx.harness.images import random_keys

SIZES = (1_000, 10_000, 100_000, 1_000_000)

pytestmark = pytest.mark.slow


def test_criterion_1_crash_injection(criterion):
    summary = crashtest.campaign(10_000, keys=1000, seed=2024, trees=("rbt", "avl"), modes=("insert", "remove"),
                                 probabilities=(0.0, 0.5, 1.0), ops=3)
    ok = summary["failures"] == 0 and summary["trials"] >= 10_000 and len(summary["per_combination"]) == 12
    criterion(1, "crash-injection soundness", ok,
              f"{summary['trials']} trials, {summary['crashed']} crashed mid-run, {summary['failures']} failures, "
              f"{summary['seconds']}s")
    assert ok, summary["failure_details"][:3]


def test_criterion_2_constant_log(criterion):
    sizes = (0, 1, 10, 1000, 100_000, 1_000_000)
    fp = {kind: scenarios.log_footprint(kind, sizes=sizes) for kind in ("rbt", "avl")}
    ok = all(v <= 256 for v in fp["rbt"].values()) and all(v <= 128 for v in fp["avl"].values())
    criterion(2, "constant redo-log size", ok,
              f"rbt max {max(fp['rbt'].values())} B <= 256, avl max {max(fp['avl'].values())} B <= 128 "
              f"over sizes {sizes[0]}..{sizes[-1]}")
    assert ok, fp


def test_criterion_3_depths(criterion):
    rbt = fill("rbt", 10_000_000, seed=1)[0]
    avl = fill("avl", 10_000_000, seed=1)[0]
    checks = {
        "rbt mean": abs(rbt.mean_insert_depth - 21) <= 1,
        "avl mean": abs(avl.mean_insert_depth - 21) <= 1,
        "rbt final": abs(rbt.final_depth - 29) <= 2,
        "avl final": abs(avl.final_depth - 28) <= 1,
    }
    ok = all(checks.values())
    criterion(3, "depth statistics at 10^7", ok,
              f"mean depth rbt {rbt.mean_insert_depth:.2f} avl {avl.mean_insert_depth:.2f} (21+-1); "
              f"final rbt {rbt.final_depth} (29+-2) avl {avl.final_depth} (28+-1)")
    assert ok, checks


def test_criterion_4_amortized_restructuring(criterion):
    rbt = [fill("rbt", n, seed=1)[0].restructurings_per_op for n in SIZES]
    avl_rm = [fill("avl", n, seed=1, remove=True)[1] for n in SIZES]
    avl_mean = [r.rotations_per_op for r in avl_rm]
    heights = (10, 13, 16, 19, 22, 25)
    fib = [scenarios.fibonacci_worst_case(h) for h in heights]
    rbt_ok = max(rbt) <= 1.0 and (max(rbt) - min(rbt)) / max(rbt) <= 0.05
    avl_mean_ok = max(avl_mean) <= 0.5 and (max(avl_mean) - min(avl_mean)) / max(avl_mean) <= 0.15
    per_log = [f.remove_rotations / math.log2(f.nodes) for f in fib]
    fib_ok = (all(f.build_rotations == 0 for f in fib)
              and all(f.remove_rotations == (f.height - 1) // 2 for f in fib)
              and all(b.remove_rotations > a.remove_rotations for a, b in zip(fib, fib[1:]))
              and max(per_log) / min(per_log) <= 1.5)
    ok = rbt_ok and avl_mean_ok and fib_ok
    criterion(4, "amortized restructuring", ok,
              f"rbt restructurings/insert {[round(x, 3) for x in rbt]} (<=1, flat); "
              f"avl rotations/remove {[round(x, 3) for x in avl_mean]}; "
              f"fibonacci remove rotations {[f.remove_rotations for f in fib]} for n={[f.nodes for f in fib]}")
    assert ok


def test_criterion_5_lookahead_gain(criterion):
    details, ok = [], True
    for tree in ("rbt", "avl"):
        rows = [lookahead_gain(tree, n, seed=1) for n in SIZES]
        la = [r["epochs_per_insert_lookahead"] for r in rows]
        plain = [r["epochs_per_insert_plain"] for r in rows]
        steps = [b - a for a, b in zip(plain, plain[1:])]
        flat = (max(la) - min(la)) / max(la) <= 0.05
        grows = all(s > 1.0 for s in steps) and max(steps) / min(steps) <= 1.5
        ratio = rows[-1]["ratio"]
        ok &= ratio >= 2 and flat and grows
        details.append(f"{tree} ratio@1e6 {ratio:.2f}, LA {la[0]:.2f}->{la[-1]:.2f}, "
                       f"no-LA {plain[0]:.2f}->{plain[-1]:.2f} (+{sum(steps) / len(steps):.2f}/decade)")
    criterion(5, "look-ahead gain", ok, "; ".join(details))
    assert ok


def test_criterion_6_idempotence(criterion):
    reps = [scenarios.idempotence_check(kind, ops=10_000, seed=11) for kind in ("rbt", "avl")]
    ok = all(r.ok for r in reps)
    criterion(6, "idempotence oracle", ok, "; ".join(
        f"{r.tree}: {r.transitions} transitions re-executed twice, images identical={r.identical_images}, "
        f"result mismatches {r.mismatched_results}" for r in reps))
    assert ok


def test_criterion_7_rotation_atomicity(criterion):
    reps = [scenarios.rotation_atomicity(kind) for kind in ("rbt", "avl")]
    cases = [c for r in reps for c in r.cases]
    damaged = sum(c.damage != "no visible damage" for c in cases)
    subsets = {c.failed for c in cases}
    ok = all(r.ok for r in reps) and len(subsets) == 6 and damaged == len(cases)
    criterion(7, "rotation atomicity", ok,
              f"{len(subsets)} partial-store cases x 2 trees x 2 variants = {len(cases)} injections, "
              f"{damaged} damaged before recovery, {sum(c.recovered for c in cases)} fully recovered")
    assert ok, [c for c in cases if not c.recovered]


def test_criterion_8_lock_suite(criterion):
    ex = lock.explore(writers=2, readers=2, k=2, f=2)
    st = [lock.stress(clients=16, rounds=40, seed=s) for s in range(3)]
    sk = [lock.shift_kill_check(f=8, members=m) for m in (1, 3, 5, 8)]
    ok = ex.ok and all(r.ok for r in st) and all(r.ok for r in sk)
    criterion(8, "lock suite", ok,
              f"explore 2W+2R f=2: {ex.states} states, {len(ex.violations)} violations, {ex.deadlocks} deadlocks; "
              f"stress 16 clients x3: {sum(r.grants for r in st)} grants, {sum(r.holder_kills for r in st)} holder "
              f"kills, {sum(r.evictions for r in st)} evictions; shift-kill steps {[r.steps for r in sk]} all preserved")
    assert ok


def test_criterion_9_remote_equivalence(criterion):
    parts, ok = [], True
    for tree in ("rbt", "avl"):
        ref = local_image(tree, [int(k) for k in random_keys(1000, 1)])
        plain = remote_fill(tree, 1000, seed=1, reference=ref)
        cached = remote_fill(tree, 1000, seed=1, cache_log=True, reference=ref)
        ok &= plain.identical and cached.identical and cached.gets < plain.gets
        parts.append(f"{tree} identical={plain.identical}/{cached.identical} GET {plain.gets}->{cached.gets}")
    fl = flush_durability(trials=20, n=60, seed=9)
    ok &= fl.ok
    parts.append(f"flush-ack crash trials {fl.trials} ({fl.acked_lines_checked} acked lines checked, "
                 f"{len(fl.failures)} failures)")
    criterion(9, "remote equivalence", ok, "; ".join(parts))
    assert ok
