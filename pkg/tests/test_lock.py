import threading

import pytest

import pmtx.lock as L
from pmtx.lock import (PENDING, SEAL, Eviction, Grant, Health, LocalWords, LockLayout, LockTable, LockUsageError,
                       Mode, Revoked, explore, shift_kill_check, stress)


def table(k=2, f=2, suspected=()):
    words = LocalWords(LockLayout(k, f).size)
    det = lambda pid: Health.SUSPECTED if pid in suspected else Health.ALIVE
    return words, LockTable(words, k, f, detector=det)


def test_layout():
    lay = LockLayout(3, 2)
    assert list(lay.readers) == [0, 1, 2]
    assert lay.writer == 3 and list(lay.queue) == [4, 5] and lay.outer == 6 and lay.size == 7
    with pytest.raises(ValueError):
        LockLayout(0, 1)


def test_is_member():
    assert L.is_member(5)
    assert not L.is_member(0) and not L.is_member(SEAL) and not L.is_member(5 | PENDING)


def test_readers_share_writer_excludes():
    _, t = table()
    assert t.acquire_read(1) is Grant.GRANTED
    assert t.acquire_read(2) is Grant.GRANTED
    assert t.acquire_write(3) is Grant.QUEUED
    t.release(1)
    t.release(2)
    assert t.acquire_write(3) is Grant.GRANTED
    assert t.acquire_read(4) is Grant.QUEUED
    t.release(3)
    assert t.acquire_read(4) is Grant.GRANTED
    snap = t.snapshot()
    assert snap["queue"] == [0, 0] and snap["outer"] == 0


def test_queue_full_is_busy():
    _, t = table(k=1, f=1)
    assert t.acquire_write(1) is Grant.GRANTED
    assert t.acquire_write(2) is Grant.QUEUED
    assert t.acquire_write(3) is Grant.BUSY


def test_release_without_holding():
    _, t = table()
    with pytest.raises(LockUsageError):
        t.release(9)
    with pytest.raises(ValueError):
        t.acquire_read(0)


def test_evict_suspected_holder():
    words, t = table(suspected={1})
    assert t.acquire_write(1) is Grant.GRANTED
    assert t.acquire_write(2) is Grant.QUEUED
    assert t.evict(1, by=2) is Eviction.EVICTED
    assert t.evict(2, by=3) is Eviction.STILL_ALIVE
    with pytest.raises(Revoked):
        words.view(1).load8(0)
    assert t.acquire(2, Mode.WRITE, timeout=2) == LockLayout(2, 2).writer


def test_blocking_acquire_threads():
    _, t = table(k=2, f=4)
    held, errors = [], []

    def worker(pid):
        try:
            t.acquire(pid, Mode.WRITE, timeout=10)
            held.append(pid)
            assert len([p for p in held if p != -1]) >= 1
            t.release(pid)
        except Exception as exc:
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(p,)) for p in range(1, 6)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert not errors and sorted(held) == [1, 2, 3, 4, 5]


def test_explore_small_exhaustive():
    res = explore(writers=2, readers=1, k=2, f=2)
    assert res.ok, res.violations[:3]
    assert res.states > 1000 and res.completed > 0


@pytest.mark.slow
def test_explore_two_writers_two_readers():
    res = explore(writers=2, readers=2, k=2, f=2)
    assert res.ok, res.violations[:3]


def test_explore_catches_missing_reader_recheck(monkeypatch):
    orig = L.take_gen

    def take_without_recheck(lay, pid, mode):
        if mode is Mode.WRITE:
            return (yield from orig(lay, pid, mode))
        if (yield ("load", lay.writer)):
            return None
        for r in lay.readers:
            if (yield ("cas", r, 0, pid)):
                return r
        return None

    monkeypatch.setattr(L, "take_gen", take_without_recheck)
    res = explore(writers=1, readers=1, k=1, f=1)
    assert any("granted while writer" in str(v) for v in res.violations)


def test_explore_catches_unvalidated_enqueue(monkeypatch):
    def enqueue_blind(lay, pid, j):
        ok = yield ("cas", lay.queue[j], 0, pid)
        return Grant.QUEUED if ok else Grant.BUSY

    monkeypatch.setattr(L, "enqueue_gen", enqueue_blind)
    res = explore(writers=2, readers=1, k=2, f=2, max_states=300_000)
    assert not res.ok


def test_stress_short():
    rep = stress(clients=8, rounds=10, seed=1, timeout=60)
    assert rep.ok, (rep.violations[:3], rep.final_table)
    assert rep.grants > 0


def test_shift_kill_every_step():
    for members in (1, 4, 8):
        rep = shift_kill_check(f=8, members=members)
        assert rep.ok, rep
