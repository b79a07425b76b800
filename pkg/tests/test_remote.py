import socket
import threading

import pytest

from pmtx.engine import create_tree, new_domain, open_tree
from pmtx.harness.remote_fill import TrackingBackend, flush_durability, remote_fill
from pmtx.lock import Grant, LockLayout, LockTable
from pmtx.pmem import NOTHING_SURVIVES, Region
from pmtx.remote import (FRAME, Agent, AgentError, ErrCode, Msg, RemoteBackend, RemoteClient, RemoteWords,
                         RevokedError, frame, read_frame)


@pytest.fixture
def agent():
    ag = Agent(new_domain("rbt", 64), LockLayout(2, 2))
    ag.start()
    yield ag
    ag.stop()


def connect(agent, pid):
    return RemoteClient(*agent.address, pid=pid)


def test_frame_golden_bytes():
    assert frame(Msg.REGISTER, (7).to_bytes(8, "little")) == bytes.fromhex("09000000" "01" "0700000000000000")
    assert frame(Msg.FLUSH_ACK) == bytes.fromhex("01000000" "0a")
    assert frame(Msg.ERR, b"\x01") == bytes.fromhex("02000000" "0d" "01")
    assert FRAME.size == 5


def test_read_frame_roundtrip():
    a, b = socket.socketpair()
    with a, b:
        a.sendall(frame(Msg.GET_OK, b"xyz"))
        assert read_frame(b) == (Msg.GET_OK, b"xyz")


def test_get_put_flush(agent):
    with connect(agent, 5) as c:
        c.put(Region.TREE, 100, b"hello")
        assert c.get(Region.TREE, 100, 5) == b"hello"
        assert agent.domain.durable(Region.TREE)[100:105] != b"hello"
        c.flush(Region.TREE, 100, 5)
        assert agent.domain.durable(Region.TREE)[100:105] == b"hello"


def test_errors(agent):
    with connect(agent, 5) as c:
        with pytest.raises(AgentError) as e:
            c.get(Region.TREE, 10**9, 8)
        assert e.value.code == ErrCode.RANGE
        with pytest.raises(AgentError) as e:
            c.put(0, 0, b"x" * 8)
        assert e.value.code == ErrCode.PROTOCOL
        with pytest.raises(AgentError):
            c.flush(0, 0, 8)
    with connect(agent, 6):
        with pytest.raises(AgentError) as e:
            connect(agent, 6)
        assert e.value.code == ErrCode.DUPLICATE


def test_revoke_fences_the_target(agent):
    with connect(agent, 5) as victim, connect(agent, 6) as other:
        victim.put(Region.TREE, 0, b"a")
        other.revoke(5)
        with pytest.raises(RevokedError):
            victim.put(Region.TREE, 0, b"b")
        with pytest.raises(RevokedError):
            victim.cas64(0, 0, 0, 5)
        assert other.get(Region.TREE, 0, 1) == b"a"


def test_cas_race_single_winner(agent):
    results = []
    barrier = threading.Barrier(2)

    def racer(pid):
        with connect(agent, pid) as c:
            barrier.wait()
            results.append((pid, c.cas64(0, 16, 0, pid)))

    threads = [threading.Thread(target=racer, args=(p,)) for p in (11, 12)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wins = [pid for pid, (ok, _) in results if ok]
    assert len(wins) == 1
    loser = [old for pid, (ok, old) in results if not ok][0]
    assert loser == wins[0]


def test_lock_over_the_wire(agent):
    with connect(agent, 21) as a, connect(agent, 22) as b:
        ta = LockTable(RemoteWords(a), 2, 2)
        tb = LockTable(RemoteWords(b), 2, 2)
        assert ta.acquire_write(21) is Grant.GRANTED
        assert tb.acquire_read(22) is Grant.QUEUED
        ta.release(21)
        assert tb.acquire_read(22) is Grant.GRANTED
        assert agent.lock_words.words[0] == 22


def test_agent_crash_loses_lock_table(agent):
    with connect(agent, 21) as a:
        LockTable(RemoteWords(a), 2, 2).acquire_write(21)
    agent.crash(NOTHING_SURVIVES)
    assert not any(agent.lock_words.words)


@pytest.mark.parametrize("tree", ["rbt", "avl"])
def test_remote_fill_equivalence_small(tree):
    plain = remote_fill(tree, 150, seed=4)
    cached = remote_fill(tree, 150, seed=4, cache_log=True)
    assert plain.identical and cached.identical
    assert cached.gets < plain.gets
    assert cached.requests["PUT"] == plain.requests["PUT"]


def test_remote_recover_then_continue():
    dom = new_domain("avl", 64)
    ag = Agent(dom)
    ag.start()
    try:
        with RemoteClient(*ag.address, pid=1) as c:
            eng = open_tree(RemoteBackend(c, cache_log=True))
            for k in range(1, 30):
                eng.insert(k, k)
            eng.validate(list(range(1, 30)))
    finally:
        ag.stop()
    ref = create_tree("avl", 64)
    for k in range(1, 30):
        ref.insert(k, k)
    assert dom.snapshot() == ref._raw.snapshot()


def test_flush_ack_durability_under_agent_crash():
    rep = flush_durability(trials=6, n=40, seed=3)
    assert rep.ok, rep.failures
    assert rep.acked_lines_checked > 0


def test_tracker_detects_lost_acknowledged_lines(monkeypatch):
    dom = new_domain("rbt", 16)
    ag = Agent(dom)
    ag.start()
    monkeypatch.setattr(dom, "persist", lambda region, lines: None)
    try:
        with RemoteClient(*ag.address, pid=1) as c:
            track = TrackingBackend(RemoteBackend(c))
            eng = open_tree(track)
            eng.insert(5, 5)
    finally:
        ag.stop()
    durable = dom.crash(NOTHING_SURVIVES)
    assert track.violations(durable)
