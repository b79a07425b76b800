"""End-to-end runs through the agent protocol."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

from pmtx.engine import create_tree, new_domain, open_tree
from pmtx.harness.images import random_keys
from pmtx.pmem import LINE_SIZE, CrashPolicy
from pmtx.remote import Agent, AgentError, RemoteBackend, RemoteClient


@dataclass
class RemoteFillReport:
    tree: str
    keys: int
    seed: int
    cache_log: bool
    identical: bool
    requests: dict
    seconds: float

    @property
    def gets(self) -> int:
        return self.requests.get("GET", 0)


def local_image(tree: str, keys) -> dict:
    eng = create_tree(tree, len(keys) + 2)
    for k in keys:
        eng.insert(k, k ^ 0x77)
    return eng._raw.snapshot()


def remote_fill(tree: str, n: int = 1000, seed: int = 1, cache_log: bool = False, reference=None,
                host: str | None = None, port: int | None = None) -> RemoteFillReport:
    """Insert n keys through an agent; compare the agent's durable image with a local run.

    Without host/port a private agent is started on a loopback port.
    """
    keys = [int(k) for k in random_keys(n, seed)]
    if reference is None:
        reference = local_image(tree, keys)
    agent = None
    if host is None:
        agent = Agent(new_domain(tree, n + 2))
        host, port = agent.start()
    t0 = time.perf_counter()
    try:
        with RemoteClient(host, port, pid=1000 + seed) as client:
            eng = open_tree(RemoteBackend(client, cache_log=cache_log))
            for k in keys:
                eng.insert(k, k ^ 0x77)
            requests = {m.name: c for m, c in client.sent.items()}
        identical = agent.domain.snapshot() == reference if agent is not None else False
    finally:
        if agent is not None:
            agent.stop()
    return RemoteFillReport(tree, n, seed, cache_log, identical, requests, round(time.perf_counter() - t0, 3))


class TrackingBackend:
    """Wraps a backend and remembers every line version it wrote and which one each FLUSH_ACK covered."""

    def __init__(self, inner):
        self.inner = inner
        self.high_water = inner.high_water
        self.lines: dict = {}
        self.versions: dict = {}
        self.acked: dict = {}

    def _line(self, region, idx):
        key = (region, idx)
        if key not in self.lines:
            self.lines[key] = bytearray(self.inner.load(region, idx * LINE_SIZE, LINE_SIZE))
            self.versions[key] = [bytes(self.lines[key])]
        return key

    def _record(self, region, offset, n):
        for idx in range(offset // LINE_SIZE, (offset + n - 1) // LINE_SIZE + 1):
            key = self._line(region, idx)
            self.lines[key][:] = self.inner.load(region, idx * LINE_SIZE, LINE_SIZE)
            self.versions[key].append(bytes(self.lines[key]))

    def load(self, region, offset, n):
        return self.inner.load(region, offset, n)

    def store(self, region, offset, data):
        for idx in range(offset // LINE_SIZE, (offset + len(data) - 1) // LINE_SIZE + 1):
            self._line(region, idx)
        self.inner.store(region, offset, data)
        self._record(region, offset, len(data))

    def cas8(self, region, offset, expected, new):
        self._line(region, offset // LINE_SIZE)
        ok = self.inner.cas8(region, offset, expected, new)
        if ok:
            self._record(region, offset, 8)
        return ok

    def persist_many(self, touched):
        self.inner.persist_many(touched)
        for region, lines in touched.items():
            for idx in lines:
                key = self._line(region, idx)
                self.acked[key] = len(self.versions[key]) - 1

    def violations(self, durable: dict) -> list:
        """Lines whose durable bytes predate the last acknowledged version."""
        bad = []
        for key, at in self.acked.items():
            region, idx = key
            got = bytes(durable[region][idx * LINE_SIZE:(idx + 1) * LINE_SIZE])
            if got not in self.versions[key][at:]:
                bad.append(key)
        return bad


@dataclass
class FlushCrashReport:
    trials: int
    crashed: int
    acked_lines_checked: int
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures and self.crashed > 0


def flush_durability(trials: int = 20, tree: str = "rbt", n: int = 60, seed: int = 0) -> FlushCrashReport:
    """Crash the agent at a random primitive during a remote fill.

    Every line whose FLUSH was acknowledged must hold the acknowledged bytes
    (or a later write) in the durable image, and the tree must recover to
    exactly the acknowledged inserts plus at most the one in flight.
    """
    rng = random.Random(seed)
    report = FlushCrashReport(trials, 0, 0)
    for t in range(trials):
        keys = [int(k) for k in random_keys(n, seed * 1000 + t)]
        dom = new_domain(tree, n + 2)
        base = dom.ops
        probe = Agent(new_domain(tree, n + 2))
        host, port = probe.start()
        with RemoteClient(host, port, pid=1) as c:
            eng = open_tree(RemoteBackend(c))
            for k in keys:
                eng.insert(k, k)
        total = probe.domain.ops
        probe.stop()
        dom.crash_at = base + rng.randrange(total)
        agent = Agent(dom)
        host, port = agent.start()
        done = []
        try:
            with RemoteClient(host, port, pid=2) as c:
                track = TrackingBackend(RemoteBackend(c))
                eng = open_tree(track)
                for k in keys:
                    eng.insert(k, k)
                    done.append(k)
        except (OSError, AgentError):
            pass  # the agent died under us
        crashed = len(done) < len(keys)
        report.crashed += crashed
        durable = agent.crash(CrashPolicy(rng.choice((0.0, 0.5, 1.0)), rng_seed=t))
        bad = track.violations(durable)
        report.acked_lines_checked += len(track.acked)
        if bad:
            report.failures.append({"trial": t, "lines": bad[:5]})
            continue
        dom.crash_at = None
        dom.dead = False
        try:
            rec = open_tree(dom)
            rec.recover()
            got = set(rec.keys())
            want = set(done)
            if not (got == want or (crashed and got == want | {keys[len(done)]})):
                raise AssertionError(f"recovered {len(got)} keys, acknowledged {len(want)}")
            rec.validate(sorted(got))
        except Exception as exc:
            report.failures.append({"trial": t, "error": f"{type(exc).__name__}: {exc}"})
    return report
