"""Software agent and client transport over a framed TCP protocol.

Every message is ``[len u32 | type u8 | payload]``, little-endian, where ``len``
counts the type byte plus the payload.  Requests and replies::

    REGISTER(pid u64)                               -> REGISTER_OK(mr_d u64, mr_nv u64)
    GET(key u64, region u8, offset u32, len u32)    -> GET_OK(bytes)
    PUT(key u64, region u8, offset u32, bytes)      -> PUT_OK
    CAS64(key, region, offset, expected u64, new u64) -> CAS64_OK(success u8, old u64)
    FLUSH(key u64, region u8, offset u32, len u32)  -> FLUSH_ACK
    REVOKE(target_pid u64)                          -> REVOKE_OK
    any failure                                     -> ERR(code u8)

Region 0 is the volatile lock table (reachable with the ``mr_d`` key, GET and
CAS64 only); regions 1 and 2 are the persistent log and tree (``mr_nv`` key).
FLUSH writes back every line overlapping the range and fences before the ack.
A revoked pid's keys fail forever, so after ``REVOKE_OK`` it cannot change
anything.  One request is outstanding per connection.
"""

from __future__ import annotations

import collections
import enum
import secrets
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass

from pmtx.lock import LocalWords, LockLayout
from pmtx.pmem import LINE_SIZE, CrashPoint, CrashPolicy, NOTHING_SURVIVES, PersistenceDomain, PmemError, Region

FRAME = struct.Struct("<IB")
MAX_FRAME = 1 << 24
LOCK_REGION = 0


class Msg(enum.IntEnum):
    REGISTER = 1
    REGISTER_OK = 2
    GET = 3
    GET_OK = 4
    PUT = 5
    PUT_OK = 6
    CAS64 = 7
    CAS64_OK = 8
    FLUSH = 9
    FLUSH_ACK = 10
    REVOKE = 11
    REVOKE_OK = 12
    ERR = 13


class ErrCode(enum.IntEnum):
    REVOKED = 1
    RANGE = 2
    PROTOCOL = 3
    DUPLICATE = 4


S_PID = struct.Struct("<Q")
S_KEYS = struct.Struct("<QQ")
S_RANGE = struct.Struct("<QBII")
S_PUT = struct.Struct("<QBI")
S_CAS = struct.Struct("<QBIQQ")
S_CAS_OK = struct.Struct("<BQ")
S_ERR = struct.Struct("<B")


def frame(kind: Msg, payload: bytes = b"") -> bytes:
    return FRAME.pack(1 + len(payload), kind) + payload


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[Msg, bytes]:
    n, kind = FRAME.unpack(_recv_exact(sock, FRAME.size))
    if n < 1 or n > MAX_FRAME:
        raise ConnectionError(f"bad frame length {n}")
    return Msg(kind), _recv_exact(sock, n - 1)


class AgentError(Exception):
    def __init__(self, code: ErrCode):
        super().__init__(code.name)
        self.code = code


class RevokedError(AgentError):
    pass


@dataclass
class RemoteKey:
    key_id: int
    region: str          # "d" for the lock region, "nv" for log and tree
    owner_pid: int
    valid: bool = True


# -- agent --------------------------------------------------------------------------------

class Agent:
    """Serves a persistence domain and a volatile lock table to remote clients."""

    def __init__(self, domain: PersistenceDomain, lock_layout: LockLayout = LockLayout(),
                 host: str = "127.0.0.1", port: int = 0):
        self.domain = domain
        self.lock_layout = lock_layout
        self.lock_words = LocalWords(lock_layout.size)
        self.keys: dict[int, RemoteKey] = {}
        self.pids: dict[int, tuple[int, int]] = {}
        self.revoked: set[int] = set()
        self.mutex = threading.Lock()
        self.dead = False
        self.received: collections.Counter = collections.Counter()
        agent = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                agent._serve_connection(self.request)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.server = Server((host, port), Handler)
        self.address = self.server.server_address
        self._thread = None

    def start(self) -> tuple[str, int]:
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()
        return self.address

    def serve_forever(self) -> None:
        self.server.serve_forever()

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()

    def crash(self, policy: CrashPolicy = NOTHING_SURVIVES) -> dict:
        """Kill the agent: volatile cache lines and the lock table are lost, keys die."""
        with self.mutex:
            self.dead = True
            for k in self.keys.values():
                k.valid = False
            self.lock_words.reset()
        self.stop()
        return self.domain.crash(policy)

    # -- request handling --------------------------------------------------------

    def _serve_connection(self, sock: socket.socket) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        pid = None
        try:
            while True:
                kind, payload = read_frame(sock)
                self.received[kind] += 1
                try:
                    reply, pid = self._dispatch(kind, payload, pid)
                except CrashPoint:
                    self.dead = True
                    return
                sock.sendall(reply)
        except (ConnectionError, OSError, ValueError):
            return

    def _key(self, key_id: int, region: int) -> RemoteKey:
        k = self.keys.get(key_id)
        want = "d" if region == LOCK_REGION else "nv"
        if k is None or not k.valid or k.region != want or k.owner_pid in self.revoked:
            raise AgentError(ErrCode.REVOKED)
        return k

    def _dispatch(self, kind: Msg, payload: bytes, pid):
        try:
            with self.mutex:
                if self.dead:
                    raise AgentError(ErrCode.REVOKED)
                return self._handle(kind, payload, pid), pid if kind != Msg.REGISTER else S_PID.unpack(payload)[0]
        except AgentError as e:
            return frame(Msg.ERR, S_ERR.pack(e.code)), pid
        except (PmemError, struct.error, KeyError, IndexError, ValueError):
            return frame(Msg.ERR, S_ERR.pack(ErrCode.RANGE)), pid

    def _handle(self, kind: Msg, payload: bytes, pid) -> bytes:
        if kind == Msg.REGISTER:
            (new_pid,) = S_PID.unpack(payload)
            if new_pid in self.revoked:
                raise AgentError(ErrCode.REVOKED)
            if new_pid == 0 or new_pid in self.pids or pid is not None:
                raise AgentError(ErrCode.DUPLICATE)
            kd, knv = secrets.randbits(64), secrets.randbits(64)
            self.keys[kd] = RemoteKey(kd, "d", new_pid)
            self.keys[knv] = RemoteKey(knv, "nv", new_pid)
            self.pids[new_pid] = (kd, knv)
            return frame(Msg.REGISTER_OK, S_KEYS.pack(kd, knv))
        if pid is None:
            raise AgentError(ErrCode.PROTOCOL)
        if kind == Msg.REVOKE:
            (target,) = S_PID.unpack(payload)
            self.revoked.add(target)
            for key_id in self.pids.get(target, ()):
                self.keys[key_id].valid = False
            self.lock_words.revoke(target)
            return frame(Msg.REVOKE_OK)
        if kind == Msg.GET:
            key, region, offset, n = S_RANGE.unpack(payload)
            self._key(key, region)
            if region == LOCK_REGION:
                return frame(Msg.GET_OK, self._lock_get(offset, n))
            return frame(Msg.GET_OK, self.domain.load(Region(region), offset, n))
        if kind == Msg.PUT:
            key, region, offset = S_PUT.unpack_from(payload)
            self._key(key, region)
            if region == LOCK_REGION:
                raise AgentError(ErrCode.PROTOCOL)
            self.domain.store(Region(region), offset, payload[S_PUT.size:])
            return frame(Msg.PUT_OK)
        if kind == Msg.CAS64:
            key, region, offset, expected, new = S_CAS.unpack(payload)
            self._key(key, region)
            if region == LOCK_REGION:
                if offset % 8 or offset // 8 >= self.lock_layout.size:
                    raise AgentError(ErrCode.RANGE)
                words = self.lock_words.words
                old = words[offset // 8]
                ok = self.lock_words.cas8(offset // 8, expected, new)
            else:
                old = self.domain.load_int(Region(region), offset, 8)
                ok = self.domain.cas8(Region(region), offset, expected, new)
            return frame(Msg.CAS64_OK, S_CAS_OK.pack(int(ok), old))
        if kind == Msg.FLUSH:
            key, region, offset, n = S_RANGE.unpack(payload)
            self._key(key, region)
            if region == LOCK_REGION:
                raise AgentError(ErrCode.PROTOCOL)
            r = Region(region)
            if offset + n > self.domain.capacity(r):
                raise AgentError(ErrCode.RANGE)
            first, last = offset // LINE_SIZE, (offset + max(n, 1) - 1) // LINE_SIZE
            self.domain.persist(r, range(first, last + 1))
            return frame(Msg.FLUSH_ACK)
        raise AgentError(ErrCode.PROTOCOL)

    def _lock_get(self, offset: int, n: int) -> bytes:
        if offset % 8 or n % 8 or (offset + n) // 8 > self.lock_layout.size:
            raise AgentError(ErrCode.RANGE)
        words = self.lock_words.words
        return b"".join(S_PID.pack(words[i]) for i in range(offset // 8, (offset + n) // 8))


# -- client ----------------------------------------------------------------------------------

class RemoteClient:
    """Synchronous client: one request on the wire at a time."""

    def __init__(self, host: str, port: int, pid: int, timeout: float = 30.0):
        self.pid = pid
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sent: collections.Counter = collections.Counter()
        self.mutex = threading.Lock()
        self.key_d, self.key_nv = S_KEYS.unpack(self._call(Msg.REGISTER, S_PID.pack(pid), Msg.REGISTER_OK))

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _call(self, kind: Msg, payload: bytes, want: Msg) -> bytes:
        with self.mutex:
            self.sent[kind] += 1
            self.sock.sendall(frame(kind, payload))
            got, body = read_frame(self.sock)
        if got == Msg.ERR:
            code = ErrCode(S_ERR.unpack(body)[0])
            raise (RevokedError if code == ErrCode.REVOKED else AgentError)(code)
        if got != want:
            raise AgentError(ErrCode.PROTOCOL)
        return body

    def _keyfor(self, region: int) -> int:
        return self.key_d if region == LOCK_REGION else self.key_nv

    def get(self, region: int, offset: int, n: int) -> bytes:
        return self._call(Msg.GET, S_RANGE.pack(self._keyfor(region), region, offset, n), Msg.GET_OK)

    def put(self, region: int, offset: int, data: bytes) -> None:
        self._call(Msg.PUT, S_PUT.pack(self._keyfor(region), region, offset) + bytes(data), Msg.PUT_OK)

    def cas64(self, region: int, offset: int, expected: int, new: int) -> tuple[bool, int]:
        body = self._call(Msg.CAS64, S_CAS.pack(self._keyfor(region), region, offset, expected, new), Msg.CAS64_OK)
        ok, old = S_CAS_OK.unpack(body)
        return bool(ok), old

    def flush(self, region: int, offset: int, n: int) -> None:
        self._call(Msg.FLUSH, S_RANGE.pack(self._keyfor(region), region, offset, n), Msg.FLUSH_ACK)

    def revoke(self, target_pid: int) -> None:
        self._call(Msg.REVOKE, S_PID.pack(target_pid), Msg.REVOKE_OK)


class RemoteBackend:
    """The address-path backend contract (load/store/cas8/persist_many) over the wire.

    With ``cache_log`` the client keeps a write-through copy of the redo-log lines
    it has seen; it is the only writer of the log, so cached lines never go stale.
    """

    def __init__(self, client: RemoteClient, cache_log: bool = False):
        self.client = client
        self.cache_log = cache_log
        self._log: dict[int, bytearray] = {}
        self.high_water = {Region.LOG: 0, Region.TREE: 0}

    def _log_line(self, idx: int) -> bytearray:
        line = self._log.get(idx)
        if line is None:
            line = self._log[idx] = bytearray(self.client.get(Region.LOG, idx * LINE_SIZE, LINE_SIZE))
        return line

    def load(self, region, offset: int, n: int) -> bytes:
        if self.cache_log and region == Region.LOG:
            out = bytearray()
            pos = offset
            while pos < offset + n:
                idx, o = divmod(pos, LINE_SIZE)
                take = min(offset + n - pos, LINE_SIZE - o)
                out += self._log_line(idx)[o:o + take]
                pos += take
            return bytes(out)
        return self.client.get(int(region), offset, n)

    def _mirror(self, region, offset: int, data: bytes) -> None:
        end = offset + len(data)
        if end > self.high_water[Region(region)]:
            self.high_water[Region(region)] = end
        if not (self.cache_log and region == Region.LOG):
            return
        pos = offset
        while pos < end:
            idx, o = divmod(pos, LINE_SIZE)
            take = min(end - pos, LINE_SIZE - o)
            line = self._log.get(idx)
            if line is not None:
                line[o:o + take] = data[pos - offset:pos - offset + take]
            pos += take

    def store(self, region, offset: int, data: bytes) -> None:
        self.client.put(int(region), offset, data)
        self._mirror(region, offset, data)

    def cas8(self, region, offset: int, expected: int, new: int) -> bool:
        ok, _ = self.client.cas64(int(region), offset, expected, new)
        if ok:
            self._mirror(region, offset, S_PID.pack(new))
        elif self.cache_log and region == Region.LOG:
            self._log.pop(offset // LINE_SIZE, None)
        return ok

    def persist_many(self, touched) -> None:
        for region, lines in touched.items():
            run = []
            for idx in sorted(lines):
                if run and idx != run[-1] + 1:
                    self._flush_run(region, run)
                    run = []
                run.append(idx)
            if run:
                self._flush_run(region, run)

    def _flush_run(self, region, run) -> None:
        self.client.flush(int(region), run[0] * LINE_SIZE, len(run) * LINE_SIZE)


class RemoteWords:
    """Lock-table words (region 0) for :class:`pmtx.lock.LockTable` over the wire."""

    def __init__(self, client: RemoteClient):
        self.client = client

    def load8(self, i: int) -> int:
        return S_PID.unpack(self.client.get(LOCK_REGION, 8 * i, 8))[0]

    def cas8(self, i: int, expected: int, new: int) -> bool:
        return self.client.cas64(LOCK_REGION, 8 * i, expected, new)[0]

    def revoke(self, pid: int) -> None:
        self.client.revoke(pid)
