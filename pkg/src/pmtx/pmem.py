"""Emulated byte-addressable persistence domain.

A region is a durable byte image (optionally mirrored to a file) plus a
volatile overlay of dirty 64-byte cache lines.  Stores only ever touch the
overlay.  ``writeback`` schedules a line and ``fence`` commits every scheduled
line to the durable image, one whole line at a time.  ``crash`` throws the
overlay away, letting each dirty line survive with a configurable
probability, which brackets what real cache evictions could have done.

File format of a region::

    magic "PMTXTREE" | version u32 LE | capacity u64 LE | payload bytes
"""

from __future__ import annotations

import enum
import os
import random
import struct
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional

LINE_SIZE = 64
MAGIC = b"PMTXTREE"
VERSION = 1
HEADER = struct.Struct("<8sIQ")

_U64 = struct.Struct("<Q")


class Region(enum.IntEnum):
    LOG = 1
    TREE = 2


class PmemError(Exception):
    pass


class PmemRangeError(PmemError, IndexError):
    pass


class PmemAlignmentError(PmemError, ValueError):
    pass


class PmemOpenError(PmemError):
    pass


class CrashPoint(Exception):
    """Raised by the instruction hook: the process dies before primitive ``index``."""

    def __init__(self, index: int):
        super().__init__(f"crash injected before primitive #{index}")
        self.index = index


@dataclass(frozen=True)
class CrashPolicy:
    """How dirty lines fare at a crash.

    ``eviction_probability`` is the chance that a dirty (or written back but
    not yet fenced) line reached the durable media anyway.  ``survivors``
    overrides the coin flip with an explicit ``(region, line) -> bool``.
    """

    eviction_probability: float = 0.0
    rng_seed: int = 0
    survivors: Optional[Callable[[Region, int], bool]] = None

    def __post_init__(self):
        if not 0.0 <= self.eviction_probability <= 1.0:
            raise ValueError("eviction_probability must be in [0, 1]")


NOTHING_SURVIVES = CrashPolicy(0.0)
EVERYTHING_SURVIVES = CrashPolicy(1.0)


def write_image(path: str, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, len(payload)))
        fh.write(payload)


def read_image(path: str) -> bytearray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise PmemOpenError(f"{path}: truncated header")
    magic, version, capacity = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise PmemOpenError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise PmemOpenError(f"{path}: unsupported version {version}")
    if capacity % LINE_SIZE or len(raw) - HEADER.size != capacity:
        raise PmemOpenError(f"{path}: capacity {capacity} does not match file size {len(raw)}")
    return bytearray(raw[HEADER.size:])


class PersistenceDomain:
    """Durable images for the log and tree regions plus the volatile cache overlay.

    The domain is also the local backend for address paths: ``load``,
    ``store``, ``cas8`` and ``persist`` are the whole contract.

    Crash injection: every primitive (store, writeback, fence, cas8) bumps
    ``ops``.  When ``crash_at`` is set, primitive number ``crash_at`` is not
    executed and :class:`CrashPoint` is raised instead; the domain then stays
    dead until :meth:`crash` is called.
    """

    def __init__(self, images: Dict[Region, bytearray], paths: Optional[Dict[Region, str]] = None,
                 line_size: int = LINE_SIZE):
        self.line_size = line_size
        self._shift = line_size.bit_length() - 1
        if 1 << self._shift != line_size:
            raise ValueError("line size must be a power of two")
        for region, img in images.items():
            if len(img) % line_size:
                raise PmemError(f"{region.name} image length {len(img)} is not a multiple of {line_size}")
        self._images = {Region(r): img for r, img in images.items()}
        self._paths = dict(paths or {})
        self._files = {}
        for region, path in self._paths.items():
            self._files[region] = os.open(path, os.O_RDWR)
        self._dirty: Dict[Region, Dict[int, bytearray]] = {r: {} for r in self._images}
        self._pending: Dict[Region, set] = {r: set() for r in self._images}
        self.ops = 0
        self.crash_at: Optional[int] = None
        self.dead = False
        self.stats = {"store": 0, "writeback": 0, "fence": 0, "cas8": 0, "crash": 0}
        self.high_water = {r: 0 for r in self._images}
        self.trace: Optional[list] = None

    # -- construction -----------------------------------------------------

    @classmethod
    def create(cls, capacities: Dict[Region, int], paths: Optional[Dict[Region, str]] = None,
               init: Optional[Dict[Region, bytes]] = None) -> "PersistenceDomain":
        images = {}
        for region, cap in capacities.items():
            if cap % LINE_SIZE:
                raise PmemError(f"capacity {cap} is not a multiple of {LINE_SIZE}")
            img = bytearray(cap)
            if init and region in init:
                data = init[region]
                img[:len(data)] = data
            images[Region(region)] = img
            if paths:
                write_image(paths[region], bytes(img))
        return cls(images, paths)

    @classmethod
    def open(cls, paths: Dict[Region, str]) -> "PersistenceDomain":
        images = {Region(r): read_image(p) for r, p in paths.items()}
        return cls(images, paths)

    @classmethod
    def from_snapshot(cls, snapshot: Dict[Region, bytes]) -> "PersistenceDomain":
        return cls({r: bytearray(b) for r, b in snapshot.items()})

    def close(self) -> None:
        for fd in self._files.values():
            os.close(fd)
        self._files.clear()

    # -- instrumentation --------------------------------------------------

    def _tick(self) -> None:
        if self.dead:
            raise CrashPoint(self.ops)
        if self.crash_at is not None and self.ops >= self.crash_at:
            self.dead = True
            raise CrashPoint(self.ops)
        self.ops += 1

    def _check(self, region: Region, offset: int, n: int) -> bytearray:
        img = self._images[region]
        if offset < 0 or n < 0 or offset + n > len(img):
            raise PmemRangeError(f"{Region(region).name}[{offset}:{offset + n}] outside capacity {len(img)}")
        return img

    def capacity(self, region: Region) -> int:
        return len(self._images[region])

    # -- loads --------------------------------------------------------------

    def load(self, region: Region, offset: int, n: int) -> bytes:
        img = self._check(region, offset, n)
        dirty = self._dirty[region]
        shift = self._shift
        first = offset >> shift
        last = (offset + n - 1) >> shift if n else first
        if first == last:
            line = dirty.get(first)
            if line is None:
                return bytes(img[offset:offset + n])
            o = offset - (first << shift)
            return bytes(line[o:o + n])
        out = bytearray(img[offset:offset + n])
        for idx in range(first, last + 1):
            line = dirty.get(idx)
            if line is None:
                continue
            base = idx << shift
            lo = max(offset, base)
            hi = min(offset + n, base + self.line_size)
            out[lo - offset:hi - offset] = line[lo - base:hi - base]
        return bytes(out)

    def load_int(self, region: Region, offset: int, width: int, signed: bool = False) -> int:
        return int.from_bytes(self.load(region, offset, width), "little", signed=signed)

    def durable(self, region: Region) -> bytes:
        return bytes(self._images[region])

    def cached(self, region: Region) -> bytes:
        """Current view (cache over durable) of a whole region."""
        return self.load(region, 0, len(self._images[region]))

    def snapshot(self) -> Dict[Region, bytes]:
        return {r: bytes(img) for r, img in self._images.items()}

    def dirty_lines(self, region: Region) -> set:
        return set(self._dirty[region])

    # -- stores -------------------------------------------------------------

    def _line(self, region: Region, idx: int) -> bytearray:
        dirty = self._dirty[region]
        line = dirty.get(idx)
        if line is None:
            base = idx << self._shift
            line = bytearray(self._images[region][base:base + self.line_size])
            dirty[idx] = line
        return line

    def store(self, region: Region, offset: int, data: bytes) -> None:
        n = len(data)
        self._check(region, offset, n)
        self._tick()
        self.stats["store"] += 1
        shift = self._shift
        pos = 0
        while pos < n:
            idx = (offset + pos) >> shift
            base = idx << shift
            o = offset + pos - base
            take = min(n - pos, self.line_size - o)
            self._line(region, idx)[o:o + take] = data[pos:pos + take]
            pos += take
        end = offset + n
        if end > self.high_water[region]:
            self.high_water[region] = end
        if self.trace is not None:
            self.trace.append(("store", region, offset, bytes(data)))

    def writeback(self, region: Region, line: int) -> None:
        if line < 0 or (line << self._shift) >= len(self._images[region]):
            raise PmemRangeError(f"line {line} outside {Region(region).name}")
        self._tick()
        self.stats["writeback"] += 1
        if line in self._dirty[region]:
            self._pending[region].add(line)
        if self.trace is not None:
            self.trace.append(("writeback", region, line))

    def fence(self) -> None:
        self._tick()
        self.stats["fence"] += 1
        for region, pending in self._pending.items():
            if not pending:
                continue
            dirty = self._dirty[region]
            for idx in sorted(pending):
                line = dirty.pop(idx, None)
                if line is not None:
                    self._commit(region, idx, line)
            pending.clear()
        if self.trace is not None:
            self.trace.append(("fence",))

    def cas8(self, region: Region, offset: int, expected: int, new: int) -> bool:
        if offset % 8:
            raise PmemAlignmentError(f"cas8 at unaligned offset {offset}")
        self._check(region, offset, 8)
        self._tick()
        self.stats["cas8"] += 1
        current = _U64.unpack(self.load(region, offset, 8))[0]
        if current != expected:
            return False
        shift = self._shift
        idx = offset >> shift
        o = offset - (idx << shift)
        self._line(region, idx)[o:o + 8] = _U64.pack(new)
        if offset + 8 > self.high_water[region]:
            self.high_water[region] = offset + 8
        if self.trace is not None:
            self.trace.append(("cas8", region, offset, expected, new))
        return True

    def persist(self, region: Region, lines: Iterable[int]) -> None:
        """Write back ``lines`` of ``region`` and fence."""
        for idx in lines:
            self.writeback(region, idx)
        self.fence()

    def persist_many(self, touched: Dict[Region, Iterable[int]]) -> None:
        for region, lines in touched.items():
            for idx in sorted(lines):
                self.writeback(region, idx)
        self.fence()

    def _commit(self, region: Region, idx: int, line: bytes) -> None:
        base = idx << self._shift
        self._images[region][base:base + self.line_size] = line
        fd = self._files.get(region)
        if fd is not None:
            os.pwrite(fd, bytes(line), HEADER.size + base)

    # -- crash --------------------------------------------------------------

    def crash(self, policy: CrashPolicy = NOTHING_SURVIVES) -> Dict[Region, bytes]:
        """Lose the volatile overlay; each dirty line survives per ``policy``.

        Returns the resulting durable images.  The domain is usable again
        afterwards, exactly as if the files had been re-opened.
        """
        rng = random.Random(policy.rng_seed)
        p = policy.eviction_probability
        for region in sorted(self._dirty):
            dirty = self._dirty[region]
            for idx in sorted(dirty):
                if policy.survivors is not None:
                    keep = policy.survivors(region, idx)
                else:
                    keep = rng.random() < p
                if keep:
                    self._commit(region, idx, dirty[idx])
            dirty.clear()
            self._pending[region].clear()
        self.dead = False
        self.crash_at = None
        self.stats["crash"] += 1
        if self.trace is not None:
            self.trace.append(("crash",))
        return self.snapshot()
