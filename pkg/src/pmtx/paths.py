"""Address paths and epochs.

Every durable access is described as data: a path of hops through the log and
the node arena, resolved against whatever backend is plugged in (the local
:class:`~pmtx.pmem.PersistenceDomain` or a remote client).  Nothing durable
ever holds an absolute address, only region-relative offsets and node indices.

``run_epoch`` executes up to nine write intents in order, then writes back
exactly the lines they touched and fences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pmtx.pmem import Region

NULL = 0xFFFF_FFFF
NODE_SIZE = 32
MAX_EPOCH = 9


class ResolutionError(Exception):
    """An intermediate hop loaded the NULL index."""


@dataclass(frozen=True)
class Field:
    """A fixed-width field.  ``region`` is None for fields inside a tree node."""

    name: str
    offset: int
    width: int
    signed: bool = False
    region: Optional[Region] = Region.LOG

    @property
    def in_node(self) -> bool:
        return self.region is None


def node_field(name: str, offset: int, width: int, signed: bool = False) -> Field:
    return Field(name, offset, width, signed, None)


def log_field(name: str, offset: int, width: int, signed: bool = False) -> Field:
    return Field(name, offset, width, signed, Region.LOG)


class Path:
    """A sequence of hops.

    The first hop is either a log field, or (with ``index``) a field of a
    literal node.  Each further hop is a node field reached through the node
    index stored at the previous hop.
    """

    __slots__ = ("hops", "index")

    def __init__(self, *hops: Field, index: Optional[int] = None):
        if not hops:
            raise ValueError("empty path")
        if index is None and hops[0].in_node:
            raise ValueError("a path starting at a node field needs a literal index")
        if index is not None and not hops[0].in_node:
            raise ValueError("literal index given for a log field")
        if any(not h.in_node for h in hops[1:]):
            raise ValueError("only the first hop may be a log field")
        self.hops = hops
        self.index = index

    @property
    def width(self) -> int:
        return self.hops[-1].width

    @property
    def signed(self) -> bool:
        return self.hops[-1].signed

    def __repr__(self):
        names = ".".join(h.name for h in self.hops)
        return f"Path({names})" if self.index is None else f"Path(node[{self.index}].{names})"


def at(index: int, field: Field) -> Path:
    """Path to ``field`` of node ``index``."""
    return Path(field, index=index)


Location = Tuple[Region, int, int]


def resolve(path: Path, backend) -> Location:
    hops = path.hops
    if path.index is None:
        first = hops[0]
        region, offset, width = first.region, first.offset, first.width
        rest = hops[1:]
    else:
        if path.index == NULL:
            raise ResolutionError(f"{path!r}: NULL node index")
        region, offset, width = None, None, None
        rest = hops
        idx = path.index
    for i, hop in enumerate(rest):
        if region is not None:
            idx = int.from_bytes(backend.load(region, offset, width), "little")
            if idx == NULL:
                raise ResolutionError(f"{path!r}: NULL link at hop {hop.name}")
        region, offset, width = Region.TREE, idx * NODE_SIZE + hop.offset, hop.width
    return region, offset, width


def read(path: Path, backend) -> int:
    region, offset, width = resolve(path, backend)
    return int.from_bytes(backend.load(region, offset, width), "little", signed=path.signed)


Source = Union[Path, int]


@dataclass
class WriteIntent:
    """Copy ``src`` (a path or an immediate) into ``dest``.

    With ``expected`` set, the write is an 8-byte CAS and only happens when the
    destination still holds ``expected``.
    """

    dest: Path
    src: Source
    expected: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.src, Path) and self.src.width != self.dest.width:
            raise ValueError(f"width mismatch {self.src!r} -> {self.dest!r}")
        if self.expected is not None and self.dest.width != 8:
            raise ValueError("CAS intents must be 8 bytes wide")


class Epoch(list):
    """An ordered batch of at most nine write intents."""

    def __init__(self, intents: Iterable[WriteIntent] = ()):
        super().__init__(intents)
        if len(self) > MAX_EPOCH:
            raise ValueError(f"epoch with {len(self)} intents exceeds {MAX_EPOCH}")


def encode(value: int, width: int, signed: bool = False) -> bytes:
    if not signed and value < 0:
        value &= (1 << (8 * width)) - 1
    return value.to_bytes(width, "little", signed=signed)


def run_epoch(epoch: Sequence[WriteIntent], backend) -> Dict[Region, set]:
    """Apply intents in order, then write back the touched lines and fence."""
    if len(epoch) > MAX_EPOCH:
        raise ValueError(f"epoch with {len(epoch)} intents exceeds {MAX_EPOCH}")
    touched: Dict[Region, set] = {}
    shift = 6
    for intent in epoch:
        region, offset, width = resolve(intent.dest, backend)
        src = intent.src
        value = read(src, backend) if isinstance(src, Path) else src
        if intent.expected is not None:
            if not backend.cas8(region, offset, intent.expected, value):
                continue
        else:
            backend.store(region, offset, encode(value, width, intent.dest.signed))
        lines = touched.setdefault(region, set())
        for idx in range(offset >> shift, ((offset + width - 1) >> shift) + 1):
            lines.add(idx)
    backend.persist_many(touched)
    return touched


class RecordingBackend:
    """Wraps a backend and records every byte range read and written.

    Used to check that a transition's read set and write set are disjoint,
    which is what makes blind re-execution safe.
    """

    def __init__(self, inner):
        self.inner = inner
        self.reads: List[Location] = []
        self.writes: List[Location] = []

    def reset(self) -> None:
        self.reads.clear()
        self.writes.clear()

    def load(self, region, offset, n):
        self.reads.append((region, offset, n))
        return self.inner.load(region, offset, n)

    def store(self, region, offset, data):
        self.writes.append((region, offset, len(data)))
        self.inner.store(region, offset, data)

    def cas8(self, region, offset, expected, new):
        self.writes.append((region, offset, 8))
        # the comparison of a CAS is not a read the transition depends on
        return self.inner.cas8(region, offset, expected, new)

    def persist_many(self, touched):
        self.inner.persist_many(touched)

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def overlaps(self) -> List[Tuple[Location, Location]]:
        out = []
        for r in self.reads:
            for w in self.writes:
                if r[0] == w[0] and r[1] < w[1] + w[2] and w[1] < r[1] + r[2]:
                    out.append((r, w))
        return out
