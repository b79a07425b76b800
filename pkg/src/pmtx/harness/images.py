"""Bridges between the volatile kernels and persistent domains."""

from __future__ import annotations

import struct

import numpy as np

from pmtx.engine import L_ROOT, engine_class, initial_log_image
from pmtx.pmem import PersistenceDomain, Region

KEY_SPACE = 1 << 62


def random_keys(n: int, seed: int) -> np.ndarray:
    """n uniform 62-bit keys from a seeded PCG64 stream (duplicates are rare and harmless)."""
    return np.random.default_rng(seed).integers(1, KEY_SPACE, size=n, dtype=np.uint64)


def domain_from_kernel(kernel) -> PersistenceDomain:
    """A clean persistent domain holding exactly the kernel's tree."""
    log = bytearray(initial_log_image(kernel.kind, kernel.capacity))
    struct.pack_into("<I", log, L_ROOT.offset, kernel.root)
    return PersistenceDomain.from_snapshot({Region.LOG: bytes(log), Region.TREE: kernel.image()})


def engine_from_kernel(kernel, **kwargs):
    """Persistent engine over :func:`domain_from_kernel`; the prefill costs no epochs."""
    return engine_class(kernel.kind)(domain_from_kernel(kernel), kernel.capacity, **kwargs)
