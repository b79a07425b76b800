"""Epoch accounting for fills and removals.

Depths follow one convention throughout: the root sits at depth 0, the depth of
a tree is its longest root-to-leaf edge count, and the mean insert depth is the
mean depth of the inserted keys in the final tree.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from pmtx.engine import CATEGORIES, EVENTS
from pmtx.harness.images import random_keys
from pmtx.kernel import CTreeKernel, PyTreeKernel, TreeKernel


@dataclass
class MetricsReport:
    tree: str
    operation: str
    keys: int
    seed: int
    lookahead: bool
    backend: str
    operations: int = 0
    epochs: dict = field(default_factory=dict)
    events: dict = field(default_factory=dict)
    total_epochs: int = 0
    epochs_per_op: float = 0.0
    rotations_per_op: float = 0.0
    flips_per_op: float = 0.0
    restructurings_per_op: float = 0.0
    max_rotations_per_remove: int = 0
    mean_insert_depth: float = 0.0
    mean_attach_depth: float = 0.0
    final_depth: int = 0
    nodes: int = 0
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def kernel_class(backend: str = "auto"):
    if backend == "auto":
        return TreeKernel
    if backend == "python":
        return PyTreeKernel
    if backend == "compiled":
        if CTreeKernel is None:
            raise RuntimeError("compiled kernel not available")
        return CTreeKernel
    raise ValueError(f"unknown kernel backend {backend!r}")


def _report(kernel, tree, operation, n, seed, lookahead, ops, seconds) -> MetricsReport:
    counters = list(kernel.counters)
    events = list(kernel.events)
    epochs = {c: int(v) for c, v in zip(CATEGORIES, counters)}
    ev = {e: int(v) for e, v in zip(EVENTS, events)}
    total = sum(epochs.values())
    rot = ev["single_rotations"] + ev["double_rotations"]
    ds = kernel.depth_stats()
    rep = MetricsReport(
        tree=tree, operation=operation, keys=n, seed=seed, lookahead=lookahead,
        backend="compiled" if getattr(kernel, "compiled", False) else "python",
        operations=ops, epochs=epochs, events=ev, total_epochs=total,
        epochs_per_op=total / ops if ops else 0.0,
        rotations_per_op=rot / ops if ops else 0.0,
        flips_per_op=ev["color_flips"] / ops if ops else 0.0,
        restructurings_per_op=(rot + ev["color_flips"]) / ops if ops else 0.0,
        max_rotations_per_remove=int(kernel.max_rebalance),
        mean_insert_depth=float(ds["mean_depth"]),
        final_depth=int(ds["max_depth"]), nodes=int(ds["nodes"]), seconds=seconds,
    )
    if operation == "insert" and kernel.depth_count:
        # attach depth is counted with the root at 1 inside the kernels
        rep.mean_attach_depth = kernel.depth_sum / kernel.depth_count - 1
    return rep


def fill(tree: str, n: int, seed: int = 1, lookahead: bool = True, backend: str = "auto",
         remove: bool = False, keys: np.ndarray | None = None) -> list[MetricsReport]:
    """Insert n random keys (then optionally remove them all in a fresh random order)."""
    cls = kernel_class(backend)
    if keys is None:
        keys = random_keys(n, seed)
    kernel = cls(tree, max(n + 1, 2), lookahead)
    t0 = time.perf_counter()
    kernel.fill(keys)
    out = [_report(kernel, tree, "insert", n, seed, lookahead, n, time.perf_counter() - t0)]
    if remove:
        depth_at_full = out[0]
        order = np.random.default_rng(seed + 1).permutation(keys)
        kernel.reset_counters()
        t0 = time.perf_counter()
        kernel.remove_many(order)
        rep = _report(kernel, tree, "remove", n, seed, lookahead, n, time.perf_counter() - t0)
        rep.mean_insert_depth = depth_at_full.mean_insert_depth
        rep.final_depth = depth_at_full.final_depth
        out.append(rep)
    return out


def lookahead_gain(tree: str, n: int, seed: int = 1, backend: str = "auto") -> dict:
    """Epochs per insert with and without look-ahead on the same key sequence."""
    keys = random_keys(n, seed)
    on = fill(tree, n, seed, True, backend, keys=keys)[0]
    off = fill(tree, n, seed, False, backend, keys=keys)[0]
    return {
        "tree": tree, "keys": n, "seed": seed,
        "epochs_per_insert_lookahead": on.epochs_per_op,
        "epochs_per_insert_plain": off.epochs_per_op,
        "ratio": off.epochs_per_op / on.epochs_per_op,
        "descend_lookahead": on.epochs["descend"] / n,
        "descend_plain": off.epochs["descend"] / n,
    }
