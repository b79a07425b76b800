"""Pure-Python kernel versus the compiled one on the same key stream."""

from __future__ import annotations

import time

from pmtx.harness.images import random_keys
from pmtx.kernel import CTreeKernel, PyTreeKernel


def _timed_fill(cls, tree, keys, repeat):
    best = float("inf")
    kernel = None
    for _ in range(repeat):
        kernel = cls(tree, len(keys) + 1)
        t0 = time.perf_counter()
        kernel.fill(keys)
        best = min(best, time.perf_counter() - t0)
    return kernel, best


def bench(trees=("rbt", "avl"), n: int = 100_000, seed: int = 1, repeat: int = 3) -> list[dict]:
    """Best-of-``repeat`` fill time per backend; also checks both produce the same image and counts."""
    keys = random_keys(n, seed)
    rows = []
    for tree in trees:
        py, t_py = _timed_fill(PyTreeKernel, tree, keys, repeat)
        row = {"tree": tree, "keys": n, "python_s": round(t_py, 4), "python_ops_per_s": round(n / t_py)}
        if CTreeKernel is not None:
            c, t_c = _timed_fill(CTreeKernel, tree, keys, repeat)
            row.update({
                "compiled_s": round(t_c, 4), "compiled_ops_per_s": round(n / t_c),
                "speedup": round(t_py / t_c, 1),
                "identical": py.image() == c.image() and list(py.counters) == list(c.counters)
                and list(py.events) == list(c.events),
            })
        rows.append(row)
    return rows
