import numpy as np
import pytest

from pmtx.kernel import COMPILED, CTreeKernel, PyTreeKernel, TreeKernel
from pmtx.harness.images import random_keys

needs_c = pytest.mark.skipif(not COMPILED, reason="compiled kernel not built")


def test_default_selection():
    assert TreeKernel is (CTreeKernel if COMPILED else PyTreeKernel)


@needs_c
@pytest.mark.parametrize("lookahead", [True, False])
def test_compiled_matches_python(kind, lookahead):
    keys = random_keys(5000, 3)
    py, c = PyTreeKernel(kind, 5002, lookahead), CTreeKernel(kind, 5002, lookahead)
    py.fill(keys)
    c.fill(keys)
    assert py.image() == c.image()
    assert list(py.counters) == list(c.counters) and list(py.events) == list(c.events)
    assert py.depth_stats() == c.depth_stats()
    order = np.random.default_rng(2).permutation(keys)[:3000]
    assert py.remove_many(order) == c.remove_many(order)
    assert py.image() == c.image()
    assert py.max_rebalance == c.max_rebalance
    assert list(py.events) == list(c.events)


@pytest.mark.parametrize("cls", [PyTreeKernel, pytest.param(CTreeKernel, marks=needs_c)])
def test_basic_operations(cls, kind):
    k = cls(kind, 10)
    assert k.fill([5, 3, 8, 3]) == 3
    assert k.lookup(8) == 8 and k.lookup(4) is None
    assert k.keys() == [3, 5, 8]
    assert k.depth_stats() == {"nodes": 3, "mean_depth": 2 / 3, "max_depth": 1}
    assert k.remove_many([3, 3, 9]) == 1
    with pytest.raises(Exception):
        cls(kind, 3).fill([1, 2, 3])


def test_depth_convention():
    k = PyTreeKernel("rbt", 10)
    k.fill([2])
    assert k.depth_stats()["max_depth"] == 0
    assert k.height() == 1
