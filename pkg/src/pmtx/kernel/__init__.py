"""Volatile tree kernels for large fills and epoch statistics.

``TreeKernel`` is the compiled core when the extension was built, otherwise
the pure-Python fallback.  Set ``PMTX_PURE_PYTHON=1`` to force the fallback.
"""

import os

from pmtx.kernel import _pykernel
from pmtx.kernel._pykernel import (ALREADY_PRESENT, INSERTED, NODE_DTYPE, NOT_FOUND, REMOVED,
                                   TreeKernel as PyTreeKernel)

CTreeKernel = None
if not os.environ.get("PMTX_PURE_PYTHON"):
    try:
        from pmtx.kernel._ckernel import TreeKernel as CTreeKernel
    except ImportError:
        CTreeKernel = None

TreeKernel = CTreeKernel if CTreeKernel is not None else PyTreeKernel
COMPILED = CTreeKernel is not None

__all__ = ["ALREADY_PRESENT", "COMPILED", "CTreeKernel", "INSERTED", "NODE_DTYPE", "NOT_FOUND",
           "PyTreeKernel", "REMOVED", "TreeKernel"]
