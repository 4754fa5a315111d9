"""Event-kernel backend selection.

The compiled kernel is used when the extension is importable; set
``LATENTLOB_BACKEND=python`` to force the pure-Python fallback.
"""
import os

from ._pykernel import (EVENT_NAMES, META_LIMIT, META_MARKET, META_NONE, RECORD_FIELDS,
                        STOP_EVENTS, STOP_META, STOP_TIME, STOP_TRADES, PyKernel, new_records)

try:
    from ._ckernel import CKernel
except ImportError:  # extension not built
    CKernel = None

__all__ = ["Kernel", "CKernel", "PyKernel", "get_kernel_class", "BACKEND", "new_records",
           "RECORD_FIELDS", "EVENT_NAMES", "STOP_TRADES", "STOP_TIME", "STOP_META", "STOP_EVENTS",
           "META_NONE", "META_MARKET", "META_LIMIT"]


def get_kernel_class(backend=None):
    backend = backend or os.environ.get("LATENTLOB_BACKEND", "auto")
    if backend == "python":
        return PyKernel
    if backend in ("cython", "auto"):
        if CKernel is not None:
            return CKernel
        if backend == "cython":
            raise ImportError("compiled kernel not available; build with `pip install -e .`")
        return PyKernel
    raise ValueError(f"unknown backend {backend!r}")


Kernel = get_kernel_class()
BACKEND = Kernel.backend
