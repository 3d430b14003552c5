"""Selects the hot-kernel implementation (GRU scans, max pooling) at import time.

The compiled kernel is used when it was built; ``SCENESOUND_BACKEND=python``
forces the numpy fallback.
"""
import os

from . import _kernels_py

try:
    from . import _kernels as _ext
except ImportError:  # extension not built
    _ext = None

_IMPLS = {"python": _kernels_py}
if _ext is not None:
    _IMPLS["cython"] = _ext


def available():
    return sorted(_IMPLS)


def _choose():
    forced = os.environ.get("SCENESOUND_BACKEND", "").strip().lower()
    if forced in ("python", "numpy"):
        return "python"
    if forced == "cython" and _ext is None:
        raise ImportError("SCENESOUND_BACKEND=cython but the compiled extension is not built")
    return "cython" if _ext is not None else "python"


BACKEND = _choose()


def get(name=None):
    """Kernel module: ``gru_scan_forward/backward``, ``maxpool_forward/backward``."""
    name = name or BACKEND
    try:
        return _IMPLS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available()}") from None
