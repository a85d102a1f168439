"""Backend selection for the path simulator.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``ROLLSTIR_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy implementation is used. Both expose
``simulate`` and ``philox_block`` with the same signatures.
"""
from __future__ import annotations

import os

from . import _pykernels

_force_python = os.environ.get("ROLLSTIR_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_python:
        raise ImportError("pure-Python backend requested")
    from . import _kernels as _backend
    BACKEND = "cython"
except ImportError:
    _backend = _pykernels
    BACKEND = "python"

simulate = _backend.simulate
philox_block = _backend.philox_block
STOP_TOP = _pykernels.STOP_TOP
STOP_BOTTOM = _pykernels.STOP_BOTTOM
STOP_IN = _pykernels.STOP_IN
STOP_OUT = _pykernels.STOP_OUT
STOP_CENSORED = _pykernels.STOP_CENSORED


def backends() -> dict:
    """All importable backends by name (for benchmarks and cross-checks)."""
    out = {"python": _pykernels}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out
