"""Kernel backend selection.

Set ``COLLISION_CML_BACKEND=numpy`` to force the pure-numpy kernels; the
default is ``numba`` whenever it imports.  The choice is made once at import.
"""
from __future__ import annotations

import logging
import os

from . import kernels_numpy

log = logging.getLogger(__name__)

_requested = os.environ.get("COLLISION_CML_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"COLLISION_CML_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import kernels_numba as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a hard dependency here
        log.warning("numba unavailable, falling back to numpy kernels")
        _impl = kernels_numpy
        BACKEND = "numpy"
else:
    _impl = kernels_numpy
    BACKEND = "numpy"

map_eval = _impl.map_eval
lattice_chunk = _impl.lattice_chunk
coupling_once = _impl.coupling_once
coupling_rows = _impl.coupling_rows
corr_accumulate = _impl.corr_accumulate


def set_threads(n: int | None) -> None:
    if not n or BACKEND != "numba":
        return
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
