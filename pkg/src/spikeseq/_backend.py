"""Kernel backend selection.

``SPIKESEQ_BACKEND=numba`` (default when numba imports) routes the hot
time-scan kernels through ``@njit`` loops; ``SPIKESEQ_BACKEND=numpy`` forces
the vectorised pure-numpy path. The choice is read once at import time.
"""

from __future__ import annotations

import os

_requested = os.environ.get("SPIKESEQ_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"SPIKESEQ_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba ships with the dev image
    HAVE_NUMBA = False

BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"
