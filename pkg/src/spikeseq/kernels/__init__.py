"""Hot kernels behind a backend switch (see ``spikeseq._backend``).

Both modules expose the same functions; callers import from here and never
from the backend modules directly, except benchmarks and backend-parity tests.
"""

from spikeseq._backend import BACKEND

if BACKEND == "numba":
    from spikeseq.kernels._numba import (
        gated_scan,
        gated_scan_grad,
        lif_scan,
        lif_scan_grad,
        matmul_fixed,
        quantize_codes,
        smooth_codes,
        surrogate,
    )
else:
    from spikeseq.kernels._numpy import (
        gated_scan,
        gated_scan_grad,
        lif_scan,
        lif_scan_grad,
        matmul_fixed,
        quantize_codes,
        smooth_codes,
        surrogate,
    )

__all__ = [
    "BACKEND",
    "gated_scan",
    "gated_scan_grad",
    "lif_scan",
    "lif_scan_grad",
    "matmul_fixed",
    "quantize_codes",
    "smooth_codes",
    "surrogate",
]
