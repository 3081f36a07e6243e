"""Hot numerical kernels with selectable backend.

The numba backend is used when numba imports cleanly, unless the
environment variable ``KDVLAB_NO_NUMBA`` is set to 1/true/yes, in which
case the pure-numpy fallback runs everywhere.  ``BACKEND`` records which
one is active.  Both backends implement the same contracts and are
benchmarked against each other by ``benchmarks/bench_kernels.py``.

Exception: batched stochastic ensembles always use the vectorized numpy
stepper (see kdvlab.stochastic) because FFTs over the realization batch
dominate and numba offers no gain there.
"""

import os

from kdvlab.kernels import numpy_backend

_flag = os.environ.get("KDVLAB_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _flag in {"1", "true", "yes"}

if not NUMBA_DISABLED:
    try:
        from kdvlab.kernels import numba_backend as _impl
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - depends on environment
        _impl = numpy_backend
        BACKEND = "numpy"
else:
    _impl = numpy_backend
    BACKEND = "numpy"

transfer_batch = _impl.transfer_batch
evolve_chunk = _impl.evolve_chunk

__all__ = ["BACKEND", "NUMBA_DISABLED", "transfer_batch", "evolve_chunk",
           "numpy_backend"]
