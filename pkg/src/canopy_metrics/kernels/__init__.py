"""Hot raster kernels, with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the environment variable
``CANOPY_METRICS_BACKEND``:

* ``auto`` (default) - use numba when importable, else fall back to numpy
* ``numba``          - require numba, fail loudly if unavailable
* ``numpy``          - force the pure-numpy fallback

Both backends implement the same signatures; integer outputs are identical
and float outputs agree to rounding order (see tests/test_kernels.py).
"""

import os

_choice = os.environ.get("CANOPY_METRICS_BACKEND", "auto").lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"CANOPY_METRICS_BACKEND must be auto, numba or numpy, got {_choice!r}"
    )

if _choice == "numpy":
    from . import numpy_backend as _backend

    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _backend

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        from . import numpy_backend as _backend

        BACKEND = "numpy"

splat_gaussian_max = _backend.splat_gaussian_max
window_peak_mask = _backend.window_peak_mask
zncc_best = _backend.zncc_best
point_in_polygon_mask = _backend.point_in_polygon_mask
majority_filter_labels = _backend.majority_filter_labels
nearest_candidate = _backend.nearest_candidate

__all__ = [
    "BACKEND",
    "splat_gaussian_max",
    "window_peak_mask",
    "zncc_best",
    "point_in_polygon_mask",
    "majority_filter_labels",
    "nearest_candidate",
]
