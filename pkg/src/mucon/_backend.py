"""Kernel backend selection.

The hot inner loops (mask sampling, mask gradient, length DP) exist twice:
numba-compiled loops and vectorized pure numpy. The active implementation
is picked once at import time from the ``MUCON_BACKEND`` environment
variable:

    MUCON_BACKEND=numba   require numba (ImportError if unavailable)
    MUCON_BACKEND=numpy   force the pure-numpy fallback
    MUCON_BACKEND=auto    numba when importable, numpy otherwise (default)

``benchmarks/backend_bench.py`` compares the two paths head to head.
"""

from __future__ import annotations

import os

_VALID = ("auto", "numba", "numpy")
_requested = os.environ.get("MUCON_BACKEND", "auto").strip().lower()
if _requested not in _VALID:
    raise ValueError(
        f"MUCON_BACKEND={_requested!r} not understood; expected one of {_VALID}"
    )

if _requested == "numpy":
    from . import _kernels_numpy as _impl

    _active = "numpy"
else:
    try:
        from . import _kernels_numba as _impl

        _active = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import _kernels_numpy as _impl

        _active = "numpy"


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _active


bilinear_masks = _impl.bilinear_masks
bilinear_mask_grad = _impl.bilinear_mask_grad
dp_best_lengths = _impl.dp_best_lengths
