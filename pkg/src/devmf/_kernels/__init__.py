"""Backend selection for the weighted least-squares hot loop.

The compiled Cython kernel is preferred; set ``DEVMF_FORCE_NUMPY=1`` to force
the pure-NumPy fallback (used by the benchmark and available on installs
without a C toolchain).
"""

from __future__ import annotations

import os

from . import _wls_numpy

KernelSolveError = _wls_numpy.KernelSolveError

if os.environ.get("DEVMF_FORCE_NUMPY", "") not in ("", "0"):
    _impl = _wls_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _wls_cython as _impl

        BACKEND = "cython"
        KernelSolveError = _impl.KernelSolveError
    except ImportError:
        _impl = _wls_numpy
        BACKEND = "numpy"


def batched_wls(design, responses, weights, jitter, cond_limit=1e12):
    """Dispatch to the active backend; see the backend modules for the contract."""
    import numpy as np

    design = np.ascontiguousarray(design, dtype=np.float64)
    responses = np.ascontiguousarray(responses, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    return _impl.batched_wls(design, responses, weights, float(jitter), float(cond_limit))


def backend_name() -> str:
    return BACKEND
