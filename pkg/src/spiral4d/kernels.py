"""Kernel backend selection.

The compiled Cython extension is used when present; the numpy fallback is
selected otherwise, or when SPIRAL4D_FORCE_NUMPY is set in the environment.
Both expose the same four functions; benchmarks/bench_kernels.py compares
them.
"""

import os

from . import _kernels_np

if os.environ.get("SPIRAL4D_FORCE_NUMPY"):
    _backend = _kernels_np
else:
    try:
        from . import _core as _backend
    except ImportError:
        _backend = _kernels_np

BACKEND_NAME = _backend.BACKEND_NAME

gather_rows = _backend.gather_rows
scatter_add_rows = _backend.scatter_add_rows
spmm = _backend.spmm
spmm_adjoint = _backend.spmm_adjoint

numpy_backend = _kernels_np
