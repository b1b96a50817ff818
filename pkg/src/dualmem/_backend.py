"""Selects the compiled kernels when available, else the numpy fallback.

Set ``DUALMEM_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("DUALMEM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

rls_rank1_update = _impl.rls_rank1_update
eval_products = _impl.eval_products
