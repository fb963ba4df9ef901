"""Backend selection for the RK4 time loop.

The compiled extension ``ioncavity._rk4`` is used when it was built; otherwise
the NumPy/SciPy fallback runs. Setting ``IONCAVITY_PURE_PYTHON=1`` forces the
fallback.
"""
from __future__ import annotations

import os

from . import _rk4_py

BACKEND = "python"
rk4_python = _rk4_py.rk4_csr
rk4_compiled = None

if os.environ.get("IONCAVITY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._rk4 import rk4_csr as rk4_compiled  # type: ignore[no-redef]
    except ImportError:
        rk4_compiled = None

if rk4_compiled is not None:
    rk4_csr = rk4_compiled
    BACKEND = "cython"
else:
    rk4_csr = rk4_python
