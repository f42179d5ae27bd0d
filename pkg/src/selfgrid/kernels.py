"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``SELFGRID_PURE_PYTHON`` is set to a non-empty value, the numpy fallback is
used. Both produce identical results.
"""

import os

from ._kernels_py import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED  # noqa: F401

BACKEND = "python"
if not os.environ.get("SELFGRID_PURE_PYTHON"):
    try:
        from ._kernels import bounded_simplex, components  # noqa: F401

        BACKEND = "cython"
    except ImportError:
        pass
if BACKEND == "python":
    from ._kernels_py import bounded_simplex, components  # noqa: F401
