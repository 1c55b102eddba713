"""Pick the compiled kernels when importable, else the NumPy fallback.

Set ``QUANTLDP_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("QUANTLDP_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as kernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as kernels
        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
