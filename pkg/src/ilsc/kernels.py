"""Backend selection for the hot loops.

The Cython extension is used when it imports; otherwise (or when the
environment sets ``ILSC_PURE_PYTHON=1``) the numpy fallback is used.
``BACKEND`` names the active one.
"""

import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("ILSC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

steering_matrix = _active.steering_matrix
bg_denoise = _active.bg_denoise
