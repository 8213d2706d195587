"""Solver backend selection: compiled extension if available, else pure Python.

Set SOFTGEN_PURE=1 to force the Python fallback (used by the benchmark and
the backend-parity tests).  Both backends produce bit-identical states.
"""

import os

if os.environ.get("SOFTGEN_PURE"):
    from . import _core_py as core
else:
    try:
        from . import _core as core  # type: ignore[attr-defined]
    except ImportError:
        from . import _core_py as core

BACKEND = core.BACKEND
pbd_substep = core.pbd_substep
max_violation_ratio = core.max_violation_ratio
