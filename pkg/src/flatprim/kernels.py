"""Kernel backend selection: compiled extension when available, else pure Python.

Set FLATPRIM_FORCE_PY=1 to force the fallback (used by the benchmark and tests).
"""

import os

if os.environ.get("FLATPRIM_FORCE_PY") == "1":
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels_cy as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
arc_integrate = _impl.arc_integrate
arc_trace = _impl.arc_trace
crane_rollout = _impl.crane_rollout
