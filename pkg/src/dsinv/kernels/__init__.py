"""Implicit-solver kernel selection.

The compiled extension is preferred when it imports cleanly; the scipy
implementation is the fallback. ``DSINV_KERNEL=python`` or
``DSINV_KERNEL=compiled`` forces a backend (the latter raises if the
extension is unavailable). Both implementations share one contract and
are benchmarked against each other in ``benchmarks/bench_kernels.py``.
"""

import importlib
import os

import numpy as np

from . import _python

_requested = os.environ.get("DSINV_KERNEL", "").strip().lower()
if _requested not in ("", "compiled", "python"):
    raise ImportError(f"DSINV_KERNEL must be 'compiled' or 'python', got {_requested!r}")

_core = None
if _requested != "python":
    try:
        _core = importlib.import_module("dsinv.kernels._core")
    except ImportError:
        _core = None
if _requested == "compiled" and _core is None:
    raise ImportError("DSINV_KERNEL=compiled but the compiled kernel is not built")

if _core is not None:
    BACKEND = "compiled"
    _impl = _core.run_pressure_steps
else:
    BACKEND = "python"
    _impl = _python.run_pressure_steps


def run_pressure_steps(nx, ny, tx, ty, accum, sources, steps_per_segment, p_init):
    """Dispatch to the selected backend with normalised array dtypes."""
    tx = np.ascontiguousarray(tx, dtype=np.float64).reshape(ny, max(nx - 1, 0))
    ty = np.ascontiguousarray(ty, dtype=np.float64).reshape(max(ny - 1, 0), nx)
    sources = np.ascontiguousarray(sources, dtype=np.float64)
    steps_per_segment = np.ascontiguousarray(steps_per_segment, dtype=np.int64)
    p_init = np.ascontiguousarray(p_init, dtype=np.float64)
    return _impl(nx, ny, tx, ty, float(accum), sources, steps_per_segment, p_init)


def available_backends():
    """Name -> implementation map of the importable backends."""
    backends = {"python": _python.run_pressure_steps}
    if _core is not None:
        backends["compiled"] = _core.run_pressure_steps
    return backends
