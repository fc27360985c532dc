"""Hot loops, compiled when the extension is built.

Set ``HIERFLOW_PURE_PYTHON=1`` to force the NumPy fallback.
"""
import os

from . import _fallback

if os.environ.get("HIERFLOW_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "compiled" if _impl is not _fallback else "python"
linear_implicit_flow = _impl.linear_implicit_flow
dd_iterate = _impl.dd_iterate

__all__ = ["BACKEND", "linear_implicit_flow", "dd_iterate"]
