"""Select the compiled core when it is importable, else the pure-Python one.

Set ``MARKETSTATES_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pycore

if os.environ.get("MARKETSTATES_PURE_PYTHON", "").strip() not in ("", "0"):
    core = _pycore
else:
    try:
        from . import _ccore as core
    except ImportError:  # pragma: no cover - depends on the build
        core = _pycore

BACKEND = "cython" if core is not _pycore else "python"

__all__ = ["BACKEND", "core"]
