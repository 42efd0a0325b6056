"""Kernel selection: compiled extension when available, pure Python otherwise.

Set MILEPOST_PURE_PYTHON=1 to force the fallback (useful for benchmarking
and for debugging kernel parity).
"""

import os

if os.environ.get("MILEPOST_PURE_PYTHON"):
    from . import pure as _impl
else:
    try:
        from . import _speedup as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import pure as _impl

find_matches = _impl.find_matches
BACKEND_NAME = _impl.BACKEND_NAME


def available_backends():
    names = ["pure"]
    try:
        from . import _speedup  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names
