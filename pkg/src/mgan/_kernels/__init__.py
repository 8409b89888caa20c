"""Pixel kernels with a compiled fast path.

The Cython extension ``_ccl`` is used when it was built; otherwise the
pure-Python module ``_pure`` is used. Setting ``MGAN_PURE_KERNELS=1`` forces
the fallback. ``BACKEND`` names the active implementation.
"""

import os

from . import _pure

if os.environ.get("MGAN_PURE_KERNELS", "") not in ("", "0"):
    _impl = _pure
else:
    try:
        from . import _ccl as _impl
    except ImportError:  # extension not built
        _impl = _pure

BACKEND = "cython" if _impl is not _pure else "python"

label8 = _impl.label8
local_maxima = _impl.local_maxima
grow_from_seeds = _impl.grow_from_seeds
overlap_counts = _impl.overlap_counts


def backends():
    """Return ``{name: module}`` for every importable implementation."""
    found = {"python": _pure}
    try:
        from . import _ccl
    except ImportError:
        pass
    else:
        found["cython"] = _ccl
    return found


__all__ = ["BACKEND", "backends", "grow_from_seeds", "label8", "local_maxima",
           "overlap_counts"]
