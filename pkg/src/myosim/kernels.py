"""Kernel backend selection.

The compiled extension is used when importable; set ``MYOSIM_PURE=1`` to
force the numpy fallback (handy for comparing the two).
"""
import os

from . import _kernels_py

_compiled = None
if not os.environ.get("MYOSIM_PURE"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

if _compiled is not None:
    BACKEND = "compiled"
    _impl = _compiled
else:
    BACKEND = "python"
    _impl = _kernels_py

hh_advance = _impl.hh_advance
hh_rhs = _impl.hh_rhs
thomas = _impl.thomas
thomas_batch = _impl.thomas_batch


def available_backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["compiled"] = _ckernels
    return out
